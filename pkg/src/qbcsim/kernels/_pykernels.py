"""Pure-NumPy implementations of the amplitude kernels.

These are the reference implementations; the Cython module `_ckernels`
mirrors their signatures exactly. All three kernels treat the amplitude
vector as a C-ordered tensor over `dims` (first axis slowest) and never
mutate their inputs.
"""

from __future__ import annotations

import numpy as np


def apply_matrix(
    amps: np.ndarray,
    dims: tuple[int, ...],
    axes: tuple[int, ...],
    mat: np.ndarray,
) -> np.ndarray:
    """Apply `mat` to the ordered axis group `axes` of the state tensor.

    `mat` must be square with dimension equal to the product of the selected
    axis dims (axes[0] is the slowest-varying index of the matrix basis).
    """
    k = len(axes)
    nd = amps.reshape(dims)
    moved = np.moveaxis(nd, axes, range(k))
    group_shape = moved.shape[:k]
    flat = moved.reshape(mat.shape[0], -1)
    out = mat @ flat
    out = np.moveaxis(out.reshape(group_shape + moved.shape[k:]), range(k), axes)
    return np.ascontiguousarray(out).reshape(-1)


def controlled_permute(
    amps: np.ndarray,
    dims: tuple[int, ...],
    ctrl_axis: int,
    target_axes: tuple[int, ...],
    perms: np.ndarray,
) -> np.ndarray:
    """Permute the contents of `target_axes` conditioned on the control axis.

    For control value l, the content of target_axes[i] moves to
    target_axes[perms[l, i]]. All target axes must share one dimension.
    """
    nd = amps.reshape(dims)
    out = np.empty_like(nd)
    n_ctrl = dims[ctrl_axis]
    idx = [slice(None)] * len(dims)
    for l in range(n_ctrl):
        idx[ctrl_axis] = l
        sl = tuple(idx)
        spec = list(range(len(dims)))
        for i, t in enumerate(target_axes):
            # out axis t_{perm(i)} draws from in axis t_i
            spec[target_axes[perms[l, i]]] = t
        # drop the control axis from the transpose spec of the slice
        slice_spec = [a if a < ctrl_axis else a - 1 for a in spec if a != ctrl_axis]
        out[sl] = np.transpose(nd[sl], slice_spec)
    return out.reshape(-1)


def cross_gram(
    amps0: np.ndarray,
    amps1: np.ndarray,
    dims: tuple[int, ...],
    keep_axes: tuple[int, ...],
) -> np.ndarray:
    """Cross Gram matrix X[a, a'] = sum_b psi0[a, b] * conj(psi1[a', b]).

    `a` ranges over the ordered `keep_axes` group, `b` over the remaining
    axes. With amps0 == amps1 this is the reduced density matrix of a pure
    state on the kept axes.
    """
    k = len(keep_axes)
    d_keep = 1
    for a in keep_axes:
        d_keep *= dims[a]
    m0 = np.moveaxis(amps0.reshape(dims), keep_axes, range(k)).reshape(d_keep, -1)
    if amps1 is amps0:
        m1 = m0
    else:
        m1 = np.moveaxis(amps1.reshape(dims), keep_axes, range(k)).reshape(d_keep, -1)
    return m0 @ m1.conj().T
