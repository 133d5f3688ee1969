# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled amplitude kernels (hot inner loops of the simulator).

Signatures mirror `_pykernels`; see that module for the semantics. The
kernels work on flat C-ordered complex128 tensors and use precomputed
element offsets so each loop body is plain strided arithmetic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.complex128_t cplx
ctypedef Py_ssize_t isize


cdef void _strides(tuple dims, isize* s):
    cdef isize i, n = len(dims)
    cdef isize acc = 1
    for i in range(n - 1, -1, -1):
        s[i] = acc
        acc *= <isize> dims[i]


cdef cnp.ndarray _group_offsets(tuple dims, tuple axes, isize* strides):
    """Element offsets of every index combination of the axis group.

    axes[0] is the slowest-varying component of the group index.
    """
    cdef isize k = len(axes)
    cdef isize total = 1, i, m, rem, comp
    for i in range(k):
        total *= <isize> dims[<isize> axes[i]]
    out = np.empty(total, dtype=np.intp)
    cdef isize[::1] ov = out
    cdef isize[64] radix
    cdef isize[64] strd
    for i in range(k):
        radix[i] = <isize> dims[<isize> axes[i]]
        strd[i] = strides[<isize> axes[i]]
    for m in range(total):
        rem = m
        ov[m] = 0
        for i in range(k - 1, -1, -1):
            comp = rem % radix[i]
            rem //= radix[i]
            ov[m] += comp * strd[i]
    return out


def apply_matrix(amps, dims, axes, mat):
    cdef cnp.ndarray a = np.ascontiguousarray(amps, dtype=np.complex128)
    cdef cnp.ndarray m = np.ascontiguousarray(mat, dtype=np.complex128)
    cdef isize w = len(dims)
    if w > 64:
        raise ValueError("kernel supports at most 64 wires")
    cdef isize[64] strides
    _strides(tuple(dims), strides)
    axes = tuple(axes)
    rest = tuple(i for i in range(w) if i not in set(axes))
    cdef isize[::1] sel_off = _group_offsets(tuple(dims), axes, strides)
    cdef isize[::1] rest_off = _group_offsets(tuple(dims), rest, strides)
    cdef isize M = sel_off.shape[0], R = rest_off.shape[0]
    if m.shape[0] != M or m.shape[1] != M:
        raise ValueError("matrix dimension does not match selected axes")
    cdef cnp.ndarray[cplx, ndim=1] out = np.empty(a.shape[0], dtype=np.complex128)
    cdef cnp.ndarray[cplx, ndim=1] buf = np.empty(M, dtype=np.complex128)
    cdef const cplx[::1] av = a
    cdef cplx[::1] ov = out, bv = buf
    cdef const cplx[:, ::1] mv = m
    cdef isize r, i, j, base
    cdef cplx acc
    with nogil:
        for r in range(R):
            base = rest_off[r]
            for j in range(M):
                bv[j] = av[base + sel_off[j]]
            for i in range(M):
                acc = 0
                for j in range(M):
                    acc = acc + mv[i, j] * bv[j]
                ov[base + sel_off[i]] = acc
    return out


def controlled_permute(amps, dims, ctrl_axis, target_axes, perms):
    cdef cnp.ndarray a = np.ascontiguousarray(amps, dtype=np.complex128)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] p = np.ascontiguousarray(perms, dtype=np.int64)
    cdef isize w = len(dims)
    if w > 64:
        raise ValueError("kernel supports at most 64 wires")
    cdef isize[64] strides
    _strides(tuple(dims), strides)
    target_axes = tuple(target_axes)
    cdef isize k = len(target_axes)
    cdef isize n_ctrl = <isize> dims[<isize> ctrl_axis]
    if p.shape[0] != n_ctrl or p.shape[1] != k:
        raise ValueError("perms must have shape (ctrl_dim, n_target_axes)")
    d0 = dims[target_axes[0]]
    for t in target_axes:
        if dims[t] != d0:
            raise ValueError("permuted axes must share one dimension")
    rest = tuple(
        i for i in range(w) if i != ctrl_axis and i not in set(target_axes)
    )
    cdef isize[::1] tgt_in = _group_offsets(tuple(dims), target_axes, strides)
    cdef isize[::1] rest_off = _group_offsets(tuple(dims), rest, strides)
    cdef isize M = tgt_in.shape[0], R = rest_off.shape[0]
    # destination offsets per control value: component i lands on axis perm[l, i]
    cdef cnp.ndarray tgt_out_arr = np.empty((n_ctrl, M), dtype=np.intp)
    cdef isize[:, ::1] tgt_out = tgt_out_arr
    cdef isize[64] radix
    cdef isize[64] dstr
    cdef isize l, i, mm, rem, comp, base, s_ctrl = strides[<isize> ctrl_axis]
    for i in range(k):
        radix[i] = <isize> dims[<isize> target_axes[i]]
    for l in range(n_ctrl):
        for i in range(k):
            dstr[i] = strides[<isize> target_axes[<isize> p[l, i]]]
        for mm in range(M):
            rem = mm
            tgt_out[l, mm] = 0
            for i in range(k - 1, -1, -1):
                comp = rem % radix[i]
                rem //= radix[i]
                tgt_out[l, mm] += comp * dstr[i]
    cdef cnp.ndarray[cplx, ndim=1] out = np.empty(a.shape[0], dtype=np.complex128)
    cdef const cplx[::1] av = a
    cdef cplx[::1] ov = out
    cdef isize r
    with nogil:
        for l in range(n_ctrl):
            for r in range(R):
                base = l * s_ctrl + rest_off[r]
                for mm in range(M):
                    ov[base + tgt_out[l, mm]] = av[base + tgt_in[mm]]
    return out


def cross_gram(amps0, amps1, dims, keep_axes):
    cdef cnp.ndarray a0 = np.ascontiguousarray(amps0, dtype=np.complex128)
    cdef cnp.ndarray a1 = np.ascontiguousarray(amps1, dtype=np.complex128)
    cdef isize w = len(dims)
    if w > 64:
        raise ValueError("kernel supports at most 64 wires")
    cdef isize[64] strides
    _strides(tuple(dims), strides)
    keep_axes = tuple(keep_axes)
    rest = tuple(i for i in range(w) if i not in set(keep_axes))
    cdef isize[::1] keep_off = _group_offsets(tuple(dims), keep_axes, strides)
    cdef isize[::1] rest_off = _group_offsets(tuple(dims), rest, strides)
    cdef isize K = keep_off.shape[0], B = rest_off.shape[0]
    # gather into contiguous (K, B) blocks, then accumulate the Gram product
    cdef cnp.ndarray[cplx, ndim=2] g0 = np.empty((K, B), dtype=np.complex128)
    cdef cnp.ndarray[cplx, ndim=2] g1 = np.empty((K, B), dtype=np.complex128)
    cdef cnp.ndarray[cplx, ndim=2] x = np.zeros((K, K), dtype=np.complex128)
    cdef const cplx[::1] a0v = a0
    cdef const cplx[::1] a1v = a1
    cdef cplx[:, ::1] g0v = g0, g1v = g1, xv = x
    cdef isize i, j, b
    cdef cplx acc
    with nogil:
        for i in range(K):
            for b in range(B):
                g0v[i, b] = a0v[keep_off[i] + rest_off[b]]
                g1v[i, b] = a1v[keep_off[i] + rest_off[b]]
        for i in range(K):
            for j in range(K):
                acc = 0
                for b in range(B):
                    acc = acc + g0v[i, b] * g1v[j, b].conjugate()
                xv[i, j] = acc
    return x
