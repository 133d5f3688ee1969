"""Exact linear algebra for labeled multi-wire pure states.

A state lives on an ordered list of wires (one optional dim-n ancilla plus
dim-2 qubit wires). Amplitudes are stored flat in C order with the first
wire slowest-varying; that convention is fixed here and shared by every
operation and kernel. All values are immutable after construction and all
operations are pure functions, so they are safe to use from many threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kernels import apply_matrix, controlled_permute, cross_gram

NORM_ATOL = 1e-9
HERM_ATOL = 1e-9
UNITARY_ATOL = 1e-9
EIG_FLOOR = -1e-9
BRANCH_PRUNE_TOL = 1e-12

ROLE_ANCILLA = "ancilla"
ROLE_QUBIT = "qubit"
ROLE_COMMITTED = "committed"


class InvalidStateError(ValueError):
    """An operator failed a physicality check (Hermiticity, positivity, trace)."""


@dataclass(frozen=True)
class Wire:
    """One tensor factor: a name, a dimension, a role tag and an owner tag.

    `index` is the original preparation position when the wire carries a
    definite one; it is None while the content is branch-dependent.
    """

    name: str
    dim: int
    role: str = ROLE_QUBIT
    index: int | None = None
    owner: str = "A"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"wire {self.name!r}: dim must be positive")
        if self.role not in (ROLE_ANCILLA, ROLE_QUBIT, ROLE_COMMITTED):
            raise ValueError(f"wire {self.name!r}: unknown role {self.role!r}")
        if self.owner not in ("A", "B"):
            raise ValueError(f"wire {self.name!r}: unknown owner {self.owner!r}")


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state over labeled wires."""

    amps: np.ndarray
    wires: tuple[Wire, ...]

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amps, dtype=np.complex128).reshape(-1)
        object.__setattr__(self, "amps", amps)
        total = 1
        for w in self.wires:
            total *= w.dim
        if amps.shape[0] != total:
            raise ValueError(
                f"amplitude length {amps.shape[0]} != product of wire dims {total}"
            )
        names = [w.name for w in self.wires]
        if len(set(names)) != len(names):
            raise ValueError("duplicate wire name")
        nrm = float(np.linalg.norm(amps))
        if abs(nrm - 1.0) > NORM_ATOL:
            raise ValueError(f"state norm {nrm} not within {NORM_ATOL} of 1")
        amps.flags.writeable = False

    @classmethod
    def _relabeled(cls, amps: np.ndarray, wires: tuple[Wire, ...]) -> "StateVector":
        """Construction path for label-only changes of an already valid state.

        The amplitude buffer is reused untouched, so no invariant can break
        and revalidation is skipped.
        """
        obj = object.__new__(cls)
        object.__setattr__(obj, "amps", amps)
        object.__setattr__(obj, "wires", wires)
        return obj

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(w.dim for w in self.wires)

    def axis(self, name: str) -> int:
        for i, w in enumerate(self.wires):
            if w.name == name:
                return i
        raise KeyError(f"no wire named {name!r}")

    def wire(self, name: str) -> Wire:
        return self.wires[self.axis(name)]

    def wire_names(self) -> tuple[str, ...]:
        return tuple(w.name for w in self.wires)

    def owned_by(self, owner: str) -> tuple[str, ...]:
        return tuple(w.name for w in self.wires if w.owner == owner)

    def with_wires(self, wires: Iterable[Wire]) -> "StateVector":
        wires = tuple(wires)
        if tuple(w.dim for w in wires) != self.dims:
            raise ValueError("with_wires cannot change dimensions")
        return StateVector._relabeled(self.amps, wires)

    def relabel(self, name: str, **changes) -> "StateVector":
        """Return a copy with one wire's tags replaced (never its dim)."""
        if "dim" in changes:
            raise ValueError("wire dimension is fixed")
        ax = self.axis(name)
        wires = list(self.wires)
        wires[ax] = replace(wires[ax], **changes)
        return StateVector._relabeled(self.amps, tuple(wires))


@dataclass(frozen=True)
class UnitaryOp:
    """A dim x dim unitary, validated at construction."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        object.__setattr__(self, "matrix", mat)
        if mat.shape != (self.dim, self.dim):
            raise ValueError(f"matrix shape {mat.shape} != ({self.dim}, {self.dim})")
        dev = mat.conj().T @ mat - np.eye(self.dim)
        # the Frobenius norm bounds the operator norm from above
        if np.linalg.norm(dev) > UNITARY_ATOL:
            raise ValueError("matrix is not unitary within tolerance")
        mat.flags.writeable = False

    def dagger(self) -> "UnitaryOp":
        return UnitaryOp(self.dim, self.matrix.conj().T)


@dataclass(frozen=True)
class DensityOperator:
    """A dim x dim density matrix; `wire_dims` records the kept tensor factors."""

    dim: int
    matrix: np.ndarray
    wire_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        object.__setattr__(self, "matrix", mat)
        if mat.shape != (self.dim, self.dim):
            raise ValueError(f"matrix shape {mat.shape} != ({self.dim}, {self.dim})")
        if self.wire_dims is not None and math.prod(self.wire_dims) != self.dim:
            raise ValueError("wire_dims do not multiply to dim")
        if np.max(np.abs(mat - mat.conj().T)) > HERM_ATOL:
            raise InvalidStateError("matrix is not Hermitian within tolerance")
        evals = np.linalg.eigvalsh((mat + mat.conj().T) / 2)
        if evals.min() < EIG_FLOOR:
            raise InvalidStateError(f"negative eigenvalue {evals.min()}")
        tr = float(np.real(np.trace(mat)))
        if abs(tr - 1.0) > NORM_ATOL:
            raise InvalidStateError(f"trace {tr} not within {NORM_ATOL} of 1")
        mat.flags.writeable = False


@dataclass(frozen=True)
class MeasurementBranch:
    """One outcome of a projective measurement: index, probability, post-state."""

    outcome_index: int
    probability: float
    post_state: StateVector


# --- preparation ------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


_BB84 = {
    j: _frozen(
        np.array(
            [math.cos((j - 1) * math.pi / 4), math.sin((j - 1) * math.pi / 4)],
            dtype=np.complex128,
        )
    )
    for j in (1, 2, 3, 4)
}


def bb84_amplitudes(bb84_id: int) -> np.ndarray:
    """Real amplitude pair of a BB84 state at Hilbert angle (id-1)*pi/4."""
    try:
        return _BB84[bb84_id]
    except KeyError:
        raise ValueError(f"BB84 id must be 1..4, got {bb84_id}") from None


def bb84_state(
    bb84_id: int, name: str = "q0", index: int | None = None, owner: str = "A"
) -> StateVector:
    """Single-qubit state |j> for j in 1..4 (|0>, |+>, |1>, -|->)."""
    wire = Wire(name=name, dim=2, role=ROLE_QUBIT, index=index, owner=owner)
    return StateVector(bb84_amplitudes(bb84_id), (wire,))


_ROTATION_CACHE: dict[float, "UnitaryOp"] = {}


def rotation_gate(theta: float) -> UnitaryOp:
    """Real rotation [[cos, -sin], [sin, cos]] in the {|0>, |1>} plane."""
    if not isinstance(theta, (int, float)) or not math.isfinite(theta):
        raise ValueError("theta must be finite")
    theta = float(theta)
    cached = _ROTATION_CACHE.get(theta)
    if cached is None:
        c, s = math.cos(theta), math.sin(theta)
        cached = UnitaryOp(2, np.array([[c, -s], [s, c]], dtype=np.complex128))
        if len(_ROTATION_CACHE) < 256:
            _ROTATION_CACHE[theta] = cached
    return cached


def tensor(parts: Sequence[StateVector]) -> StateVector:
    """Tensor product; wire order is the concatenation of the parts' wires."""
    if not parts:
        raise ValueError("tensor of an empty list")
    amps = parts[0].amps
    for p in parts[1:]:
        amps = np.kron(amps, p.amps)
    wires: list[Wire] = []
    for p in parts:
        wires.extend(p.wires)
    return StateVector(amps, tuple(wires))


# --- evolution --------------------------------------------------------------


def apply_on_wires(
    state: StateVector, u: UnitaryOp | np.ndarray, wires: Sequence[str]
) -> StateVector:
    """Apply a unitary to the ordered wire group, leaving the rest untouched."""
    mat = u.matrix if isinstance(u, UnitaryOp) else np.asarray(u, dtype=np.complex128)
    axes = tuple(state.axis(w) for w in wires)
    group_dim = math.prod(state.dims[a] for a in axes)
    if mat.shape != (group_dim, group_dim):
        raise ValueError(
            f"operator dim {mat.shape[0]} != selected wire-group dim {group_dim}"
        )
    out = apply_matrix(state.amps, state.dims, axes, mat)
    return StateVector(out, state.wires)


def controlled_shift(
    state: StateVector, ancilla_wire: str, qubit_wires: Sequence[str]
) -> StateVector:
    """Apply sum_l |l><l| (x) P^l where P cycles position i to i+1 mod n."""
    n = len(qubit_wires)
    anc = state.wire(ancilla_wire)
    if anc.dim != n:
        raise ValueError(f"ancilla dim {anc.dim} != number of qubit wires {n}")
    perms = np.array(
        [[(i + l) % n for i in range(n)] for l in range(n)], dtype=np.int64
    )
    return _routed(state, ancilla_wire, qubit_wires, perms)


def controlled_route(
    state: StateVector,
    ancilla_wire: str,
    perm_per_branch: Mapping[int, Mapping[str, str]],
) -> StateVector:
    """Apply a wire permutation conditioned on the ancilla value.

    Each branch entry maps source wire name to destination wire name; every
    branch must permute the same wire set, and every ancilla value needs an
    entry (use the identity map for branches of amplitude zero).
    """
    anc = state.wire(ancilla_wire)
    missing = set(range(anc.dim)) - set(perm_per_branch)
    if missing:
        raise ValueError(f"missing branch entries {sorted(missing)}")
    group = sorted(perm_per_branch[0], key=state.axis)
    pos = {w: i for i, w in enumerate(group)}
    perms = np.empty((anc.dim, len(group)), dtype=np.int64)
    for l in range(anc.dim):
        entry = perm_per_branch[l]
        if set(entry) != set(group) or set(entry.values()) != set(group):
            raise ValueError(f"branch {l} is not a bijection on the routed wires")
        for src, dst in entry.items():
            perms[l, pos[src]] = pos[dst]
    return _routed(state, ancilla_wire, group, perms)


def _routed(state, ancilla_wire, qubit_wires, perms):
    ctrl = state.axis(ancilla_wire)
    targets = tuple(state.axis(w) for w in qubit_wires)
    out = controlled_permute(state.amps, state.dims, ctrl, targets, perms)
    return StateVector(out, state.wires)


# --- reduction and measurement ----------------------------------------------


def partial_trace(
    state: StateVector | DensityOperator, keep_wires: Sequence[str] | Sequence[int]
) -> DensityOperator:
    """Reduced density operator on the kept wires (in the order given).

    For a DensityOperator input the wires are addressed by factor position
    and `wire_dims` must be present.
    """
    if len(keep_wires) == 0:
        raise ValueError("keep_wires must be non-empty")
    if isinstance(state, StateVector):
        axes = tuple(state.axis(w) for w in keep_wires)
        mat = cross_gram(state.amps, state.amps, state.dims, axes)
        kept = tuple(state.dims[a] for a in axes)
    else:
        if state.wire_dims is None:
            raise ValueError("DensityOperator input needs wire_dims")
        dims = state.wire_dims
        axes = tuple(int(a) for a in keep_wires)
        if any(a < 0 or a >= len(dims) for a in axes):
            raise KeyError("factor index out of range")
        w = len(dims)
        nd = state.matrix.reshape(dims + dims)
        drop = [a for a in range(w) if a not in axes]
        for k, a in enumerate(sorted(drop, reverse=True)):
            nd = np.trace(nd, axis1=a, axis2=a + w - k)
        # remaining axes are in ascending order; reorder to the requested order
        asc = sorted(axes)
        order = [asc.index(a) for a in axes]
        half = len(axes)
        nd = np.transpose(nd, [order[i] for i in range(half)] + [half + order[i] for i in range(half)])
        kept = tuple(dims[a] for a in axes)
        mat = nd.reshape(math.prod(kept), math.prod(kept))
    # symmetrize before validation; roundoff in the Gram sum is below 1e-12
    mat = (mat + mat.conj().T) / 2
    return DensityOperator(mat.shape[0], mat, wire_dims=kept)


def ancilla_subset_projector(n: int, subset: Iterable[int]) -> np.ndarray:
    """Diagonal projector sum_{l in subset} |l><l| on a dim-n register."""
    proj = np.zeros((n, n), dtype=np.complex128)
    for l in subset:
        if not 0 <= l < n:
            raise ValueError(f"index {l} outside 0..{n - 1}")
        proj[l, l] = 1.0
    return proj


def luders_measure(
    state: StateVector, projectors: Sequence[np.ndarray], wire: str
) -> list[MeasurementBranch]:
    """Projective measurement on one wire with renormalized post-states.

    The projectors must be Hermitian, pairwise orthogonal and resolve the
    identity on the wire. Branches of probability below 1e-12 are omitted.
    """
    d = state.wire(wire).dim
    mats = [np.asarray(p, dtype=np.complex128) for p in projectors]
    total = np.zeros((d, d), dtype=np.complex128)
    for i, p in enumerate(mats):
        if p.shape != (d, d):
            raise ValueError(f"projector {i} has shape {p.shape}, wire dim is {d}")
        if np.max(np.abs(p - p.conj().T)) > HERM_ATOL:
            raise ValueError(f"projector {i} is not Hermitian")
        if np.max(np.abs(p @ p - p)) > NORM_ATOL:
            raise ValueError(f"projector {i} is not idempotent")
        total += p
        for q in mats[:i]:
            if np.max(np.abs(p @ q)) > NORM_ATOL:
                raise ValueError("projectors are not pairwise orthogonal")
    if np.max(np.abs(total - np.eye(d))) > NORM_ATOL:
        raise ValueError("projectors do not resolve the identity")
    axis = (state.axis(wire),)
    branches = []
    for i, p in enumerate(mats):
        diag = np.diagonal(p)
        if np.max(np.abs(p - np.diag(diag))) < 1e-15:
            # diagonal projector: mask the wire's index directly
            shape = [1] * len(state.dims)
            shape[axis[0]] = d
            out = (state.amps.reshape(state.dims) * diag.reshape(shape)).reshape(-1)
        else:
            out = apply_matrix(state.amps, state.dims, axis, p)
        prob = float(np.vdot(out, out).real)
        if prob <= BRANCH_PRUNE_TOL:
            continue
        post = StateVector(out / math.sqrt(prob), state.wires)
        branches.append(MeasurementBranch(i, prob, post))
    return branches


# --- metrics ----------------------------------------------------------------


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Half the sum of absolute eigenvalues of rho - sigma."""
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch {rho.dim} != {sigma.dim}")
    diff = rho.matrix - sigma.matrix
    evals = np.linalg.eigvalsh((diff + diff.conj().T) / 2)
    return float(0.5 * np.abs(evals).sum())


def fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Square-root fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho))."""
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch {rho.dim} != {sigma.dim}")
    return float(np.clip(_fidelity_raw(rho.matrix, sigma.matrix), 0.0, 1.0))


def _fidelity_raw(rho: np.ndarray, sigma: np.ndarray) -> float:
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    if w.min() < 100 * EIG_FLOOR:
        raise InvalidStateError(f"input has eigenvalue {w.min()}, not PSD")
    sqrt_rho = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    mid = sqrt_rho @ sigma @ sqrt_rho
    w2 = np.linalg.eigvalsh((mid + mid.conj().T) / 2)
    return float(np.sqrt(np.clip(w2, 0.0, None)).sum())


def cheat_operator(
    psi0: StateVector, psi1: StateVector, a_wires: Sequence[str]
) -> tuple[float, UnitaryOp]:
    """Best local unitary on `a_wires` taking psi0 toward psi1.

    Returns the trace norm of the cross operator X = Tr_B |psi0><psi1| and
    the polar unitary achieving overlap <psi1| (U (x) I) |psi0> equal to it.
    The achievable switching probability is the square of the trace norm,
    which also equals the Uhlmann fidelity of the two reductions on the
    complement wires. Singular directions of X below machine noise get an
    arbitrary unitary completion; any completion attains the same overlap.
    """
    if psi0.dims != psi1.dims or psi0.wire_names() != psi1.wire_names():
        raise ValueError("states do not share a wire structure")
    axes = tuple(psi0.axis(w) for w in a_wires)
    x = cross_gram(psi0.amps, psi1.amps, psi0.dims, axes)
    u_svd, svals, vh = np.linalg.svd(x)
    u_opt = (u_svd @ vh).conj().T
    dim = x.shape[0]
    return float(svals.sum()), UnitaryOp(dim, u_opt)
