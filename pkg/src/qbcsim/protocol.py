"""Two-party commit/check/open sessions with explicit wire ownership.

The session walks the phases prepare -> commit -> challenge -> answer ->
verify-returned -> open -> verify-open for one n-qubit segment, recording
every wire transfer, classical message, measurement and verification in a
transcript. The committing party is either honest (random pick, one
rotation) or runs the entangled commit that superposes all cyclic
arrangements of the prepared qubits against a dim-n ancilla.

Index conventions: qubit wire ``q{p}`` is the p-th position of the
arrangement; in ancilla branch l, position p carries the original
preparation index (p - l) mod n, so the committed slot q0 carries
c(l) = (-l) mod n.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import qcore
from .qcore import (
    ROLE_ANCILLA,
    ROLE_COMMITTED,
    ROLE_QUBIT,
    StateVector,
    UnitaryOp,
    Wire,
    ancilla_subset_projector,
    apply_on_wires,
    bb84_amplitudes,
    bb84_state,
    cheat_operator,
    controlled_route,
    controlled_shift,
    luders_measure,
    rotation_gate,
    tensor,
)

PROB_ATOL = 1e-9

CLAIM_IN = "committed-in-s"
CLAIM_OUT = "committed-not-in-s"


class ProtocolOrderError(RuntimeError):
    """A phase method was called out of protocol order."""


@dataclass(frozen=True)
class ProtocolParams:
    """Session configuration; see the CLI for the matching flags."""

    n: int
    m: int = 1
    lam: float = 0.5
    theta: float = math.pi / 16
    alice_mode: str = "honest"  # "honest" | "epr"
    accounting: str = "ensemble"  # "ensemble" | "game"
    penalty: float = 0.0
    verify_mode: str = "exact"  # "exact" | "sampled"
    checking: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0.0 < self.theta < math.pi / 4:
            raise ValueError("theta must lie in (0, pi/4)")
        if self.checking:
            if not 0.0 < self.lam < 1.0:
                raise ValueError("lambda must lie in (0, 1)")
            if not 1 <= self.check_size <= self.n - 1:
                raise ValueError(
                    f"round(lambda*n) = {self.check_size} must lie in 1..{self.n - 1}"
                )
        if self.alice_mode not in ("honest", "epr"):
            raise ValueError(f"unknown alice_mode {self.alice_mode!r}")
        if self.accounting not in ("ensemble", "game"):
            raise ValueError(f"unknown accounting {self.accounting!r}")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if self.verify_mode not in ("exact", "sampled"):
            raise ValueError(f"unknown verify_mode {self.verify_mode!r}")

    @property
    def check_size(self) -> int:
        return round(self.lam * self.n)


@dataclass(frozen=True)
class BB84Record:
    """B's secret preparation data: one BB84 id (1..4) per position."""

    j_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.j_ids:
            raise ValueError("empty record")
        if any(j not in (1, 2, 3, 4) for j in self.j_ids):
            raise ValueError("BB84 ids must be in 1..4")

    def __len__(self) -> int:
        return len(self.j_ids)


@dataclass(frozen=True)
class ChallengeRecord:
    """B's requested check set S and the claim-dependent effective set."""

    n: int
    requested: tuple[int, ...]
    claim: str | None = None

    def __post_init__(self):
        if any(not 0 <= i < self.n for i in self.requested):
            raise ValueError("requested index out of range")
        if tuple(sorted(set(self.requested))) != self.requested:
            raise ValueError("requested set must be sorted and duplicate-free")
        if self.claim not in (None, CLAIM_IN, CLAIM_OUT):
            raise ValueError(f"unknown claim {self.claim!r}")

    @property
    def effective_checked(self) -> tuple[int, ...]:
        """The set B actually checks: S, or its complement after a counter-challenge."""
        if self.claim == CLAIM_IN:
            return tuple(i for i in range(self.n) if i not in self.requested)
        return self.requested


@dataclass
class SessionTranscript:
    """Ordered event log; one outcome, wires move once per direction per phase."""

    events: list[dict] = field(default_factory=list)
    outcome: str | None = None
    outcome_bit: int | None = None
    _moves: set = field(default_factory=set, repr=False)

    def record(self, phase: str, actor: str, kind: str, **payload) -> None:
        self.events.append(
            {"phase": phase, "actor": actor, "kind": kind, "payload": payload}
        )

    def record_transfer(self, phase: str, actor: str, wires: Sequence[str], to: str) -> None:
        for w in wires:
            key = (phase, w, to)
            if key in self._moves:
                raise ValueError(f"wire {w!r} transferred twice toward {to} in {phase}")
            self._moves.add(key)
        self.record(phase, actor, "transfer", wires=list(wires), to=to)

    def set_outcome(self, outcome: str, bit: int | None = None) -> None:
        if self.outcome is not None:
            raise ValueError("outcome already set")
        self.outcome = outcome
        self.outcome_bit = bit
        self.record("outcome", "B", "outcome", result=outcome, bit=bit)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"seq": i, **ev}, sort_keys=False)
            for i, ev in enumerate(self.events)
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SessionResult:
    """Per-segment summary consumed by the analysis layer."""

    outcome: str
    accepted_bit: int | None
    committed_bit: int
    open_bit: int
    claim: str | None
    luders_outcome: str | None
    returned_pass: float
    open_accept: float
    open_accept_uhlmann: float | None
    detections: int
    penalty_score: float


def random_record(n: int, rng: np.random.Generator) -> BB84Record:
    return BB84Record(tuple(int(j) for j in rng.integers(1, 5, size=n)))


def bob_prepare(
    n: int, rng: np.random.Generator, record: BB84Record | None = None
) -> tuple[BB84Record, StateVector]:
    """Prepare n product qubits, each uniformly in one of the four BB84 states."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if record is None:
        record = random_record(n, rng)
    elif len(record) != n:
        raise ValueError(f"record length {len(record)} != n = {n}")
    amps = bb84_amplitudes(record.j_ids[0])
    for j in record.j_ids[1:]:
        amps = np.kron(amps, bb84_amplitudes(j))
    wires = tuple(
        Wire(f"q{i}", 2, role=ROLE_QUBIT, index=i, owner="B") for i in range(n)
    )
    return record, StateVector(amps, wires)


def bob_challenge(n: int, lam: float, rng: np.random.Generator) -> ChallengeRecord:
    """Uniform size-round(lam*n) subset of the original indices."""
    size = round(lam * n)
    if not 1 <= size <= n - 1:
        raise ValueError(f"round(lambda*n) = {size} must lie in 1..{n - 1}")
    picked = sorted(int(i) for i in rng.choice(n, size=size, replace=False))
    return ChallengeRecord(n=n, requested=tuple(picked))


def epr_commit_state(
    record: BB84Record, b: int, theta: float, product_amps: np.ndarray | None = None
) -> StateVector:
    """The entangled commitment: uniform ancilla against all cyclic shifts.

    Wire order is (anc, q0, .., q{n-1}); the modulated slot q0 is labeled
    committed and owned by B, everything else stays with A. The prepared
    product amplitudes can be passed in to skip rebuilding them.
    """
    n = len(record)
    if product_amps is None:
        product_amps = bb84_amplitudes(record.j_ids[0])
        for j in record.j_ids[1:]:
            product_amps = np.kron(product_amps, bb84_amplitudes(j))
    amps = np.kron(np.full(n, 1 / math.sqrt(n), dtype=np.complex128), product_amps)
    wires = (Wire("anc", n, role=ROLE_ANCILLA, owner="A"),) + tuple(
        Wire(f"q{p}", 2, role=ROLE_QUBIT, index=None, owner="A") for p in range(n)
    )
    state = StateVector(amps, wires)
    state = controlled_shift(state, "anc", [f"q{p}" for p in range(n)])
    u_b = rotation_gate(theta if b == 0 else -theta)
    state = apply_on_wires(state, u_b, ["q0"])
    return state.relabel("q0", role=ROLE_COMMITTED, owner="B")


def branch_positions(n: int) -> list[list[int]]:
    """branch_positions(n)[l][p] is the original index at position p in branch l."""
    return [[(p - l) % n for p in range(n)] for l in range(n)]


def committed_original(n: int, l: int) -> int:
    """Original index on the committed slot in ancilla branch l: c(l) = (-l) mod n."""
    return (-l) % n


def routing_perms(
    branch_orig: Sequence[Sequence[int]],
    survivors: Sequence[int],
    effective: Sequence[int],
    n: int,
) -> tuple[dict[int, dict[str, str]], list[list[int]]]:
    """Per-branch slot permutations placing the requested originals first.

    In every surviving branch the requested originals (ascending) are moved
    to slots q1..qt and the remaining held originals fill the rest in
    ascending order; dead branches get the identity. Also returns the
    post-routing position maps.
    """
    requested = list(effective)
    t = len(requested)
    slots = [f"q{p}" for p in range(1, n)]
    perms: dict[int, dict[str, str]] = {}
    new_orig = [list(row) for row in branch_orig]
    for l in range(n):
        if l not in survivors:
            perms[l] = {s: s for s in slots}
            continue
        held = {branch_orig[l][p]: p for p in range(1, n)}
        assert all(o in held for o in requested), "requested original not held"
        rest = sorted(o for o in held if o not in requested)
        dest = {o: 1 + r for r, o in enumerate(requested)}
        dest.update({o: 1 + t + q for q, o in enumerate(rest)})
        perms[l] = {f"q{held[o]}": f"q{dest[o]}" for o in held}
        for o, p in held.items():
            new_orig[l][dest[o]] = o
    return perms, new_orig


def project_onto_record(
    state: StateVector, wire_names: Sequence[str], record: BB84Record
) -> tuple[float, StateVector | None]:
    """Joint probability of projecting each wire onto its recorded BB84 state.

    Returns the probability and the renormalized post-state (None when the
    probability vanishes). Wires must carry definite original indices. The
    projectors are rank one, so the group contracts against one product
    vector instead of one operator per wire.
    """
    if not wire_names:
        return 1.0, state
    target = np.array([1.0 + 0j])
    axes = []
    for name in wire_names:
        wire = state.wire(name)
        if wire.index is None:
            raise ValueError(f"wire {name!r} has no definite original index")
        target = np.kron(target, bb84_amplitudes(record.j_ids[wire.index]))
        axes.append(state.axis(name))
    k = len(axes)
    nd = np.moveaxis(state.amps.reshape(state.dims), axes, range(k))
    group_shape = nd.shape[:k]
    rest = nd.reshape(len(target), -1)
    coeff = target.conj() @ rest
    prob = float(np.vdot(coeff, coeff).real)
    if prob <= 1e-15:
        return 0.0, None
    post = np.multiply.outer(target, coeff / math.sqrt(prob))
    post = np.moveaxis(post.reshape(group_shape + nd.shape[k:]), range(k), axes)
    return prob, StateVector(np.ascontiguousarray(post).reshape(-1), state.wires)


@dataclass(frozen=True)
class ConditionedCommit:
    """EPR commitment conditioned on a check outcome, after routing and checks."""

    probability: float
    state: StateVector | None
    survivors: tuple[int, ...]
    branch_orig: tuple[tuple[int, ...], ...]
    effective: tuple[int, ...]
    returned: tuple[str, ...]
    a_wires: tuple[str, ...]


def conditioned_epr_state(
    record: BB84Record,
    requested: Sequence[int],
    outcome: str,
    b: int,
    theta: float,
    route: bool = True,
    commit: StateVector | None = None,
) -> ConditionedCommit:
    """Entangled commit conditioned on a forced check outcome.

    Applies, in order: the check projector on the ancilla, the controlled
    routing, B's projection of the returned wires onto her record, then
    renormalizes. `outcome` is "in" or "out" (committed index in S or not).
    A prebuilt commitment state for the same (record, b, theta) may be
    passed to avoid rebuilding it.
    """
    n = len(record)
    s_set = set(requested)
    state = epr_commit_state(record, b, theta) if commit is None else commit
    orig = branch_positions(n)
    l_in = [l for l in range(n) if committed_original(n, l) in s_set]
    survivors = l_in if outcome == "in" else [l for l in range(n) if l not in l_in]
    prob = len(survivors) / n
    if not survivors:
        return ConditionedCommit(0.0, None, (), (), (), (), ())
    proj = ancilla_subset_projector(n, survivors)
    branch = next(
        br
        for br in luders_measure(state, [proj, np.eye(n) - proj], "anc")
        if br.outcome_index == 0
    )
    state = branch.post_state
    effective = (
        tuple(i for i in range(n) if i not in s_set)
        if outcome == "in"
        else tuple(sorted(s_set))
    )
    perms, new_orig = routing_perms(orig, survivors, effective, n)
    if route:
        state = controlled_route(state, "anc", perms)
    else:
        new_orig = orig
    returned = tuple(f"q{p}" for p in range(1, 1 + len(effective)))
    for r, name in enumerate(returned):
        state = state.relabel(name, index=effective[r], owner="B")
    pass_prob, state = project_onto_record(state, returned, record)
    a_wires = tuple(w.name for w in state.wires if w.owner == "A")
    return ConditionedCommit(
        probability=prob * pass_prob,
        state=state,
        survivors=tuple(survivors),
        branch_orig=tuple(tuple(row) for row in new_orig),
        effective=effective,
        returned=returned,
        a_wires=a_wires,
    )


class Session:
    """One protocol segment, driven phase by phase.

    Methods are named after the protocol actions; each enforces ordering,
    asserts wire ownership before touching amplitudes, and appends to the
    transcript.
    """

    _ORDER = (
        "init",
        "prepared",
        "committed",
        "challenged",
        "answered",
        "checked",
        "opened",
        "done",
    )

    def __init__(
        self,
        params: ProtocolParams,
        rng: np.random.Generator,
        record: BB84Record | None = None,
    ):
        self.params = params
        self.rng = rng
        self.transcript = SessionTranscript()
        self.state: StateVector | None = None
        self.record = record
        self.committed_bit: int | None = None
        self.k: int | None = None  # honest committed position
        self.challenge: ChallengeRecord | None = None
        self.luders_outcome: str | None = None
        self.survivors: list[int] = []
        self.branch_orig: list[list[int]] = []
        self.returned: tuple[str, ...] = ()
        self.returned_pass: float = 1.0
        self.detections: int = 0
        self.announcement: tuple[int, int] | None = None
        self.open_accept_uhlmann: float | None = None
        self.announced_l: int | None = None
        self.commit_states: dict[int, StateVector] = {}
        self._product_amps: np.ndarray | None = None
        self._phase = "init"

    def _advance(self, expect: str, to: str) -> None:
        if self._phase != expect:
            raise ProtocolOrderError(
                f"phase {to!r} requires {expect!r}, session is in {self._phase!r}"
            )
        self._phase = to

    def _assert_owner(self, owner: str, wires: Sequence[str]) -> None:
        assert self.state is not None
        for w in wires:
            assert self.state.wire(w).owner == owner, f"{owner} does not own {w}"

    def _transfer(self, phase: str, actor: str, wires: Sequence[str], to: str) -> None:
        assert self.state is not None
        self._assert_owner("A" if to == "B" else "B", wires)
        for w in wires:
            self.state = self.state.relabel(w, owner=to)
        self.transcript.record_transfer(phase, actor, wires, to)

    # -- phases ---------------------------------------------------------

    def bob_prepare(self) -> BB84Record:
        self._advance("init", "prepared")
        self.record, self.state = bob_prepare(self.params.n, self.rng, self.record)
        self._product_amps = self.state.amps
        self._transfer("prepare", "B", self.state.wire_names(), "A")
        return self.record

    def alice_commit(self, b: int) -> None:
        if b not in (0, 1):
            raise ValueError("bit must be 0 or 1")
        self._advance("prepared", "committed")
        self.committed_bit = b
        if self.params.alice_mode == "honest":
            self._commit_honest(b)
        else:
            self._commit_epr(b)

    def _commit_honest(self, b: int) -> None:
        n = self.params.n
        self.k = int(self.rng.integers(n))
        name = f"q{self.k}"
        self._assert_owner("A", [name])
        u_b = rotation_gate(self.params.theta if b == 0 else -self.params.theta)
        self.state = apply_on_wires(self.state, u_b, [name])
        self.state = self.state.relabel(name, role=ROLE_COMMITTED)
        self.transcript.record("commit", "A", "message", committed_slot=self.k)
        self._transfer("commit", "A", [name], "B")

    def _commit_epr(self, b: int) -> None:
        n = self.params.n
        assert self.record is not None
        self._assert_owner("A", self.state.wire_names())
        state = self._commit_state_for(b)
        # the builder owns the committed wire to B already; log that transfer
        self.state = state
        self.branch_orig = branch_positions(n)
        self.transcript.record("commit", "A", "message", entangled=True)
        self.transcript.record_transfer("commit", "A", ["q0"], "B")

    def _commit_state_for(self, bit: int) -> StateVector:
        if bit not in self.commit_states:
            self.commit_states[bit] = epr_commit_state(
                self.record, bit, self.params.theta, product_amps=self._product_amps
            )
        return self.commit_states[bit]

    def bob_challenge(self) -> ChallengeRecord:
        self._advance("committed", "challenged")
        if not self.params.checking:
            raise ProtocolOrderError("checking is disabled for this session")
        self.challenge = bob_challenge(self.params.n, self.params.lam, self.rng)
        self.transcript.record(
            "challenge", "B", "message", requested=list(self.challenge.requested)
        )
        return self.challenge

    def alice_answer_challenge(
        self, outcome: str | None = None, route: bool = True
    ) -> tuple[str, tuple[str, ...]]:
        """Answer the check: claim, collapse (EPR), route, and return wires."""
        self._advance("challenged", "answered")
        assert self.challenge is not None
        if self.params.alice_mode == "honest":
            claim = CLAIM_IN if self.k in self.challenge.requested else CLAIM_OUT
        else:
            claim = self._answer_epr(outcome, route)
        self.challenge = ChallengeRecord(
            n=self.challenge.n, requested=self.challenge.requested, claim=claim
        )
        self.transcript.record("answer", "A", "message", claim=claim)
        effective = self.challenge.effective_checked
        if self.params.alice_mode == "honest":
            self.returned = tuple(f"q{i}" for i in effective)
        else:
            self.returned = tuple(f"q{p}" for p in range(1, 1 + len(effective)))
            for r, name in enumerate(self.returned):
                self.state = self.state.relabel(name, index=effective[r])
        self._transfer("answer", "A", self.returned, "B")
        return claim, self.returned

    def _answer_epr(self, outcome: str | None, route: bool) -> str:
        n = self.params.n
        s_set = set(self.challenge.requested)
        self._assert_owner("A", ["anc"])
        l_in = [l for l in range(n) if committed_original(n, l) in s_set]
        proj_in = ancilla_subset_projector(n, l_in)
        branches = luders_measure(
            self.state, [proj_in, np.eye(n) - proj_in], "anc"
        )
        if outcome is None:
            probs = [br.probability for br in branches]
            pick = branches[self.rng.choice(len(branches), p=np.array(probs) / sum(probs))]
        else:
            want = 0 if outcome == "in" else 1
            pick = next(br for br in branches if br.outcome_index == want)
        self.state = pick.post_state
        self.luders_outcome = "in" if pick.outcome_index == 0 else "out"
        self.transcript.record(
            "answer",
            "A",
            "measurement",
            wire="anc",
            outcome=self.luders_outcome,
            probability=pick.probability,
        )
        claim = CLAIM_IN if self.luders_outcome == "in" else CLAIM_OUT
        self.survivors = l_in if self.luders_outcome == "in" else [
            l for l in range(n) if l not in l_in
        ]
        effective = (
            tuple(i for i in range(n) if i not in s_set)
            if claim == CLAIM_IN
            else tuple(sorted(s_set))
        )
        perms, new_orig = routing_perms(self.branch_orig, self.survivors, effective, n)
        if route:
            self._assert_owner("A", [f"q{p}" for p in range(1, n)])
            self.state = controlled_route(self.state, "anc", perms)
            self.branch_orig = new_orig
        return claim

    def bob_verify_returned(self) -> float | bool:
        """Check the returned wires against the preparation record."""
        self._advance("answered", "checked")
        assert self.record is not None
        self._assert_owner("B", self.returned)
        if self.params.verify_mode == "exact":
            prob, post = project_onto_record(self.state, self.returned, self.record)
            self.returned_pass = prob
            if post is not None:
                self.state = post
            passed = prob > 1.0 - PROB_ATOL
            if not passed:
                self.detections += 1
                self.transcript.record(
                    "verify-returned", "B", "detection", pass_probability=prob
                )
            self.transcript.record(
                "verify-returned", "B", "verification", pass_probability=prob
            )
            return prob
        passed = True
        for name in self.returned:
            prob, post = project_onto_record(self.state, [name], self.record)
            if self.rng.random() < prob:
                self.state = post
            else:
                passed = False
                break
        self.returned_pass = 1.0 if passed else 0.0
        if not passed:
            self.detections += 1
            self.transcript.record("verify-returned", "B", "detection")
        self.transcript.record("verify-returned", "B", "verification", passed=passed)
        return passed

    def alice_open(self, open_bit: int) -> tuple[int, int]:
        """Open `open_bit`: announce the committed index and return all wires."""
        if open_bit not in (0, 1):
            raise ValueError("bit must be 0 or 1")
        if self.params.checking:
            self._advance("checked", "opened")
        else:
            self._advance("committed", "opened")
        if self.params.alice_mode == "honest":
            self.announcement = (self.k, open_bit)
        else:
            self._open_epr(open_bit)
        remaining = [w.name for w in self.state.wires if w.owner == "A"]
        self._transfer("open", "A", remaining, "B")
        self.transcript.record(
            "open",
            "A",
            "message",
            committed_index=self.announcement[0],
            bit=self.announcement[1],
        )
        return self.announcement

    def _open_epr(self, open_bit: int) -> None:
        n = self.params.n
        reference = self._replay_reference(open_bit)
        a_wires = tuple(w.name for w in self.state.wires if w.owner == "A")
        trace_norm, u_opt = cheat_operator(self.state, reference, a_wires)
        self.open_accept_uhlmann = trace_norm**2
        self._assert_owner("A", a_wires)
        self.state = apply_on_wires(self.state, u_opt, a_wires)
        # announce via a computational-basis measurement of the ancilla
        anc_axis = self.state.axis("anc")
        nd = self.state.amps.reshape(self.state.dims)
        probs = np.moveaxis(np.abs(nd) ** 2, anc_axis, 0).reshape(n, -1).sum(axis=1)
        l_star = int(self.rng.choice(n, p=probs / probs.sum()))
        mask = np.zeros(n)
        mask[l_star] = 1.0
        shape = [1] * len(self.state.dims)
        shape[anc_axis] = n
        collapsed = (nd * mask.reshape(shape)).reshape(-1) / math.sqrt(probs[l_star])
        self.state = StateVector(collapsed, self.state.wires)
        self.announced_l = l_star
        self.transcript.record(
            "open", "A", "measurement", wire="anc", outcome=l_star,
            probability=float(probs[l_star]),
        )
        # label the held slots with the announced branch's arrangement
        if self.branch_orig:
            for p in range(1, n):
                name = f"q{p}"
                if self.state.wire(name).owner == "A":
                    self.state = self.state.relabel(
                        name, index=self.branch_orig[l_star][p]
                    )
        self.announcement = (committed_original(n, l_star), open_bit)

    def _replay_reference(self, bit: int) -> StateVector:
        """The state an honest-to-the-attack run would hold had `bit` been committed."""
        assert self.record is not None
        if not self.params.checking:
            return self._commit_state_for(bit)
        cond = conditioned_epr_state(
            self.record,
            self.challenge.requested,
            self.luders_outcome,
            bit,
            self.params.theta,
            commit=self._commit_state_for(bit),
        )
        assert cond.state is not None
        return cond.state

    def bob_verify_open(self) -> float | bool:
        """Verify the announcement against the record and the final state."""
        self._advance("opened", "done")
        assert self.record is not None and self.announcement is not None
        k, bit = self.announcement
        effective = self.challenge.effective_checked if self.challenge else ()
        if k in effective:
            # that index was already returned unmodulated; reject outright
            self.transcript.record("verify-open", "B", "verification", accepted=False,
                                   reason="announced index was checked")
            return 0.0 if self.params.verify_mode == "exact" else False
        prob = self._open_probability(k, bit)
        self.transcript.record(
            "verify-open", "B", "verification", accept_probability=prob
        )
        return prob if self.params.verify_mode == "exact" else bool(self.rng.random() < prob)

    def _open_probability(self, k: int, bit: int) -> float:
        """Joint product-projection probability for the announcement (k, bit).

        The reference is rank one on every non-ancilla wire, so the
        probability is the squared overlap with one product vector, summed
        over the (unverified) ancilla values when one is present.
        """
        state = self.state
        self._assert_owner("B", [w.name for w in state.wires if w.role != ROLE_ANCILLA])
        theta = self.params.theta
        u_b = rotation_gate(theta if bit == 0 else -theta).matrix
        target = np.array([1.0 + 0j])
        anc_axis = None
        for axis, wire in enumerate(state.wires):
            if wire.role == ROLE_ANCILLA:
                assert anc_axis is None
                anc_axis = axis
                continue
            if wire.role == ROLE_COMMITTED:
                target = np.kron(target, u_b @ bb84_amplitudes(self.record.j_ids[k]))
            else:
                idx = wire.index
                assert idx is not None, f"wire {wire.name} lacks an announced index"
                target = np.kron(target, bb84_amplitudes(self.record.j_ids[idx]))
        if anc_axis is None:
            return float(abs(np.vdot(target, state.amps)) ** 2)
        nd = np.moveaxis(state.amps.reshape(state.dims), anc_axis, 0)
        coeff = nd.reshape(state.dims[anc_axis], -1) @ target.conj()
        return float(np.vdot(coeff, coeff).real)


def run_session(
    params: ProtocolParams,
    rng: np.random.Generator,
    record: BB84Record | None = None,
    commit_bit: int | None = None,
    open_bit: int | None = None,
    route: bool = True,
) -> tuple[SessionTranscript, SessionResult]:
    """Drive one full segment and apply the configured accounting.

    In exact verify mode the per-phase acceptance probabilities are computed
    exactly and the final outcome is sampled from them; in sampled mode each
    projective check is simulated outcome by outcome.
    """
    session = Session(params, rng, record=record)
    session.bob_prepare()
    b = int(rng.integers(2)) if commit_bit is None else commit_bit
    open_b = b if open_bit is None else open_bit
    session.alice_commit(b)
    if params.checking:
        session.bob_challenge()
        session.alice_answer_challenge(route=route)
        returned_ok = session.bob_verify_returned()
        if params.verify_mode == "exact":
            passed = rng.random() < returned_ok if 0 < returned_ok < 1 else returned_ok >= 1 - PROB_ATOL
        else:
            passed = bool(returned_ok)
        if not passed:
            session.detections = max(session.detections, 1)
            session.transcript.set_outcome("cheat-detected")
            return session.transcript, _result(session, b, open_b, accepted=False,
                                               open_accept=0.0)
    session.alice_open(open_b)
    accept = session.bob_verify_open()
    if params.verify_mode == "exact":
        prob = float(accept)
        accepted = bool(rng.random() < prob) if 0 < prob < 1 else prob >= 1 - PROB_ATOL
    else:
        prob = float(bool(accept))
        accepted = bool(accept)
    session.transcript.set_outcome("accepted" if accepted else "rejected",
                                   bit=open_b if accepted else None)
    return session.transcript, _result(session, b, open_b, accepted, prob)


def _result(session, b, open_b, accepted, open_accept) -> SessionResult:
    penalty = session.params.penalty * session.detections
    return SessionResult(
        outcome=session.transcript.outcome,
        accepted_bit=session.transcript.outcome_bit,
        committed_bit=b,
        open_bit=open_b,
        claim=session.challenge.claim if session.challenge else None,
        luders_outcome=session.luders_outcome,
        returned_pass=session.returned_pass,
        open_accept=open_accept,
        open_accept_uhlmann=session.open_accept_uhlmann,
        detections=session.detections,
        penalty_score=penalty,
    )


def run_entanglement_audit(
    params: ProtocolParams,
    rng: np.random.Generator,
    record: BB84Record | None = None,
    commit_bit: int = 0,
    stray: UnitaryOp | None = None,
    abort_before_return: bool = False,
) -> tuple[float, SessionTranscript]:
    """Scripted honest audit of the entangled commitment.

    A hands the ancilla to B, receives the committed qubit back, removes the
    modulation, returns everything, and B projects the total state onto the
    unmodulated entangled commitment. Compliant parties pass with
    probability 1. `stray` injects a rogue rotation on the committed qubit
    before it is returned (for tests); `abort_before_return` stops after the
    ancilla transfer.
    """
    if params.alice_mode != "epr":
        raise ValueError("the audit is defined for the entangled commit")
    transcript = SessionTranscript()
    if record is None:
        record = random_record(params.n, rng)
    state = epr_commit_state(record, commit_bit, params.theta)
    transcript.record_transfer("commit", "A", ["q0"], "B")
    state = state.relabel("anc", owner="B")
    transcript.record_transfer("audit", "A", ["anc"], "B")
    if abort_before_return:
        transcript.set_outcome("accepted", bit=None)
        return 1.0, transcript
    state = state.relabel("q0", owner="A")
    transcript.record_transfer("audit", "B", ["q0"], "A")
    u_b = rotation_gate(params.theta if commit_bit == 0 else -params.theta)
    state = apply_on_wires(state, u_b.dagger(), ["q0"])
    if stray is not None:
        state = apply_on_wires(state, stray, ["q0"])
    # A asks for B's holdings, verifies, and sends the lot back
    state = state.relabel("anc", owner="A")
    transcript.record_transfer("audit", "B", ["anc"], "A")
    transcript.record("audit", "A", "verification", passed=True)
    names = state.wire_names()
    for w in names:
        state = state.relabel(w, owner="B")
    transcript.record_transfer("audit-return", "A", names, "B")
    reference = epr_commit_state(record, commit_bit, params.theta)
    reference = apply_on_wires(reference, u_b.dagger(), ["q0"])
    overlap = np.vdot(reference.amps, state.amps)
    prob = float(abs(overlap) ** 2)
    transcript.record("audit", "B", "verification", pass_probability=prob)
    transcript.set_outcome("accepted" if prob > 1 - PROB_ATOL else "rejected")
    return prob, transcript
