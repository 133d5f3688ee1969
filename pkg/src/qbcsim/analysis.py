"""Security metrics: concealment distances, cheat fidelities, composition.

Concealment is the trace distance between the two single-qubit states the
verifier can see after commitment; binding is quantified by the trace norm
of the cross operator between the committer's two conditioned states (its
square is the optimal switching probability, attained by the constructed
local unitary). The cheating unitary is computed with full knowledge of the
preparation record, so every number here is an upper bound on what a
record-blind attacker could do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .protocol import (
    BB84Record,
    ProtocolParams,
    Session,
    committed_original,
    conditioned_epr_state,
    epr_commit_state,
    random_record,
)
from .qcore import (
    DensityOperator,
    bb84_amplitudes,
    cheat_operator,
    fidelity,
    rotation_gate,
    trace_distance,
)
from .seeding import SUBCOMMAND_TAGS, derive_rng

WILSON_Z95 = 1.959963984540054


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def commit_views(
    record: BB84Record, theta: float, branches: Sequence[int] | None = None
) -> tuple[DensityOperator, DensityOperator]:
    """The verifier's committed-qubit states for bit 0 and bit 1.

    Each is the uniform mixture of the rotated record states over the given
    ancilla branches (all n branches by default).
    """
    n = len(record)
    ls = range(n) if branches is None else branches
    views = []
    for b in (0, 1):
        u = rotation_gate(theta if b == 0 else -theta).matrix
        rho = np.zeros((2, 2), dtype=np.complex128)
        for l in ls:
            v = u @ bb84_amplitudes(record.j_ids[committed_original(n, l)])
            rho += np.outer(v, v.conj())
        views.append(DensityOperator(2, rho / len(list(ls)), wire_dims=(2,)))
    return views[0], views[1]


def concealment_distance(record: BB84Record, theta: float) -> float:
    """Trace distance between the two commit-time views of the verifier."""
    rho0, rho1 = commit_views(record, theta)
    return trace_distance(rho0, rho1)


def concealment_distance_post(
    record: BB84Record, requested: Sequence[int], outcome: str, theta: float
) -> float:
    """Concealment distance of the committed qubit after the check collapse."""
    n = len(record)
    s_set = set(requested)
    l_in = [l for l in range(n) if committed_original(n, l) in s_set]
    survivors = l_in if outcome == "in" else [l for l in range(n) if l not in l_in]
    rho0, rho1 = commit_views(record, theta, branches=survivors)
    return trace_distance(rho0, rho1)


def expected_concealment(
    n: int, theta: float, trials: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of D over uniform records."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    if n < 1:
        raise ValueError("n must be positive")
    ds = np.empty(trials)
    for i in range(trials):
        ds[i] = concealment_distance(random_record(n, rng), theta)
    return float(ds.mean()), float(ds.std(ddof=1) / math.sqrt(trials))


def cheat_fidelity_pre(record: BB84Record, theta: float) -> float:
    """Trace norm of the cross operator between the two entangled commitments."""
    psi0 = epr_commit_state(record, 0, theta)
    psi1 = epr_commit_state(record, 1, theta)
    a_wires = tuple(w.name for w in psi0.wires if w.owner == "A")
    trace_norm, _ = cheat_operator(psi0, psi1, a_wires)
    return trace_norm


def cheat_fidelity_post(
    record: BB84Record,
    requested: Sequence[int],
    outcome: str,
    theta: float,
    commits: tuple | None = None,
) -> tuple[float, float | None]:
    """Outcome probability and cheat fidelity after the forced check collapse.

    Both committed bits are replayed through the identical history (same
    record, requested set, outcome, routing, and passed verification); the
    returned fidelity measures how well the committer can still switch bits.
    Prebuilt commitment states for bits (0, 1) may be passed via `commits`.
    """
    if outcome not in ("in", "out"):
        raise ValueError(f"outcome must be 'in' or 'out', got {outcome!r}")
    c0, c1 = commits if commits is not None else (None, None)
    cond0 = conditioned_epr_state(record, requested, outcome, 0, theta, commit=c0)
    if cond0.probability == 0.0 or cond0.state is None:
        return 0.0, None
    cond1 = conditioned_epr_state(record, requested, outcome, 1, theta, commit=c1)
    trace_norm, _ = cheat_operator(cond0.state, cond1.state, cond0.a_wires)
    p = len(cond0.survivors) / len(record)
    return p, trace_norm


@dataclass(frozen=True)
class SegmentSecurity:
    """Per-segment quantities needed for multi-segment composition."""

    concealment: float
    cheat_fidelity: float
    honest_flip: float
    view0: DensityOperator
    view1: DensityOperator


def segment_security(record: BB84Record, theta: float) -> SegmentSecurity:
    rho0, rho1 = commit_views(record, theta)
    return SegmentSecurity(
        concealment=trace_distance(rho0, rho1),
        cheat_fidelity=cheat_fidelity_pre(record, theta),
        honest_flip=math.cos(2 * theta) ** 2,
        view0=rho0,
        view1=rho1,
    )


@dataclass(frozen=True)
class ComposedTotals:
    """Exact and bounded m-segment totals."""

    m: int
    epsilon_exact: float | None
    epsilon_bound: float
    honest_flip_total: float
    cheat_total: float


MAX_EXACT_COMPOSE = 10


def compose_segments(
    segments: Sequence[SegmentSecurity], m: int | None = None
) -> ComposedTotals:
    """Compose per-segment metrics into m-segment totals.

    Concealment composes as the exact trace distance of the two m-fold
    product states (for m <= 10; the subadditive bound sum(D_i) is always
    reported); the honest-flip and cheat totals are products of independent
    per-segment probabilities. A single segment may be replicated m times.
    """
    if m is None:
        m = len(segments)
    if m < 1:
        raise ValueError("m must be at least 1")
    if len(segments) == 1 and m > 1:
        segments = list(segments) * m
    if len(segments) != m:
        raise ValueError(f"got {len(segments)} segments for m = {m}")
    bound = sum(s.concealment for s in segments)
    exact = None
    if m <= MAX_EXACT_COMPOSE:
        prod0 = np.array([[1.0 + 0j]])
        prod1 = np.array([[1.0 + 0j]])
        for s in segments:
            prod0 = np.kron(prod0, s.view0.matrix)
            prod1 = np.kron(prod1, s.view1.matrix)
        dim = prod0.shape[0]
        exact = trace_distance(
            DensityOperator(dim, prod0), DensityOperator(dim, prod1)
        )
    flips = math.prod(s.honest_flip for s in segments)
    cheat = math.prod(s.cheat_fidelity**2 for s in segments)
    return ComposedTotals(
        m=m,
        epsilon_exact=exact,
        epsilon_bound=float(bound),
        honest_flip_total=float(flips),
        cheat_total=float(cheat),
    )


@dataclass
class SecurityReport:
    """Flat result row shared by the estimators, the scan and the CLI."""

    n: int
    m: int
    lam: float
    theta: float
    trials: int
    seed: int
    conceal_mean: float | None = None
    conceal_stderr: float | None = None
    conceal_post_mean: float | None = None
    guess_advantage: float | None = None
    f_pre: float | None = None
    p_out: float | None = None
    f_out: float | None = None
    p_in: float | None = None
    f_in: float | None = None
    cheat_estimate: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    analytic_cheat: float | None = None
    diff_mean: float | None = None
    diff_stderr: float | None = None
    product_rate: float | None = None
    game_score: float | None = None
    detections: int = 0
    eps_exact: float | None = None
    eps_bound: float | None = None
    honest_flip_total: float | None = None
    cheat_total: float | None = None
    error: str = ""

    def validate(self) -> None:
        probs = [
            self.p_out, self.p_in, self.cheat_estimate, self.ci_low, self.ci_high,
            self.f_pre, self.f_out, self.f_in,
        ]
        for p in probs:
            if p is not None and not -1e-12 <= p <= 1 + 1e-12:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.p_out is not None and self.p_in is not None:
            if abs(self.p_out + self.p_in - 1.0) > 1e-9:
                raise ValueError("branch probabilities do not sum to 1")


def ensemble_cheat_estimate(
    params: ProtocolParams,
    trials: int,
    rng: np.random.Generator,
    seed: int = 0,
) -> SecurityReport:
    """Monte Carlo estimate of the end-to-end bit-switching probability.

    Each trial runs a full session in which the committer commits 0 and
    opens 1 with the conditioned optimal unitary. A detection at the check
    counts the trial as a failed cheat (first-detection rule); otherwise the
    open succeeds with the exact switching probability of that conditioned
    session, i.e. the verifier applies her strongest (state-projection)
    test. The analytic decomposition sum_o p_o F_o^2 over the forced check
    outcomes is evaluated on the same draws for cross-checking, and the
    weaker per-wire product test rate is reported alongside.
    """
    if trials < 100:
        raise ValueError("fewer than 100 trials makes the interval meaningless")
    n = params.n
    successes = 0
    detections = 0
    diffs = np.empty(trials)
    analytic = np.empty(trials)
    product = np.empty(trials)
    honest = params.alice_mode == "honest"
    flip_prob = math.cos(2 * params.theta) ** 2
    for i in range(trials):
        record = random_record(n, rng)
        session = Session(params, rng, record=record)
        session.bob_prepare()
        session.alice_commit(0)
        detected = False
        if params.checking:
            session.bob_challenge()
            session.alice_answer_challenge()
            ok = session.bob_verify_returned()
            if params.verify_mode == "exact":
                passed = ok > 1 - 1e-9 or rng.random() < ok
            else:
                passed = bool(ok)
            detected = not passed
        if detected:
            detections += 1
            success = False
            p_open = 0.0
        else:
            session.alice_open(1)
            if honest:
                p_open = flip_prob
            else:
                p_open = session.open_accept_uhlmann
            success = bool(rng.random() < p_open)
        successes += int(success)
        product[i] = session.bob_verify_open() if not detected else 0.0
        if honest:
            analytic[i] = flip_prob
        elif params.checking:
            s = session.challenge.requested
            commits = (
                session._commit_state_for(0),
                session._commit_state_for(1),
            )
            p_in, f_in = cheat_fidelity_post(record, s, "in", params.theta, commits)
            p_out, f_out = cheat_fidelity_post(record, s, "out", params.theta, commits)
            analytic[i] = p_in * (f_in or 0.0) ** 2 + p_out * (f_out or 0.0) ** 2
        else:
            # independent route: Uhlmann fidelity of the two 2x2 commit views
            rho0, rho1 = commit_views(record, params.theta)
            analytic[i] = fidelity(rho0, rho1) ** 2
        diffs[i] = float(success) - analytic[i]
    estimate = successes / trials
    lo, hi = wilson_interval(successes, trials)
    report = SecurityReport(
        n=n, m=params.m, lam=params.lam, theta=params.theta, trials=trials, seed=seed,
        p_out=(n - params.check_size) / n if params.checking else None,
        p_in=params.check_size / n if params.checking else None,
        cheat_estimate=estimate,
        ci_low=lo,
        ci_high=hi,
        analytic_cheat=float(analytic.mean()),
        diff_mean=float(diffs.mean()),
        diff_stderr=float(diffs.std(ddof=1) / math.sqrt(trials)),
        product_rate=float(product.mean()),
        detections=detections,
    )
    if params.accounting == "game":
        report.game_score = estimate - params.penalty * detections / trials
    report.validate()
    return report


def branch_fidelity_means(
    n: int, lam: float, theta: float, trials: int, rng: np.random.Generator
) -> dict:
    """Monte Carlo means of the conditioned fidelities over (record, S) draws."""
    from .protocol import bob_challenge

    f_in = np.empty(trials)
    f_out = np.empty(trials)
    post_d = np.empty(trials)
    for i in range(trials):
        record = random_record(n, rng)
        s = bob_challenge(n, lam, rng).requested
        _, fi = cheat_fidelity_post(record, s, "in", theta)
        _, fo = cheat_fidelity_post(record, s, "out", theta)
        f_in[i] = fi if fi is not None else np.nan
        f_out[i] = fo if fo is not None else np.nan
        post_d[i] = 0.5 * (
            concealment_distance_post(record, s, "in", theta)
            + concealment_distance_post(record, s, "out", theta)
        )
    size = round(lam * n)
    return {
        "p_in": size / n,
        "p_out": (n - size) / n,
        "f_in": float(np.nanmean(f_in)),
        "f_out": float(np.nanmean(f_out)),
        "conceal_post_mean": float(post_d.mean()),
    }


MAX_EPR_N = 10  # full entangled simulation beyond this is out of desk scale


def scan_point(
    n: int,
    m: int,
    lam: float,
    theta: float,
    trials: int,
    root_seed: int,
    index: int,
) -> SecurityReport:
    """One deterministic scan row; entangled columns are skipped beyond n=10."""
    report = SecurityReport(
        n=n, m=m, lam=lam, theta=theta, trials=trials, seed=root_seed
    )
    try:
        params = ProtocolParams(n=n, m=m, lam=lam, theta=theta, alice_mode="epr")
    except ValueError as exc:
        report.error = str(exc)
        return report
    rng = derive_rng(root_seed, SUBCOMMAND_TAGS["scan"], index)
    try:
        mean, err = expected_concealment(n, theta, trials, rng)
        report.conceal_mean = mean
        report.conceal_stderr = err
        report.guess_advantage = 0.5 + mean / 2
        if n <= MAX_EPR_N:
            bind_trials = min(trials, 200)
            report.f_pre = float(
                np.mean(
                    [
                        cheat_fidelity_pre(random_record(n, rng), theta)
                        for _ in range(bind_trials)
                    ]
                )
            )
            branch = branch_fidelity_means(n, lam, theta, bind_trials, rng)
            report.p_in = branch["p_in"]
            report.p_out = branch["p_out"]
            report.f_in = branch["f_in"]
            report.f_out = branch["f_out"]
            report.conceal_post_mean = branch["conceal_post_mean"]
            est = ensemble_cheat_estimate(
                params, max(100, min(trials, 1000)), rng, seed=root_seed
            )
            report.cheat_estimate = est.cheat_estimate
            report.ci_low = est.ci_low
            report.ci_high = est.ci_high
            report.analytic_cheat = est.analytic_cheat
            report.product_rate = est.product_rate
            segments = [
                segment_security(random_record(n, rng), theta) for _ in range(m)
            ]
        else:
            report.error = "entangled columns skipped (n beyond desk scale)"
            segments = []
            for _ in range(m):
                rec = random_record(n, rng)
                rho0, rho1 = commit_views(rec, theta)
                segments.append(
                    SegmentSecurity(
                        concealment=trace_distance(rho0, rho1),
                        cheat_fidelity=1.0,
                        honest_flip=math.cos(2 * theta) ** 2,
                        view0=rho0,
                        view1=rho1,
                    )
                )
        totals = compose_segments(segments, m)
        report.eps_exact = totals.epsilon_exact
        report.eps_bound = totals.epsilon_bound
        report.honest_flip_total = totals.honest_flip_total
        report.cheat_total = totals.cheat_total if n <= MAX_EPR_N else None
        report.validate()
    except Exception as exc:  # per-point failures stay in the row
        report.error = f"{type(exc).__name__}: {exc}"
    return report


def scan(points: Sequence[Mapping], root_seed: int) -> list[SecurityReport]:
    """Run every grid point with an independent derived stream."""
    if not points:
        raise ValueError("empty scan grid")
    return [
        scan_point(
            n=int(pt["n"]),
            m=int(pt.get("m", 1)),
            lam=float(pt.get("lam", 0.5)),
            theta=float(pt.get("theta", math.pi / 16)),
            trials=int(pt.get("trials", 200)),
            root_seed=root_seed,
            index=i,
        )
        for i, pt in enumerate(points)
    ]
