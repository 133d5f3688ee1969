"""Simulator and exact security analyzer for a two-party quantum
bit-commitment protocol with an entanglement-destroying checking phase."""

__version__ = "0.1.0"

from .analysis import (
    ComposedTotals,
    SecurityReport,
    SegmentSecurity,
    cheat_fidelity_post,
    cheat_fidelity_pre,
    compose_segments,
    concealment_distance,
    ensemble_cheat_estimate,
    expected_concealment,
    scan,
    wilson_interval,
)
from .kernels import BACKEND
from .protocol import (
    BB84Record,
    ChallengeRecord,
    ProtocolParams,
    Session,
    SessionResult,
    SessionTranscript,
    bob_challenge,
    bob_prepare,
    epr_commit_state,
    run_entanglement_audit,
    run_session,
)
from .qcore import (
    DensityOperator,
    MeasurementBranch,
    StateVector,
    UnitaryOp,
    Wire,
    ancilla_subset_projector,
    apply_on_wires,
    bb84_state,
    cheat_operator,
    controlled_route,
    controlled_shift,
    fidelity,
    luders_measure,
    partial_trace,
    rotation_gate,
    tensor,
    trace_distance,
)
