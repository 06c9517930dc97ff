"""Entanglement detection and the entanglement-blind backflow scenario.

Negativity across the first tensor cut certifies entanglement; for two
qubits the test is exact, so a qubit channel is entanglement breaking
precisely when its normalized Choi state has zero negativity.  The
scenario below chains an entanglement-breaking prelude into a positive
but not completely positive continuation and records that correlation
backflow survives even though every probe state stays PPT.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import (
    RateProfile,
    PauliChannelMap,
    choi_matrix,
    choi_min_eigenvalue,
    decay_factors,
    extend_with_identity,
    intermediate_map,
    is_cp,
    is_cp_divisible_at,
    is_p_divisible_at,
)
from .errors import DimensionMismatchError, PreconditionError
from .linalg import DensityMatrix, max_entangled_state, partial_transpose, trace_norm
from .probe import (
    BackflowReport,
    _best_direction,
    _pair_distance_at,
    detect_backflow,
    pull_back_pair,
)

NEGATIVITY_TOL = 1e-10
INTERMEDIATE_NEG_TOL = 1e-8
_RATE_TOL = 1e-12
_PRE_SAMPLES = 65

__all__ = [
    "NEGATIVITY_TOL",
    "EntanglementBlindReport",
    "is_entanglement_breaking",
    "negativity",
    "scenario_entanglement_blind",
]


def _negativity_raw(matrix: np.ndarray, dims: tuple[int, ...]) -> float:
    pt = partial_transpose(matrix, dims, 0)
    return max(0.0, 0.5 * (trace_norm(pt) - 1.0))


def negativity(state: DensityMatrix) -> float:
    """Entanglement negativity across the cut between factor 0 and the rest.

    Returns (||rho^{T_A}||_1 - 1)/2 clipped at zero; the clip only absorbs
    eigenvalue noise of order 1e-16 on separable inputs.
    """
    dims = tuple(state.dims)
    if len(dims) < 2:
        raise DimensionMismatchError(
            "negativity needs at least two tensor factors to define a cut"
        )
    return _negativity_raw(state.matrix, dims)


def is_entanglement_breaking(ch: PauliChannelMap) -> bool:
    """Whether the channel destroys all entanglement with any ancilla.

    Equivalent to separability of the normalized Choi state, which at
    qubit dimension reduces to the PPT condition; non-CP maps fail
    outright because their Choi matrix is not a state.
    """
    choi = choi_matrix(ch)
    if not is_cp(ch):
        return False
    return _negativity_raw(choi, (2, 2)) <= NEGATIVITY_TOL


def _composite_profile(
    prelude: RateProfile, continuation: RateProfile, switch_time: float
) -> RateProfile:
    # t >= switch is governed by the continuation in its own clock.
    def evaluate(t: float) -> np.ndarray:
        if t < switch_time:
            return np.asarray(prelude.evaluate(t), dtype=float)
        return np.asarray(continuation.evaluate(t - switch_time), dtype=float)

    def integrals(t0: float, t1: float) -> tuple[float, float, float]:
        head = np.zeros(3)
        lo, hi = min(t0, switch_time), min(t1, switch_time)
        if hi > lo:
            head = np.asarray(prelude.integrate_pair_sums(lo, hi), dtype=float)
        tail = np.zeros(3)
        if t1 > switch_time:
            tail = np.asarray(
                continuation.integrate_pair_sums(
                    max(t0, switch_time) - switch_time, t1 - switch_time
                ),
                dtype=float,
            )
        total = head + tail
        return (float(total[0]), float(total[1]), float(total[2]))

    return RateProfile(
        evaluate=evaluate,
        domain_end=switch_time + continuation.domain_end,
        pair_integrals=integrals,
        label=f"{prelude.label}->{continuation.label}@{switch_time:g}",
    )


@dataclass(frozen=True)
class EntanglementBlindReport:
    """Grid diagnostics for the entanglement-blind backflow scenario."""

    switch_time: float
    times: tuple[float, ...]
    negativities: tuple[float, ...]
    choi_min_intermediate: tuple[float, ...]
    c2_values: tuple[float, ...]
    prelude_breaking: bool
    blind_after_switch: bool
    noncp_after_switch: bool
    backflow: BackflowReport | None

    @property
    def certified(self) -> bool:
        if self.backflow is None:
            return False
        return (
            self.prelude_breaking
            and self.blind_after_switch
            and self.noncp_after_switch
            and self.backflow.backflow_detected
            and self.backflow.consistent
        )


def _validate_grid(grid: np.ndarray, switch_time: float, domain_end: float) -> None:
    if grid.ndim != 1 or grid.size < 2:
        raise PreconditionError("grid must be a one-dimensional sequence of at least two times")
    if not np.all(np.isfinite(grid)) or grid[0] < 0.0:
        raise PreconditionError("grid times must be finite and non-negative")
    if np.any(np.diff(grid) <= 0.0):
        raise PreconditionError("grid times must be strictly increasing")
    if int(np.sum(grid >= switch_time - 1e-12)) < 2:
        raise PreconditionError("grid must contain at least two points at or after the switch time")
    if grid[-1] > domain_end:
        raise PreconditionError("grid extends beyond the continuation domain")


def scenario_entanglement_blind(
    prelude_rates: RateProfile,
    continuation_rates: RateProfile,
    switch_time: float,
    grid: Sequence[float],
    epsilon: float = 0.05,
    threads: int | None = None,
) -> EntanglementBlindReport:
    """Certify correlation backflow on dynamics that keep every state PPT.

    The prelude must be CP-divisible and entanglement breaking by the
    switch; the continuation must be P-divisible while dipping below
    zero in at least one rate.  Violations raise PreconditionError
    naming the failing clause.  The report carries, per grid time, the
    negativity of the evolved maximally entangled probe, the minimal
    Choi eigenvalue of the intermediate map over the following grid
    step, and the pair distance of the backflow probe pair.
    """
    if switch_time <= 0.0:
        raise PreconditionError("switch time must be positive")
    if switch_time > prelude_rates.domain_end:
        raise PreconditionError("prelude domain must cover the switch time")
    times = np.asarray(grid, dtype=float)
    composite = _composite_profile(prelude_rates, continuation_rates, switch_time)
    _validate_grid(times, switch_time, composite.domain_end)

    for t in np.linspace(0.0, switch_time, _PRE_SAMPLES):
        if not is_cp_divisible_at(prelude_rates, float(t), tol=_RATE_TOL):
            raise PreconditionError(
                f"prelude must be CP-divisible: negative rate at t={t:.6g}"
            )
    lam_switch = decay_factors(composite, 0.0, switch_time)
    if not is_entanglement_breaking(lam_switch):
        raise PreconditionError(
            "prelude map at the switch time must be entanglement breaking"
        )
    horizon = float(times[-1]) - switch_time
    has_negative_rate = False
    for t in np.linspace(0.0, horizon, _PRE_SAMPLES):
        if not is_p_divisible_at(continuation_rates, float(t), tol=_RATE_TOL):
            raise PreconditionError(
                f"continuation must be P-divisible: negative pair sum at t={t:.6g}"
            )
        if np.min(continuation_rates.rates(float(t))) < -_RATE_TOL:
            has_negative_rate = True
    if not has_negative_rate:
        raise PreconditionError(
            "continuation must have a negative rate somewhere on the grid horizon"
        )

    phi = max_entangled_state(2)
    n = times.size

    def row(i: int) -> tuple[float, float]:
        t = float(times[i])
        evolved = extend_with_identity(decay_factors(composite, 0.0, t), (2,)).apply(
            phi.matrix
        )
        neg = _negativity_raw(evolved, (2, 2))
        if i + 1 < n:
            upper = float(times[i + 1])
        else:
            upper = min(t + float(times[i] - times[i - 1]), composite.domain_end)
        if upper > t:
            chi = choi_min_eigenvalue(intermediate_map(composite, t, upper))
        else:
            chi = 0.0
        return neg, chi

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    negativities = tuple(r[0] for r in rows)
    choi_mins = tuple(r[1] for r in rows)

    after = times >= switch_time - 1e-12
    blind = bool(np.all(np.asarray(negativities)[after] <= NEGATIVITY_TOL))

    tau_star = None
    for i in range(n - 1):
        if after[i] and choi_mins[i] < -INTERMEDIATE_NEG_TOL:
            tau_star = i
            break
    noncp = tau_star is not None

    backflow = None
    c2_values = tuple(0.0 for _ in range(n))
    if noncp:
        ti = float(times[tau_star])
        dt = float(times[tau_star + 1]) - ti
        backflow = detect_backflow(composite, ti, dt, epsilon=epsilon)
        direction = _best_direction(intermediate_map(composite, ti, ti + dt))
        if direction is not None:
            pair = pull_back_pair(direction, composite, ti, epsilon=epsilon)
            c2_values = tuple(
                _pair_distance_at(pair, composite, float(t)) for t in times
            )

    return EntanglementBlindReport(
        switch_time=float(switch_time),
        times=tuple(float(t) for t in times),
        negativities=negativities,
        choi_min_intermediate=choi_mins,
        c2_values=c2_values,
        prelude_breaking=True,
        blind_after_switch=blind,
        noncp_after_switch=noncp,
        backflow=backflow,
    )
