"""Random-unitary qubit dynamics and their divisibility structure.

A rate profile (gamma_x, gamma_y, gamma_z) on [0, T] generates a family of
Pauli channels: the map from time t0 to t1 multiplies the Bloch components by

    d_x = exp(-I(gamma_z + gamma_y)),
    d_y = exp(-I(gamma_z + gamma_x)),
    d_z = exp(-I(gamma_x + gamma_y)),

where I(.) integrates over [t0, t1]. Each Bloch axis is damped by the two
rates that do not commute with it. The same formula with t0 > 0 gives the
intermediate map, which is where complete positivity can fail while the full
dynamics from zero stays perfectly valid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import (
    DimensionMismatchError,
    EpsilonRangeError,
    NonBijectiveError,
    QuadratureError,
    TimeOrderViolationError,
)
from .linalg import PAULIS, DensityMatrix, as_matrix, max_entangled_state, tensor_product

_TIME_SLACK = 1e-12
QUAD_ABS_TOL = 1e-10


def _log_cosh(t: float) -> float:
    # numerically stable for large |t|
    a = abs(t)
    return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True)
class RateProfile:
    """Time-dependent rates (gamma_x, gamma_y, gamma_z) on [0, domain_end].

    evaluate(t) returns the three rates at time t. pair_integrals, when
    present, returns the exact integrals over [t0, t1] of the three pair sums
    (gamma_y+gamma_z, gamma_x+gamma_z, gamma_x+gamma_y) in that order, i.e.
    ordered by the Bloch axis they damp. Profiles without an exact
    antiderivative fall back to adaptive quadrature at 1e-10 absolute
    tolerance.
    """

    evaluate: Callable[[float], tuple[float, float, float]]
    domain_end: float
    pair_integrals: Callable[[float, float], tuple[float, float, float]] | None = None
    label: str = "custom"

    def rates(self, t: float) -> np.ndarray:
        return np.asarray(self.evaluate(t), dtype=float)

    def pair_sums(self, t: float) -> np.ndarray:
        gx, gy, gz = self.evaluate(t)
        return np.array([gy + gz, gx + gz, gx + gy])

    def integrate_pair_sums(self, t0: float, t1: float) -> np.ndarray:
        _check_interval(self, t0, t1)
        if self.pair_integrals is not None:
            return np.asarray(self.pair_integrals(t0, t1), dtype=float)
        out = []
        for idx in range(3):
            val, err = quad(
                lambda t, k=idx: self.pair_sums(t)[k],
                t0,
                t1,
                epsabs=QUAD_ABS_TOL,
                epsrel=QUAD_ABS_TOL,
                limit=200,
            )
            if err > max(1e-8, 1e-8 * abs(val)):
                raise QuadratureError(
                    f"pair-sum integral on [{t0}, {t1}] reported error {err:.2e}"
                )
            out.append(val)
        return np.asarray(out)


def _check_interval(profile: RateProfile, t0: float, t1: float) -> None:
    if t0 < -_TIME_SLACK or t1 < t0 - _TIME_SLACK:
        raise TimeOrderViolationError(f"need 0 <= t0 <= t1, got ({t0}, {t1})")
    if t1 > profile.domain_end + _TIME_SLACK:
        raise TimeOrderViolationError(
            f"t1={t1} beyond profile domain end {profile.domain_end}"
        )


def constant_rates(gx: float, gy: float, gz: float, domain_end: float = math.inf) -> RateProfile:
    sums = np.array([gy + gz, gx + gz, gx + gy])

    def integrals(t0: float, t1: float):
        return tuple(sums * (t1 - t0))

    return RateProfile(
        evaluate=lambda t: (gx, gy, gz),
        domain_end=domain_end,
        pair_integrals=integrals,
        label=f"constant({gx},{gy},{gz})",
    )


def eternal_rates(domain_end: float = math.inf) -> RateProfile:
    """gamma_x = gamma_y = 1, gamma_z = -tanh(t).

    P-divisible for all times (pair sums 1 - tanh t >= 0 and 2), never
    CP-divisible for t > 0, and famously blind to every ancilla-free witness.
    The pair-sum antiderivatives are t - ln(cosh t), t - ln(cosh t), 2t.
    """

    def integrals(t0: float, t1: float):
        ix = (t1 - _log_cosh(t1)) - (t0 - _log_cosh(t0))
        return (ix, ix, 2.0 * (t1 - t0))

    return RateProfile(
        evaluate=lambda t: (1.0, 1.0, -math.tanh(t)),
        domain_end=domain_end,
        pair_integrals=integrals,
        label="eternal",
    )


def table_rates(times: Sequence[float], gammas: Sequence[Sequence[float]]) -> RateProfile:
    """Linear interpolation through sampled rates; domain ends at the last knot."""
    ts = np.asarray(times, dtype=float)
    gs = np.asarray(gammas, dtype=float)
    if ts.ndim != 1 or gs.shape != (ts.size, 3):
        raise DimensionMismatchError("need times (n,) and gammas (n, 3)")
    if ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise TimeOrderViolationError("table times must be strictly increasing, n >= 2")
    if ts[0] > _TIME_SLACK:
        raise TimeOrderViolationError("table must start at t = 0")

    pair = np.stack([gs[:, 1] + gs[:, 2], gs[:, 0] + gs[:, 2], gs[:, 0] + gs[:, 1]], axis=1)
    # cumulative exact integrals of the piecewise-linear interpolant at knots
    seg = 0.5 * (pair[1:] + pair[:-1]) * np.diff(ts)[:, None]
    cum = np.vstack([np.zeros(3), np.cumsum(seg, axis=0)])

    def value_at(t: float) -> np.ndarray:
        return np.array([np.interp(t, ts, gs[:, k]) for k in range(3)])

    def cum_at(t: float) -> np.ndarray:
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), ts.size - 2)
        dt = t - ts[i]
        p0 = pair[i]
        slope = (pair[i + 1] - pair[i]) / (ts[i + 1] - ts[i])
        return cum[i] + p0 * dt + 0.5 * slope * dt * dt

    def integrals(t0: float, t1: float):
        return tuple(cum_at(t1) - cum_at(t0))

    return RateProfile(
        evaluate=lambda t: tuple(value_at(t)),
        domain_end=float(ts[-1]),
        pair_integrals=integrals,
        label="table",
    )


def load_rate_table_csv(path: str) -> RateProfile:
    """Read a `t,gamma_x,gamma_y,gamma_z` CSV into an interpolated profile."""
    times: list[float] = []
    gammas: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "gamma_x", "gamma_y", "gamma_z"]:
            raise DimensionMismatchError(
                "rate table must start with header 't,gamma_x,gamma_y,gamma_z'"
            )
        for row in reader:
            if not row:
                continue
            times.append(float(row[0]))
            gammas.append([float(row[1]), float(row[2]), float(row[3])])
    return table_rates(times, gammas)


@dataclass(frozen=True)
class PauliChannelMap:
    """Bloch-diagonal qubit map: sigma_k -> d_k sigma_k, identity fixed."""

    d_x: float
    d_y: float
    d_z: float

    @property
    def factors(self) -> np.ndarray:
        return np.array([self.d_x, self.d_y, self.d_z])

    def mixing_weights(self) -> np.ndarray:
        """Coefficients q_mu with map(rho) = sum_mu q_mu sigma_mu rho sigma_mu.

        The q_mu sum to 1 but may be negative for non-CP maps; the identity
        still holds as a linear statement.
        """
        dx, dy, dz = self.d_x, self.d_y, self.d_z
        return 0.25 * np.array(
            [1 + dx + dy + dz, 1 + dx - dy - dz, 1 - dx + dy - dz, 1 - dx - dy + dz]
        )


def decay_factors(rates: RateProfile, t0: float, t1: float) -> PauliChannelMap:
    """The map accumulated between t0 and t1 (t0 = 0 gives the full dynamics)."""
    ix, iy, iz = rates.integrate_pair_sums(t0, t1)
    return PauliChannelMap(d_x=math.exp(-ix), d_y=math.exp(-iy), d_z=math.exp(-iz))


def intermediate_map(rates: RateProfile, t: float, s: float) -> PauliChannelMap:
    """V_{s,t}: the piece of dynamics between t and s (t <= s)."""
    return decay_factors(rates, t, s)


def invert_channel(ch: PauliChannelMap, tol: float = 1e-13) -> PauliChannelMap:
    if np.any(np.abs(ch.factors) <= tol):
        raise NonBijectiveError("a decay factor is numerically zero; cannot invert")
    return PauliChannelMap(d_x=1.0 / ch.d_x, d_y=1.0 / ch.d_y, d_z=1.0 / ch.d_z)


def compose(later: PauliChannelMap, earlier: PauliChannelMap) -> PauliChannelMap:
    f = later.factors * earlier.factors
    return PauliChannelMap(*f)


def apply_channel(ch: PauliChannelMap, state):
    """Apply the map to a single-qubit operator.

    Accepts a DensityMatrix (returns DensityMatrix) or a bare 2x2 array
    (returns an array). For non-CP maps the output of a bare-array call can
    fail positivity; that is the caller's concern.
    """
    mat = as_matrix(state)
    if mat.shape != (2, 2):
        raise DimensionMismatchError("apply_channel acts on single-qubit operators")
    out = np.zeros((2, 2), dtype=complex)
    for q, sigma in zip(ch.mixing_weights(), PAULIS):
        out += q * sigma @ mat @ sigma.conj().T
    if isinstance(state, DensityMatrix):
        return DensityMatrix(matrix=out, dims=state.dims, _skip_checks=True)
    return out


class ExtendedChannel:
    """identity (x) map on ancilla factors, with the map on the last factor."""

    def __init__(self, ch: PauliChannelMap, ancilla_dims: Sequence[int]):
        self.channel = ch
        self.ancilla_dims = tuple(int(d) for d in ancilla_dims)
        anc = int(np.prod(self.ancilla_dims)) if self.ancilla_dims else 1
        self.dim = anc * 2
        eye = np.eye(anc, dtype=complex)
        self._lifted = [tensor_product(eye, s) for s in PAULIS]
        self._weights = ch.mixing_weights()

    def apply(self, operator) -> np.ndarray:
        mat = as_matrix(operator)
        if mat.shape != (self.dim, self.dim):
            raise DimensionMismatchError(
                f"expected shape {(self.dim, self.dim)}, got {mat.shape}"
            )
        out = np.zeros_like(mat)
        for q, u in zip(self._weights, self._lifted):
            out += q * u @ mat @ u.conj().T
        return out

    def apply_state(self, state: DensityMatrix) -> DensityMatrix:
        return DensityMatrix(
            matrix=self.apply(state.matrix), dims=state.dims, _skip_checks=True
        )


def extend_with_identity(ch: PauliChannelMap, ancilla_dims: Sequence[int]) -> ExtendedChannel:
    return ExtendedChannel(ch, ancilla_dims)


def choi_matrix(ch: PauliChannelMap) -> np.ndarray:
    """(id (x) map) applied to |Phi+><Phi+|; normalized to trace 1."""
    phi = max_entangled_state(2)
    return extend_with_identity(ch, (2,)).apply(phi.matrix)


def choi_eigenvalues(ch: PauliChannelMap) -> np.ndarray:
    """Closed form, ascending. The Bell basis diagonalizes the Choi state."""
    dx, dy, dz = ch.d_x, ch.d_y, ch.d_z
    vals = 0.25 * np.array(
        [1 + dx + dy + dz, 1 + dz - dx - dy, 1 - dz + dx - dy, 1 - dz - dx + dy]
    )
    return np.sort(vals)


def choi_min_eigenvalue(ch: PauliChannelMap) -> float:
    return float(choi_eigenvalues(ch)[0])


def is_cp(ch: PauliChannelMap, tol: float = 1e-10) -> bool:
    return choi_min_eigenvalue(ch) >= -tol


def is_cp_divisible_at(rates: RateProfile, t: float, tol: float = 1e-12) -> bool:
    """Pointwise test: all three rates non-negative."""
    return bool(np.all(rates.rates(t) >= -tol))


def is_p_divisible_at(rates: RateProfile, t: float, tol: float = 1e-12) -> bool:
    """Pointwise test: all pairwise rate sums non-negative."""
    return bool(np.all(rates.pair_sums(t) >= -tol))


@dataclass(frozen=True)
class DivisibilityVerdict:
    t: float
    s: float
    gammas: tuple[float, float, float]
    decay: PauliChannelMap
    choi_min_eig: float
    cp_divisible: bool
    p_divisible: bool


def classify_interval(
    rates: RateProfile, pairs: Sequence[tuple[float, float]], rate_tol: float = 1e-12
) -> list[DivisibilityVerdict]:
    """Pointwise rate tests at t combined with the Choi test of V_{s,t}."""
    verdicts = []
    for t, s in pairs:
        ch = intermediate_map(rates, t, s)
        gx, gy, gz = rates.evaluate(t)
        verdicts.append(
            DivisibilityVerdict(
                t=float(t),
                s=float(s),
                gammas=(float(gx), float(gy), float(gz)),
                decay=ch,
                choi_min_eig=choi_min_eigenvalue(ch),
                cp_divisible=is_cp_divisible_at(rates, t, rate_tol),
                p_divisible=is_p_divisible_at(rates, t, rate_tol),
            )
        )
    return verdicts


@dataclass(frozen=True)
class GkslGenerator:
    """Time-local generator: i[H, rho] + sum_k w_k (G rho G+ - {G+G, rho}/2)."""

    hamiltonian: Callable[[float], np.ndarray] | None
    jump_operators: tuple[np.ndarray, ...]
    weights: Callable[[float], np.ndarray]


def gksl_apply(gen: GkslGenerator, state, t: float) -> np.ndarray:
    rho = as_matrix(state)
    out = np.zeros_like(rho)
    if gen.hamiltonian is not None:
        h = gen.hamiltonian(t)
        out += 1j * (h @ rho - rho @ h)
    w = np.asarray(gen.weights(t), dtype=float)
    for wk, g in zip(w, gen.jump_operators):
        gdg = g.conj().T @ g
        out += wk * (g @ rho @ g.conj().T - 0.5 * (gdg @ rho + rho @ gdg))
    return out


def random_unitary_generator(rates: RateProfile) -> GkslGenerator:
    """Generator whose integrated dynamics reproduces decay_factors.

    The jump operators are the Pauli matrices with weights gamma_k/2; the
    factor 1/2 makes d/ds of the accumulated map at s = t agree with the
    decay-factor exponents (each Bloch axis damps at the pairwise rate sum,
    not twice it).
    """
    return GkslGenerator(
        hamiltonian=None,
        jump_operators=(PAULIS[1], PAULIS[2], PAULIS[3]),
        weights=lambda t: 0.5 * rates.rates(t),
    )


def tune_rates_shrink_image(rates: RateProfile, epsilon: float, t_activate: float) -> RateProfile:
    """Prepend a constant CP-divisible burst so decay factors at t_activate <= epsilon.

    The burst rate c = -ln(epsilon) / (2 * t_activate) makes each pairwise sum
    integrate to -ln(epsilon) over the burst window, which is what bounds the
    decay factors. epsilon = 1 returns the profile unchanged.
    """
    if not (0.0 < epsilon <= 1.0):
        raise EpsilonRangeError(f"epsilon must be in (0, 1], got {epsilon}")
    if epsilon == 1.0:
        return rates
    if t_activate <= 0:
        raise TimeOrderViolationError("t_activate must be positive")
    c = -math.log(epsilon) / (2.0 * t_activate)
    burst_pair = np.array([2.0 * c, 2.0 * c, 2.0 * c])

    def evaluate(t: float):
        if t < t_activate:
            return (c, c, c)
        return rates.evaluate(t)

    def integrals(t0: float, t1: float):
        lo, hi = min(t0, t_activate), min(t1, t_activate)
        burst_part = burst_pair * max(0.0, hi - lo)
        tail_part = np.zeros(3)
        if t1 > t_activate:
            tail_part = rates.integrate_pair_sums(max(t0, t_activate), t1)
        return tuple(burst_part + tail_part)

    return RateProfile(
        evaluate=evaluate,
        domain_end=rates.domain_end,
        pair_integrals=integrals,
        label=f"burst({epsilon:g})+{rates.label}",
    )
