"""Probe pair construction, evolution, and backflow detection."""

from __future__ import annotations

import numpy as np
import pytest

from backflow.channels import (
    PauliChannelMap,
    choi_matrix,
    choi_min_eigenvalue,
    constant_rates,
    decay_factors,
    eternal_rates,
    extend_with_identity,
    intermediate_map,
)
from backflow.ensembles import correlation_C_general, correlation_CA2, correlation_CB2
from backflow.errors import (
    DimensionMismatchError,
    ExpansionNotFoundError,
    InvalidStateError,
    NonBijectiveError,
    TimeOrderViolationError,
)
from backflow.linalg import (
    DensityMatrix,
    SIGMA_X,
    SIGMA_Z,
    maximally_mixed,
    partial_trace,
    partial_transpose,
    pure_state,
    trace_norm,
)
from backflow.probe import (
    ProbePair,
    build_probe_state,
    detect_backflow,
    evolve_probe,
    pull_back_pair,
    scan_backflow_grid,
    trace_norm_expansion_direction,
)

ETERNAL = eternal_rates()
# eternal grid point where no qubit-ancilla witness exists despite a
# clearly non-CP intermediate map (Choi minimum about -0.018)
GAP_TAU = 2.0 / 9.0
GAP_DT = 0.2


def expansion_ratio(ch: PauliChannelMap, direction: np.ndarray) -> float:
    ext = extend_with_identity(ch, (direction.shape[0] // 2,))
    return trace_norm(ext.apply(direction))


def choi_negative_mass(ch: PauliChannelMap) -> float:
    w = np.linalg.eigvalsh(choi_matrix(ch))
    return float(-w[w < 0.0].sum())


def eternal_pair(tau=0.5, delta_t=0.5, epsilon=0.05):
    ch = intermediate_map(ETERNAL, tau, tau + delta_t)
    direction = trace_norm_expansion_direction(ch)
    return pull_back_pair(direction, ETERNAL, tau, epsilon=epsilon)


def handmade_pair(epsilon=0.05):
    unit = 0.25 * np.kron(SIGMA_X, SIGMA_Z)  # unit trace norm, traceless
    base = np.eye(4, dtype=complex) / 4.0
    rho1 = DensityMatrix(matrix=base + epsilon * unit, dims=(2, 2))
    rho2 = DensityMatrix(matrix=base - epsilon * unit, dims=(2, 2))
    return ProbePair(rho1_0=rho1, rho2_0=rho2, tau=0.0, perturbation_scale=epsilon)


def pair_distance_at(pair: ProbePair, rates, t: float) -> float:
    ext = extend_with_identity(decay_factors(rates, 0.0, t), (pair.rho1_0.dims[0],))
    return 0.25 * trace_norm(ext.apply(pair.rho1_0.matrix - pair.rho2_0.matrix))


class TestExpansionDirection:
    @pytest.mark.parametrize("ancilla_dim", [2, 3])
    def test_identity_channel_has_no_expansion(self, ancilla_dim):
        ch = decay_factors(constant_rates(0.0, 0.0, 0.0), 0.0, 1.0)
        with pytest.raises(ExpansionNotFoundError) as exc_info:
            trace_norm_expansion_direction(ch, ancilla_dim=ancilla_dim)
        assert exc_info.value.best_ratio == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("ancilla_dim", [2, 3])
    def test_cp_depolarizing_contracts(self, ancilla_dim):
        ch = PauliChannelMap(d_x=0.5, d_y=0.5, d_z=0.5)
        with pytest.raises(ExpansionNotFoundError) as exc_info:
            trace_norm_expansion_direction(ch, ancilla_dim=ancilla_dim)
        assert exc_info.value.best_ratio <= 1.0 + 1e-10

    def test_eternal_midtime_qubit_witness(self):
        ch = intermediate_map(ETERNAL, 0.5, 1.0)
        direction = trace_norm_expansion_direction(ch)
        assert direction.shape == (4, 4)
        assert np.allclose(direction, direction.conj().T, atol=1e-12)
        assert abs(np.trace(direction)) < 1e-12
        assert trace_norm(direction) == pytest.approx(1.0, abs=1e-10)
        assert expansion_ratio(ch, direction) > 1.0 + 1e-6

    def test_qubit_gap_interval_raises(self):
        ch = intermediate_map(ETERNAL, GAP_TAU, GAP_TAU + GAP_DT)
        assert choi_min_eigenvalue(ch) < -0.01
        with pytest.raises(ExpansionNotFoundError) as exc_info:
            trace_norm_expansion_direction(ch, ancilla_dim=2)
        assert exc_info.value.best_ratio == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize(
        "t0,t1",
        [(GAP_TAU, GAP_TAU + GAP_DT), (0.5, 0.6), (0.5, 1.0), (1.0, 1.5)],
    )
    def test_qutrit_witness_reaches_choi_negativity(self, t0, t1):
        ch = intermediate_map(ETERNAL, t0, t1)
        direction = trace_norm_expansion_direction(ch, ancilla_dim=3)
        assert direction.shape == (6, 6)
        assert abs(np.trace(direction)) < 1e-12
        assert trace_norm(direction) == pytest.approx(1.0, abs=1e-10)
        floor = 1.0 + choi_negative_mass(ch)
        assert expansion_ratio(ch, direction) >= floor - 1e-9

    def test_strongly_noncp_qubit_witness(self):
        ch = intermediate_map(constant_rates(1.0, 1.0, -3.0), 0.1, 0.3)
        direction = trace_norm_expansion_direction(ch, ancilla_dim=2)
        assert expansion_ratio(ch, direction) > 1.4

    def test_bad_ancilla_dim_rejected(self):
        ch = intermediate_map(ETERNAL, 0.5, 1.0)
        with pytest.raises(DimensionMismatchError):
            trace_norm_expansion_direction(ch, ancilla_dim=4)


class TestPullBackPair:
    def test_zero_direction_returns_base(self):
        pair = pull_back_pair(np.zeros((4, 4)), ETERNAL, 0.5)
        assert np.allclose(pair.rho1_0.matrix, np.eye(4) / 4.0, atol=1e-14)
        assert np.allclose(pair.rho2_0.matrix, pair.rho1_0.matrix, atol=1e-14)

    def test_identity_dynamics_preserves_direction(self):
        unit = 0.25 * np.kron(SIGMA_Z, SIGMA_X)
        pair = pull_back_pair(unit, constant_rates(0.0, 0.0, 0.0), 0.7, epsilon=0.04)
        diff = pair.rho1_0.matrix - pair.rho2_0.matrix
        assert np.allclose(diff / trace_norm(diff), unit, atol=1e-12)
        assert 0.5 * trace_norm(diff) == pytest.approx(0.04, abs=1e-12)

    def test_round_trip_realigns_with_direction(self):
        tau = 0.5
        ch = intermediate_map(ETERNAL, tau, 1.0)
        direction = trace_norm_expansion_direction(ch)
        pair = pull_back_pair(direction, ETERNAL, tau)
        fwd = extend_with_identity(decay_factors(ETERNAL, 0.0, tau), (2,))
        evolved_diff = fwd.apply(pair.rho1_0.matrix - pair.rho2_0.matrix)
        assert np.allclose(evolved_diff / trace_norm(evolved_diff), direction, atol=1e-10)

    def test_initial_distance_is_epsilon(self):
        pair = eternal_pair(epsilon=0.05)
        dist = 0.5 * trace_norm(pair.rho1_0.matrix - pair.rho2_0.matrix)
        assert dist == pytest.approx(0.05, abs=1e-12)
        assert pair.perturbation_scale == 0.05

    def test_qutrit_direction_gives_qutrit_pair(self):
        ch = intermediate_map(ETERNAL, GAP_TAU, GAP_TAU + GAP_DT)
        direction = trace_norm_expansion_direction(ch, ancilla_dim=3)
        pair = pull_back_pair(direction, ETERNAL, GAP_TAU)
        assert tuple(pair.rho1_0.dims) == (3, 2)
        avg = 0.5 * (pair.rho1_0.matrix + pair.rho2_0.matrix)
        assert np.allclose(avg, np.eye(6) / 6.0, atol=1e-14)

    def test_nonbijective_dynamics_rejected(self):
        unit = 0.25 * np.kron(SIGMA_Z, SIGMA_X)
        with pytest.raises(NonBijectiveError):
            pull_back_pair(unit, constant_rates(200.0, 200.0, 200.0), 1.0)

    def test_wrong_shapes_rejected(self):
        with pytest.raises(DimensionMismatchError):
            pull_back_pair(np.zeros((3, 3)), ETERNAL, 0.5)
        with pytest.raises(DimensionMismatchError):
            pull_back_pair(np.zeros((6, 6)), ETERNAL, 0.5, sigma=maximally_mixed((2, 2)))

    def test_pair_separation_invariant_enforced(self):
        rho1 = pure_state(np.array([1, 0, 0, 0], dtype=complex), (2, 2))
        rho2 = pure_state(np.array([0, 1, 0, 0], dtype=complex), (2, 2))
        with pytest.raises(InvalidStateError):
            ProbePair(rho1_0=rho1, rho2_0=rho2, tau=0.0, perturbation_scale=0.05)

    def test_pair_needs_qubit_system_factor(self):
        odd = maximally_mixed((2, 3))
        with pytest.raises(DimensionMismatchError):
            ProbePair(rho1_0=odd, rho2_0=odd, tau=0.0, perturbation_scale=0.1)


class TestProbeState:
    def test_equal_pair_gives_product_with_zero_correlation(self):
        sigma = maximally_mixed((2, 2))
        pair = ProbePair(rho1_0=sigma, rho2_0=sigma, tau=0.0, perturbation_scale=0.05)
        ps = build_probe_state(pair)
        assert np.allclose(
            ps.matrix.matrix, np.kron(np.eye(2) / 2.0, sigma.matrix), atol=1e-14
        )
        assert correlation_CA2(ps.matrix) == pytest.approx(0.0, abs=1e-9)

    def test_closed_form_matches_optimizer(self):
        pair = eternal_pair()
        ps = build_probe_state(pair)
        want = 0.25 * trace_norm(pair.rho1_0.matrix - pair.rho2_0.matrix)
        assert correlation_CA2(ps.matrix) == pytest.approx(want, abs=1e-6)

    def test_partial_transpose_over_flag_is_psd(self):
        ps = build_probe_state(eternal_pair())
        pt = partial_transpose(ps.matrix.matrix, ps.matrix.dims, 0)
        assert np.linalg.eigvalsh(pt).min() >= -1e-12

    def test_flag_marginal_is_maximally_mixed(self):
        ps = build_probe_state(eternal_pair())
        flag = partial_trace(ps.matrix, keep=(0,))
        assert np.allclose(flag.matrix, np.eye(2) / 2.0, atol=1e-12)


class TestEvolveProbe:
    def test_time_zero_is_identity(self):
        ps = build_probe_state(eternal_pair())
        evolved = evolve_probe(ps, ETERNAL, 0.0)
        assert np.allclose(evolved.matrix.matrix, ps.matrix.matrix, atol=1e-14)

    def test_zero_rates_are_static(self):
        ps = build_probe_state(handmade_pair())
        evolved = evolve_probe(ps, constant_rates(0.0, 0.0, 0.0), 2.0)
        assert np.allclose(evolved.matrix.matrix, ps.matrix.matrix, atol=1e-14)

    def test_cp_rates_never_increase_distance(self):
        rates = constant_rates(1.0, 1.0, 1.0)
        pair = handmade_pair()
        ts = np.linspace(0.0, 1.5, 7)
        dists = [pair_distance_at(pair, rates, t) for t in ts]
        assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))

    def test_block_structure_preserved(self):
        ps = build_probe_state(eternal_pair())
        evolved = evolve_probe(ps, ETERNAL, 1.3)
        mat = evolved.matrix.matrix
        assert np.allclose(mat[:4, 4:], 0.0, atol=1e-14)
        assert np.allclose(mat[4:, :4], 0.0, atol=1e-14)


class TestDetectBackflow:
    def test_cp_constant_rates_consistent(self):
        report = detect_backflow(constant_rates(1.0, 1.0, 1.0), 0.3, 0.5)
        assert not report.backflow_detected
        assert report.consistent
        assert not report.inconclusive
        assert report.choi_min_eig > 1e-8
        assert report.c2_after <= report.c2_before + 1e-9

    def test_eternal_backflow_detected(self):
        report = detect_backflow(ETERNAL, 0.5, 0.5)
        assert report.backflow_detected
        assert report.consistent
        assert not report.inconclusive
        assert report.choi_min_eig == pytest.approx(-0.07302843892286548, rel=1e-9)
        assert report.c2_after - report.c2_before > 1e-8

    def test_qubit_gap_point_upgrades_and_stays_consistent(self):
        report = detect_backflow(ETERNAL, GAP_TAU, GAP_DT)
        assert report.backflow_detected
        assert report.consistent
        assert not report.inconclusive
        assert report.c2_after - report.c2_before > 1e-6

    def test_epsilon_linearity(self):
        full = detect_backflow(ETERNAL, 0.5, 0.5, epsilon=0.05)
        half = detect_backflow(ETERNAL, 0.5, 0.5, epsilon=0.025)
        assert half.backflow_detected == full.backflow_detected
        assert half.consistent == full.consistent
        assert half.c2_before == pytest.approx(0.5 * full.c2_before, rel=1e-9)
        assert half.c2_after == pytest.approx(0.5 * full.c2_after, rel=1e-9)

    def test_boundary_band_point_reports_cleanly(self):
        # the accumulated eternal map touches the CP boundary exactly
        report = detect_backflow(ETERNAL, 0.0, 0.5)
        assert abs(report.choi_min_eig) < 1e-8
        assert not report.backflow_detected
        assert report.consistent
        assert not report.inconclusive

    def test_time_order_violations(self):
        with pytest.raises(TimeOrderViolationError):
            detect_backflow(ETERNAL, -0.1, 0.5)
        with pytest.raises(TimeOrderViolationError):
            detect_backflow(ETERNAL, 0.5, 0.0)


class TestScanGrid:
    def test_row_major_order_matches_single_calls(self):
        taus = [0.5, 1.0]
        dts = [0.3, 0.6]
        reports = scan_backflow_grid(ETERNAL, taus, dts)
        assert [(r.tau, r.delta_t) for r in reports] == [
            (0.5, 0.3), (0.5, 0.6), (1.0, 0.3), (1.0, 0.6)
        ]
        for report in reports:
            single = detect_backflow(ETERNAL, report.tau, report.delta_t)
            assert report.c2_before == single.c2_before
            assert report.c2_after == single.c2_after
            assert report.consistent == single.consistent

    def test_threaded_scan_matches_sequential(self):
        taus = [GAP_TAU, 0.8]
        dts = [0.2, 0.9]
        seq = scan_backflow_grid(ETERNAL, taus, dts)
        par = scan_backflow_grid(ETERNAL, taus, dts, threads=4)
        assert [(r.c2_before, r.c2_after, r.consistent, r.inconclusive) for r in seq] == [
            (r.c2_before, r.c2_after, r.consistent, r.inconclusive) for r in par
        ]


@pytest.fixture(scope="module")
def probe_states():
    states = []
    for tau, delta_t in [(0.5, 0.5), (GAP_TAU, GAP_DT)]:
        ch = intermediate_map(ETERNAL, tau, tau + delta_t)
        try:
            direction = trace_norm_expansion_direction(ch, ancilla_dim=2)
        except ExpansionNotFoundError:
            direction = trace_norm_expansion_direction(ch, ancilla_dim=3)
        pair = pull_back_pair(direction, ETERNAL, tau)
        ps = build_probe_state(pair)
        for t in (tau, tau + 0.5 * delta_t, tau + delta_t):
            states.append((pair, t, evolve_probe(ps, ETERNAL, t)))
    return states


class TestCorrelationOrderings:
    """Measured-side orderings on generated probe states."""

    def test_a_side_attains_the_optimum(self, probe_states):
        for _, _, ps in probe_states:
            ca = correlation_CA2(ps.matrix)
            cb = correlation_CB2(ps.matrix)
            assert ca >= cb - 1e-6

    def test_more_outputs_do_not_help(self, probe_states):
        for _, _, ps in probe_states:
            ca = correlation_CA2(ps.matrix)
            cb = correlation_CB2(ps.matrix)
            cg = correlation_C_general(ps.matrix, max_outputs=4)
            assert cg <= max(ca, cb) + 1e-3

    def test_closed_form_tracks_evolution(self, probe_states):
        for pair, t, ps in probe_states:
            want = pair_distance_at(pair, ETERNAL, t)
            assert correlation_CA2(ps.matrix) == pytest.approx(want, abs=1e-6)
