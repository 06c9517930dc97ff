"""Measurements, state ensembles, and measurement-based correlation measures.

The central objects are POVMs that are equiprobable on a reference state
(every outcome has probability exactly 1/n), the guessing probability of the
ensembles such measurements prepare on the far side of a bipartite state, and
the correlation quantifier built from them: the best guessing probability over
equiprobable measurements minus the blind-guess baseline 1/2.

Two-output measurements on a qubit side reduce to a search over the Bloch
sphere, which is what makes the optimizer here reliable enough to compare
against closed forms at 1e-6. Larger measured sides use a penalty search over
a traceless Hermitian operator basis, kept honest by an exact feasibility
projection before any value is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import (
    DegenerateSplitError,
    DimensionMismatchError,
    InvalidStateError,
    SubsystemIndexError,
)
from .linalg import (
    PAULIS,
    DensityMatrix,
    as_matrix,
    hermitian_eig,
    maximally_mixed,
    partial_trace,
    trace_norm,
)

ME_PROB_TOL = 1e-10
DEGENERATE_OUTCOME_TOL = 1e-14


# ---------------------------------------------------------------------------
# POVMs


@dataclass(frozen=True)
class Povm:
    """A tuple of effects: Hermitian, PSD, summing to the identity."""

    effects: tuple[np.ndarray, ...]

    def __post_init__(self):
        effs = tuple(np.asarray(e, dtype=complex) for e in self.effects)
        object.__setattr__(self, "effects", effs)
        dim = effs[0].shape[0]
        total = np.zeros((dim, dim), dtype=complex)
        for e in effs:
            if e.shape != (dim, dim):
                raise DimensionMismatchError("POVM effects must share one dimension")
            if np.max(np.abs(e - e.conj().T)) > 1e-12:
                raise DimensionMismatchError("POVM effect is not Hermitian")
            if np.linalg.eigvalsh(e)[0] < -1e-10:
                raise DimensionMismatchError("POVM effect has a negative eigenvalue")
            total += e
        if np.max(np.abs(total - np.eye(dim))) > 1e-10:
            raise DimensionMismatchError("POVM effects do not sum to the identity")

    @property
    def n_outputs(self) -> int:
        return len(self.effects)

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]


@dataclass(frozen=True)
class MePovmCertificate:
    equiprobable: bool
    probabilities: tuple[float, ...]
    max_deviation: float


def is_me_povm(povm: Povm, state: DensityMatrix, tol: float = ME_PROB_TOL) -> MePovmCertificate:
    """Check whether every outcome is equiprobable on the given state."""
    n = povm.n_outputs
    probs = tuple(float(np.trace(state.matrix @ e).real) for e in povm.effects)
    dev = max(abs(p - 1.0 / n) for p in probs)
    return MePovmCertificate(equiprobable=dev <= tol, probabilities=probs, max_deviation=dev)


def construct_me_povm(state: DensityMatrix, n_outputs: int = 2) -> Povm:
    """Build an n-output POVM equiprobable on the given state.

    Work in the eigenbasis, eigenvalues descending. Lay the eigenvalue masses
    end to end on [0, 1] and cut into n equal pieces; the overlap of piece i
    with level j, divided by the level's mass, is the weight of level j in
    effect i. Levels with zero mass are assigned to the last effect whole.
    For two outputs this is exactly the prefix-sum construction with a single
    fractional level at the crossing.
    """
    if n_outputs < 2:
        raise DegenerateSplitError("need at least two outputs")
    dec = hermitian_eig(state.matrix)
    order = np.argsort(dec.eigenvalues)[::-1]
    lam = np.clip(dec.eigenvalues[order], 0.0, None)
    vecs = dec.eigenvectors[:, order]
    d = lam.size
    edges = np.concatenate([[0.0], np.cumsum(lam)])
    if edges[-1] <= 0:
        raise DegenerateSplitError("state has no probability mass")
    edges = edges / edges[-1]
    lam_norm = np.diff(edges)

    weights = np.zeros((n_outputs, d))
    for i in range(n_outputs):
        lo, hi = i / n_outputs, (i + 1) / n_outputs
        for j in range(d):
            a, b = edges[j], edges[j + 1]
            overlap = max(0.0, min(hi, b) - max(lo, a))
            if overlap > 0.0:
                if lam_norm[j] <= 0.0:
                    raise DegenerateSplitError("fractional split hit a zero eigenvalue")
                weights[i, j] = overlap / lam_norm[j]
    for j in range(d):  # zero-mass levels: park them in the last effect
        if lam_norm[j] <= 0.0:
            weights[-1, j] = 1.0
    # guard against rounding drift in the partition of unity
    weights[-1] += 1.0 - weights.sum(axis=0)

    effects = tuple((vecs * w) @ vecs.conj().T for w in weights)
    return Povm(effects=effects)


# ---------------------------------------------------------------------------
# measurement on one side of a composite state


@dataclass(frozen=True)
class EnsembleMember:
    probability: float
    state: DensityMatrix
    degenerate: bool = False


@dataclass(frozen=True)
class StateEnsemble:
    members: tuple[EnsembleMember, ...]

    def __post_init__(self):
        if not self.members:
            raise InvalidStateError("ensemble needs at least one member")
        total = sum(m.probability for m in self.members)
        if any(m.probability < -1e-12 for m in self.members) or abs(total - 1.0) > 1e-10:
            raise InvalidStateError("ensemble probabilities must be a distribution")
        dim = self.members[0].state.matrix.shape[0]
        if any(m.state.matrix.shape[0] != dim for m in self.members):
            raise DimensionMismatchError("ensemble states must share one dimension")

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(m.probability for m in self.members)

    @property
    def states(self) -> tuple[DensityMatrix, ...]:
        return tuple(m.state for m in self.members)


def _lift(op: np.ndarray, dims: Sequence[int], factor: int) -> np.ndarray:
    ops = [op if k == factor else np.eye(dims[k], dtype=complex) for k in range(len(dims))]
    lifted = ops[0]
    for o in ops[1:]:
        lifted = np.kron(lifted, o)
    return lifted


def _resolve_side(dims: Sequence[int], side) -> tuple[int, ...]:
    """Map a side designator (\"A\", \"B\", factor index, or index tuple) to factors."""
    if isinstance(side, str):
        if side.upper() == "A":
            return (0,)
        if side.upper() == "B":
            return tuple(range(1, len(dims)))
        raise SubsystemIndexError(f"unknown side {side!r}")
    if isinstance(side, (int, np.integer)):
        return (int(side),)
    return tuple(int(k) for k in side)


def measure_on_subsystem(state: DensityMatrix, povm: Povm, side=0) -> StateEnsemble:
    """Measure one side of a composite state; return outcomes and conditionals.

    side is "A" (the first factor), "B" (everything else), a factor index, or
    a tuple of factor indices. Outcomes with probability below 1e-14 are
    flagged degenerate and carry the maximally mixed conditional as a
    placeholder.
    """
    dims = state.dims
    measured = _resolve_side(dims, side)
    rest = tuple(k for k in range(len(dims)) if k not in measured)
    if not rest:
        raise SubsystemIndexError("measurement must leave an unmeasured side")
    mat, d_meas, d_rest = _bipartition(state, measured)
    if povm.dim != d_meas:
        raise DimensionMismatchError("POVM dimension does not match the measured side")
    rest_dims = tuple(dims[k] for k in rest)
    tensor = mat.reshape(d_meas, d_rest, d_meas, d_rest)
    members = []
    for effect in povm.effects:
        kernel = np.einsum("arbs,ba->rs", tensor, effect)
        p = float(np.trace(kernel).real)
        if p <= DEGENERATE_OUTCOME_TOL:
            members.append(
                EnsembleMember(
                    probability=max(p, 0.0),
                    state=maximally_mixed(rest_dims),
                    degenerate=True,
                )
            )
            continue
        cond = 0.5 * (kernel + kernel.conj().T) / p
        members.append(
            EnsembleMember(
                probability=p,
                state=DensityMatrix(matrix=cond, dims=rest_dims, _skip_checks=True),
            )
        )
    return StateEnsemble(members=tuple(members))


# ---------------------------------------------------------------------------
# guessing probability


def guessing_probability_two(state_a: DensityMatrix, state_b: DensityMatrix) -> float:
    """Optimal guessing probability for two equiprobable states."""
    return 0.25 * (2.0 + trace_norm(as_matrix(state_a) - as_matrix(state_b)))


@dataclass(frozen=True)
class OptimizerBudget:
    seeds: int = 8
    max_iterations: int = 300
    restarts: int = 2
    polish_maxfev: int = 600
    rng_seed: int = 0


@dataclass(frozen=True)
class DiscriminationResult:
    value: float
    iterations: int
    converged: bool
    budget_exhausted: bool
    povm: Povm | None = None

    def __float__(self) -> float:  # convenience for comparisons in callers
        return self.value


def _pinv_sqrt(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    w, u = np.linalg.eigh(mat)
    inv = np.where(w > tol, 1.0 / np.sqrt(np.clip(w, tol, None)), 0.0)
    return (u * inv) @ u.conj().T


def _povm_payoff(weighted: Sequence[np.ndarray], effects: Sequence[np.ndarray]) -> float:
    return float(sum(np.trace(w @ p).real for w, p in zip(weighted, effects)))


def guessing_probability_bruteforce(
    ensemble: StateEnsemble, budget: OptimizerBudget | None = None
) -> DiscriminationResult:
    """Lower bound on the guessing probability by fixed-point ascent.

    Iterates the discrimination map P_i <- L^{-1/2} W_i P_i W_i L^{-1/2} with
    L = sum_j W_j P_j W_j and W_i = p_i rho_i, from a pretty-good-measurement
    seed plus seeded random restarts; keeps the best payoff seen. For two
    states this lands on the Helstrom value to ~1e-10.
    """
    budget = budget or OptimizerBudget()
    ws = [m.probability * m.state.matrix for m in ensemble.members]
    n = len(ws)
    dim = ws[0].shape[0]
    rng = np.random.default_rng(budget.rng_seed)

    def run(start: Sequence[np.ndarray]) -> tuple[float, list[np.ndarray], int, bool]:
        effs = [p.copy() for p in start]
        best_val, best_effs = _povm_payoff(ws, effs), effs
        stall = 0
        it = 0
        for it in range(1, budget.max_iterations + 1):
            lam = sum(w @ p @ w for w, p in zip(ws, effs))
            li = _pinv_sqrt(lam)
            effs = [li @ w @ p @ w @ li for w, p in zip(ws, effs)]
            # A nearly singular lam amplifies rounding into real asymmetry and
            # negative parts, so certify the iterate before scoring it: clip to
            # the PSD cone, restore the sum by a sandwich, spread what is left.
            clipped = []
            for e in effs:
                ev, u = np.linalg.eigh(0.5 * (e + e.conj().T))
                clipped.append((u * np.clip(ev, 0.0, None)) @ u.conj().T)
            ti = _pinv_sqrt(sum(clipped))
            effs = [ti @ c @ ti for c in clipped]
            rem = np.eye(dim) - sum(effs)  # PSD: the uncovered null space
            effs = [p + rem / n for p in effs]
            val = _povm_payoff(ws, effs)
            if val > best_val + 1e-15:
                best_val, best_effs, stall = val, effs, 0
            else:
                stall += 1
                if stall >= 8:
                    return best_val, best_effs, it, True
        return best_val, best_effs, it, False

    # pretty good measurement seed
    ri = _pinv_sqrt(sum(ws))
    pgm = [ri @ w @ ri for w in ws]
    rem = np.eye(dim) - sum(pgm)
    seeds: list[list[np.ndarray]] = [[p + rem / n for p in pgm]]
    seeds.append([np.eye(dim) / n for _ in range(n)])
    # guess-the-prior baseline: assign everything to the most likely member
    imax = int(np.argmax([m.probability for m in ensemble.members]))
    seeds.append([np.eye(dim) if i == imax else np.zeros((dim, dim)) for i in range(n)])
    for _ in range(max(0, budget.seeds - 2)):
        gs = [rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)) for _ in range(n)]
        sq = [g @ g.conj().T + 1e-6 * np.eye(dim) for g in gs]
        ti = _pinv_sqrt(sum(sq))
        seeds.append([ti @ s @ ti for s in sq])

    best_val, best_effs, best_it, best_conv = -1.0, None, 0, False
    for s in seeds:
        val, effs, it, conv = run(s)
        if val > best_val:
            best_val, best_effs, best_it, best_conv = val, effs, it, conv
    povm = None
    if best_effs is not None:
        cleaned = []
        for e in best_effs:
            w, u = np.linalg.eigh(0.5 * (e + e.conj().T))
            cleaned.append((u * np.clip(w, 0.0, None)) @ u.conj().T)
        # sandwich normalization keeps every effect PSD while restoring the
        # completeness the clip may have broken; any null space of the sum
        # re-enters through its (PSD) projector split evenly
        ti = _pinv_sqrt(sum(cleaned))
        cleaned = [ti @ c @ ti for c in cleaned]
        rem = np.eye(dim) - sum(cleaned)
        cleaned = [c + rem / n for c in cleaned]
        try:
            povm = Povm(effects=tuple(cleaned))
        except DimensionMismatchError:
            povm = None
    return DiscriminationResult(
        value=best_val,
        iterations=best_it,
        converged=best_conv,
        budget_exhausted=not best_conv,
        povm=povm,
    )


# ---------------------------------------------------------------------------
# correlation measures


def _permute_factors(mat: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    dims = tuple(dims)
    n = len(dims)
    tensor = mat.reshape(dims * 2)
    perm = list(order) + [o + n for o in order]
    tensor = np.transpose(tensor, perm)
    total = int(np.prod(dims))
    return tensor.reshape(total, total)


def _bipartition(state: DensityMatrix, measured: Sequence[int]) -> tuple[np.ndarray, int, int]:
    """Permute so the measured factors come first; return (matrix, d_meas, d_rest)."""
    measured = tuple(measured)
    rest = tuple(k for k in range(len(state.dims)) if k not in measured)
    if (not measured or len(set(measured)) != len(measured)
            or any(m < 0 or m >= len(state.dims) for m in measured)):
        raise SubsystemIndexError(f"bad measured factors {measured}")
    order = measured + rest
    mat = _permute_factors(state.matrix, state.dims, order)
    d_meas = int(np.prod([state.dims[m] for m in measured]))
    d_rest = int(np.prod([state.dims[r] for r in rest])) if rest else 1
    return mat, d_meas, d_rest


def _conditional_kernel(mat: np.ndarray, d_meas: int, d_rest: int, op: np.ndarray) -> np.ndarray:
    """Tr_meas[rho (op (x) 1_rest)] for a measured-side operator op."""
    tensor = mat.reshape(d_meas, d_rest, d_meas, d_rest)
    return np.einsum("arbs,ba->rs", tensor, op)


def _fibonacci_sphere(count: int) -> np.ndarray:
    pts = []
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for i in range(count):
        z = 1.0 - 2.0 * (i + 0.5) / count
        r = math.sqrt(max(0.0, 1.0 - z * z))
        th = golden * i
        pts.append((r * math.cos(th), r * math.sin(th), z))
    return np.asarray(pts)


def _two_output_me_qubit(state: DensityMatrix, measured: Sequence[int],
                         budget: OptimizerBudget | None = None) -> float:
    """Best equiprobable-measurement value when the measured side is a qubit.

    An equiprobable effect is a*1 + b v.sigma with a pinned by the constraint,
    and the prepared-ensemble objective is linear in b, so the optimum sits at
    the largest feasible b for each direction v: a two-parameter search on the
    sphere.
    """
    budget = budget or OptimizerBudget()
    mat, d_meas, d_rest = _bipartition(state, measured)
    if d_meas != 2:
        raise DimensionMismatchError("qubit path requires a 2-dimensional measured side")
    kernels = [_conditional_kernel(mat, 2, d_rest, PAULIS[k]) for k in range(4)]
    rho_rest = kernels[0]
    r_bloch = np.array([float(np.trace(kernels[k]).real) for k in (1, 2, 3)])

    def value(v: np.ndarray) -> float:
        v = v / np.linalg.norm(v)
        mixed = v[0] * kernels[1] + v[1] * kernels[2] + v[2] * kernels[3]
        vr = float(v @ r_bloch)
        diff = mixed - vr * rho_rest
        return trace_norm(0.5 * (diff + diff.conj().T)) / (2.0 * (1.0 + abs(vr)))

    grid = _fibonacci_sphere(32)
    vals = [value(v) for v in grid]
    order = np.argsort(vals)[::-1]
    best = float(vals[order[0]])
    for idx in order[:3]:
        v0 = grid[idx]
        th0 = math.acos(max(-1.0, min(1.0, v0[2])))
        ph0 = math.atan2(v0[1], v0[0])

        def neg(p: np.ndarray) -> float:
            th, ph = p
            v = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
            return -value(v)

        res = minimize(neg, x0=[th0, ph0], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxfev": budget.polish_maxfev})
        best = max(best, float(-res.fun))
    return best


def _gell_mann_basis(dim: int) -> list[np.ndarray]:
    """Traceless Hermitian basis, Tr(B_i B_j) = 2 delta_ij."""
    basis = []
    for i in range(dim):
        for j in range(i + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[i, j] = m[j, i] = 1.0
            basis.append(m)
            m = np.zeros((dim, dim), dtype=complex)
            m[i, j] = -1.0j
            m[j, i] = 1.0j
            basis.append(m)
    for k in range(1, dim):
        m = np.zeros((dim, dim), dtype=complex)
        for i in range(k):
            m[i, i] = 1.0
        m[k, k] = -k
        basis.append(m * math.sqrt(2.0 / (k * (k + 1))))
    return basis


def _shrink_to_feasible(effects_of: Callable[[float], list[np.ndarray]]) -> float:
    """Largest s in [0, 1] keeping every effect's spectrum inside [0, 1].

    effects_of(0) must be strictly feasible (a rescaled identity), so the
    feasible region along the segment is an interval containing 0.
    """

    def ok(s: float) -> bool:
        for p in effects_of(s):
            w = np.linalg.eigvalsh(p)
            if w[0] < -1e-14 or w[-1] > 1.0 + 1e-14:
                return False
        return True

    if ok(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _capped_linear_opt(q_mat: np.ndarray, r_mat: np.ndarray, beta: float) -> np.ndarray:
    """Maximize Tr(Q P) over 0 <= P <= 1 with Tr(R P) = beta, R PSD.

    The dual over the single multiplier mu is convex and one-dimensional; the
    primal optimum is recovered by a fractional fill in the eigenbasis of
    Q - mu* R, spending the R-budget on the best profit-to-cost directions
    first (the exchange argument holds with negative profits too). The
    returned effect is exactly feasible.
    """

    def f(mu: float) -> float:
        w = np.linalg.eigvalsh(q_mat - mu * r_mat)
        return float(w[w > 0].sum()) + beta * mu

    res = minimize_scalar(f, bounds=(-60.0, 60.0), method="bounded",
                          options={"xatol": 1e-12})
    mu = float(res.x)
    w, u = np.linalg.eigh(q_mat - mu * r_mat)
    costs = np.real(np.einsum("ik,ij,jk->k", u.conj(), r_mat, u))
    dim = w.size
    p_out = np.zeros((dim, dim), dtype=complex)
    budget_left = beta
    free = costs <= 1e-15
    for k in range(dim):  # zero-cost directions: include iff they add profit
        if free[k] and w[k] > 1e-14:
            p_out += np.outer(u[:, k], u[:, k].conj())
    paying = [k for k in range(dim) if not free[k]]
    paying.sort(key=lambda k: w[k] / costs[k], reverse=True)
    for k in paying:
        c = min(1.0, budget_left / costs[k])
        if c <= 0.0:
            break
        p_out += c * np.outer(u[:, k], u[:, k].conj())
        budget_left -= c * costs[k]
    return p_out


def _me_linear_opt(q_mat: np.ndarray, r_mat: np.ndarray) -> np.ndarray:
    """Maximize Tr(Q P) over effects equiprobable on R (Tr R = 1)."""
    return _capped_linear_opt(q_mat, r_mat, 0.5)


def _boxed_linear_opt(q_mat: np.ndarray, r_mat: np.ndarray, upper: np.ndarray,
                      beta: float) -> np.ndarray:
    """Maximize Tr(Q P) over 0 <= P <= U with Tr(R P) = beta.

    Substituting P = U^{1/2} X U^{1/2} maps the box onto 0 <= X <= 1 on the
    support of U (P must vanish off it anyway), which is the capped problem.
    """
    w, u = np.linalg.eigh(0.5 * (upper + upper.conj().T))
    keep = w > 1e-13
    s = u[:, keep] * np.sqrt(w[keep])
    qt = s.conj().T @ q_mat @ s
    rt = s.conj().T @ r_mat @ s
    x = _capped_linear_opt(0.5 * (qt + qt.conj().T), 0.5 * (rt + rt.conj().T), beta)
    return s @ x @ s.conj().T


def _two_output_me_general(state: DensityMatrix, measured: Sequence[int],
                           budget: OptimizerBudget | None = None) -> float:
    """Alternating ascent for a measured side of any dimension.

    The objective (1/2)||Tr_meas[rho (2P-1 (x) 1)]||_1 is a trace norm, hence
    a maximum of linear functionals Tr(W .) over Hermitian contractions W.
    Alternate exactly solvable steps: W is the spectral sign of the current
    kernel, and the best P for fixed W is a one-multiplier linear program.
    Every step is monotone, so the best value seen is attained by a valid
    equiprobable measurement.
    """
    budget = budget or OptimizerBudget()
    mat, d_meas, d_rest = _bipartition(state, measured)
    tensor = mat.reshape(d_meas, d_rest, d_meas, d_rest)
    rho_meas = np.einsum("arbr->ab", tensor)
    rho_meas = 0.5 * (rho_meas + rho_meas.conj().T)
    eye = np.eye(d_meas)

    def kernel(x: np.ndarray) -> np.ndarray:
        out = np.einsum("arbs,ba->rs", tensor, x)
        return 0.5 * (out + out.conj().T)

    def adjoint(w_op: np.ndarray) -> np.ndarray:
        out = np.einsum("arbs,rs->ab", tensor, w_op.conj())
        return 0.5 * (out + out.conj().T)

    def objective(p_eff: np.ndarray) -> float:
        return 0.5 * trace_norm(kernel(2.0 * p_eff - eye))

    def ascend(p_eff: np.ndarray) -> float:
        best = objective(p_eff)
        stall = 0
        for _ in range(60):
            m_ker = kernel(2.0 * p_eff - eye)
            w, u = np.linalg.eigh(m_ker)
            w_op = (u * np.sign(w)) @ u.conj().T
            p_eff = _me_linear_opt(adjoint(w_op), rho_meas)
            val = objective(p_eff)
            if val > best + 1e-14:
                best, stall = val, 0
            else:
                stall += 1
                if stall >= 3:
                    break
        return best

    rng = np.random.default_rng(budget.rng_seed)
    starts = []
    try:
        seed_povm = construct_me_povm(
            DensityMatrix(matrix=rho_meas, dims=(d_meas,), _skip_checks=True), 2
        )
        starts.append(np.asarray(seed_povm.effects[0]))
    except DegenerateSplitError:
        pass
    for _ in range(max(3, budget.seeds // 2)):
        g = rng.normal(size=(d_meas, d_meas)) + 1j * rng.normal(size=(d_meas, d_meas))
        starts.append(_me_linear_opt(0.5 * (g + g.conj().T), rho_meas))

    return max(ascend(p0) for p0 in starts)


def _is_flag_diagonal(state: DensityMatrix, flag: int = 0) -> bool:
    """True when the state has no coherence across the flag qubit."""
    if state.dims[flag] != 2:
        return False
    order = (flag,) + tuple(k for k in range(len(state.dims)) if k != flag)
    mat = _permute_factors(state.matrix, state.dims, order)
    half = mat.shape[0] // 2
    return bool(np.max(np.abs(mat[:half, half:])) < 1e-12)


def _flag_blocks(state: DensityMatrix, flag: int = 0) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Diagonal blocks (unnormalized conditional states) of a flag-diagonal state."""
    order = (flag,) + tuple(k for k in range(len(state.dims)) if k != flag)
    mat = _permute_factors(state.matrix, state.dims, order)
    half = mat.shape[0] // 2
    b0, b1 = mat[:half, :half], mat[half:, half:]
    return b0, b1, float(np.trace(b0).real), float(np.trace(b1).real)


def _two_output_me_flag_exact(state: DensityMatrix, flag: int = 0) -> float:
    """Exact best value when measuring the side opposite a classical flag.

    For a flag-diagonal state the value is max_P |Tr[(B0 - B1) P] + 1/2 - p0|
    over effects with Tr[(B0 + B1) P] = 1/2 and 0 <= P <= 1 (B blocks
    unnormalized, p0 = Tr B0). Each sign branch is a linear program whose
    Lagrangian dual is a one-dimensional convex minimization; strong duality
    holds because P = 1/2 is strictly feasible.
    """
    b0, b1, p0, _ = _flag_blocks(state, flag)
    diff = 0.5 * ((b0 - b1) + (b0 - b1).conj().T)
    tot = 0.5 * ((b0 + b1) + (b0 + b1).conj().T)

    def branch(sign: float) -> float:
        def f(mu: float) -> float:
            w = np.linalg.eigvalsh(sign * diff - mu * tot)
            return float(w[w > 0].sum()) + 0.5 * mu

        res = minimize_scalar(f, bounds=(-50.0, 50.0), method="bounded",
                              options={"xatol": 1e-13})
        return float(res.fun) + sign * (0.5 - p0)

    return max(branch(1.0), branch(-1.0), 0.0)


def correlation_CA2(state: DensityMatrix, a_factors: Sequence[int] = (0,),
                    budget: OptimizerBudget | None = None) -> float:
    """Two-output equiprobable-measurement correlation, measuring the A side."""
    _, d_meas, _ = _bipartition(state, a_factors)
    if d_meas == 2:
        return _two_output_me_qubit(state, a_factors, budget)
    return _two_output_me_general(state, a_factors, budget)


def correlation_CB2(state: DensityMatrix, a_factors: Sequence[int] = (0,),
                    budget: OptimizerBudget | None = None) -> float:
    """Same measure, measuring everything except the A side."""
    b_factors = tuple(k for k in range(len(state.dims)) if k not in tuple(a_factors))
    _, d_meas, _ = _bipartition(state, b_factors)
    if d_meas == 2:
        return _two_output_me_qubit(state, b_factors, budget)
    if tuple(a_factors) == (0,) and state.dims[0] == 2 and _is_flag_diagonal(state, 0):
        return _two_output_me_flag_exact(state, 0)
    return _two_output_me_general(state, b_factors, budget)


def correlation_C2(state: DensityMatrix, a_factors: Sequence[int] = (0,),
                   budget: OptimizerBudget | None = None) -> float:
    return max(correlation_CA2(state, a_factors, budget),
               correlation_CB2(state, a_factors, budget))


# --- searches with more than two outputs -----------------------------------


def _flag_measured_n_output_pg(state: DensityMatrix, n: int,
                               budget: OptimizerBudget | None = None) -> float:
    """Best n-output guessing probability measuring the flag qubit itself.

    With no coherence across the flag only effect diagonals (lam_i, eta_i)
    matter; equiprobability pins lam_i + eta_i = 2/n when the flag marginal is
    uniform, and completeness pins sum(lam) = 1. The resulting guessing
    probability is a pointwise maximum of linear functionals of lam, hence
    convex, so its maximum over the polytope sits at a vertex; all vertices
    are outcome relabelings of a single pattern (cap entries, one remainder),
    and the payoff is relabeling-invariant. One discrimination run suffices.
    """
    budget = budget or OptimizerBudget()
    b0, b1, p0, p1 = _flag_blocks(state, 0)
    if not (abs(p0 - 0.5) < 1e-9 and abs(p1 - 0.5) < 1e-9):
        raise DimensionMismatchError("flag marginal is not uniform")
    d = b0.shape[0]
    cap = 2.0 / n
    inner = OptimizerBudget(seeds=2, max_iterations=80, rng_seed=budget.rng_seed)

    def payoff(lam: np.ndarray) -> float:
        members = []
        for li in lam:
            blk = li * b0 + (cap - li) * b1
            blk = 0.5 * (blk + blk.conj().T)
            members.append(EnsembleMember(
                probability=1.0 / n,
                state=DensityMatrix(matrix=blk * n, dims=(d,), _skip_checks=True),
            ))
        return guessing_probability_bruteforce(StateEnsemble(members=tuple(members)), inner).value

    k = n // 2
    vertex = np.zeros(n)
    vertex[:k] = cap
    vertex[k] = 1.0 - k * cap  # 0 for even n, 1/n for odd n
    return max(payoff(vertex), 1.0 / n)


def _flag_opposite_n_output_pg(state: DensityMatrix, n: int,
                               budget: OptimizerBudget | None = None) -> float:
    """Best n-output guessing probability measuring opposite a classical flag.

    The prepared flag ensemble is classical, so for a given POVM the payoff is
    max_i Tr[B0 P_i] + max_j Tr[B1 P_j] (unnormalized blocks). Only the two
    winning effects matter: any remainder R = 1 - P - Q splits into n - 2
    equal equiprobable effects R/(n-2), so the search reduces to a pair
    0 <= P, Q with P + Q <= 1 and Tr[(B0+B1) P] = Tr[(B0+B1) Q] = 1/n.
    Coordinate ascent alternates two exactly solvable linear steps.
    """
    budget = budget or OptimizerBudget()
    b0, b1, _, _ = _flag_blocks(state, 0)
    d = b0.shape[0]
    b0 = 0.5 * (b0 + b0.conj().T)
    b1 = 0.5 * (b1 + b1.conj().T)
    tot = b0 + b1
    eye = np.eye(d)
    beta = 1.0 / n
    rng = np.random.default_rng(budget.rng_seed)

    def ascend(p_eff: np.ndarray) -> float:
        best = -np.inf
        for _ in range(40):
            q_eff = _boxed_linear_opt(b1, tot, eye - p_eff, beta)
            p_eff = _boxed_linear_opt(b0, tot, eye - q_eff, beta)
            val = float(np.trace(b0 @ p_eff).real + np.trace(b1 @ q_eff).real)
            if val <= best + 1e-14:
                return max(best, val)
            best = val
        return best

    starts = [_capped_linear_opt(b0, tot, beta)]
    for _ in range(2):
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        starts.append(_capped_linear_opt(0.5 * (g + g.conj().T), tot, beta))

    # the same-winner degenerate assignment is worth exactly 1/n
    return max(max(ascend(p0) for p0 in starts), 1.0 / n)


def _n_output_me_pg(state: DensityMatrix, measured: Sequence[int], n: int,
                    budget: OptimizerBudget | None = None) -> float:
    """Generic n-output search: parametrize n-1 effects, discriminate the
    prepared far-side ensemble with the fixed-point ascent."""
    budget = budget or OptimizerBudget()
    mat, d_meas, d_rest = _bipartition(state, measured)
    basis = _gell_mann_basis(d_meas)
    m = len(basis)
    kernels = np.asarray([_conditional_kernel(mat, d_meas, d_rest, b) for b in basis])
    rho_rest = _conditional_kernel(mat, d_meas, d_rest, np.eye(d_meas))
    rho_meas = partial_trace(state, measured).matrix
    t_vec = np.array([float(np.trace(rho_meas @ b).real) for b in basis])
    eye = np.eye(d_meas)
    inner = OptimizerBudget(seeds=2, max_iterations=60, rng_seed=budget.rng_seed)

    def effects_of(c: np.ndarray) -> list[np.ndarray]:
        rows = c.reshape(n - 1, m)
        effs = []
        for row in rows:
            p = (1.0 / n - float(row @ t_vec)) * eye
            for ck, b in zip(row, basis):
                p = p + ck * b
            effs.append(0.5 * (p + p.conj().T))
        effs.append(eye - sum(effs))
        return effs

    def kernel_of(p: np.ndarray) -> np.ndarray:
        # expand p = (tr p / d) 1 + sum_b (tr p b / 2) b in the ON basis
        out = (float(np.trace(p).real) / d_meas) * rho_rest
        for b, kb in zip(basis, kernels):
            out = out + 0.5 * float(np.trace(p @ b).real) * kb
        return out

    def pg(effs: Sequence[np.ndarray]) -> float:
        members = []
        for p in effs:
            blk = kernel_of(p)
            blk = 0.5 * (blk + blk.conj().T)
            members.append(EnsembleMember(
                probability=1.0 / n,
                state=DensityMatrix(matrix=blk * n, dims=(d_rest,), _skip_checks=True),
            ))
        return guessing_probability_bruteforce(StateEnsemble(members=tuple(members)), inner).value

    def penalized(c: np.ndarray) -> float:
        effs = effects_of(c)
        pen = 0.0
        for p in effs:
            w = np.linalg.eigvalsh(p)
            pen += np.sum(np.clip(-w, 0.0, None) ** 2) + np.sum(np.clip(w - 1.0, 0.0, None) ** 2)
        return -pg(effs) + 1.0e4 * pen

    rng = np.random.default_rng(budget.rng_seed)
    starts = [np.zeros((n - 1) * m)]
    for _ in range(2):
        starts.append(rng.normal(scale=0.15 / n, size=(n - 1) * m))

    best = 1.0 / n
    for c0 in starts:
        res = minimize(penalized, x0=c0, method="Nelder-Mead",
                       options={"xatol": 1e-5, "fatol": 1e-9, "maxfev": 120})
        c = np.asarray(res.x)
        s = _shrink_to_feasible(lambda s: effects_of(s * c))
        best = max(best, pg(effects_of(s * c)))
    return best


def correlation_C_general(state: DensityMatrix, max_outputs: int = 2,
                          a_factors: Sequence[int] = (0,),
                          budget: OptimizerBudget | None = None) -> float:
    """Best equiprobable-measurement advantage over 2..max_outputs outcomes.

    The reported value is the maximal guessing probability minus the baseline
    1/2 for every output count, so adding outcomes can only help via genuinely
    better discrimination, not via a changed yardstick.
    """
    if max_outputs < 2 or max_outputs > 4:
        raise DimensionMismatchError("max_outputs must be between 2 and 4")
    a_factors = tuple(a_factors)
    best = correlation_C2(state, a_factors, budget)
    b_factors = tuple(k for k in range(len(state.dims)) if k not in a_factors)
    flaggy = a_factors == (0,) and state.dims[0] == 2 and _is_flag_diagonal(state, 0)
    for n in range(3, max_outputs + 1):
        if flaggy:
            try:
                best = max(best, _flag_measured_n_output_pg(state, n, budget) - 0.5)
            except DimensionMismatchError:
                best = max(best, _n_output_me_pg(state, a_factors, n, budget) - 0.5)
            best = max(best, _flag_opposite_n_output_pg(state, n, budget) - 0.5)
        else:
            best = max(best, _n_output_me_pg(state, a_factors, n, budget) - 0.5)
            best = max(best, _n_output_me_pg(state, b_factors, n, budget) - 0.5)
    return best


# ---------------------------------------------------------------------------
# random local channels


@dataclass(frozen=True)
class LocalChannel:
    """A CPTP map given by Kraus operators on a single tensor factor."""

    kraus: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[1]


def random_local_cptp(dim: int, seed: int, kraus_rank: int | None = None) -> LocalChannel:
    """Haar-style random channel via isometry completion.

    kraus_rank = 0 returns the identity channel (the seed is ignored then).
    """
    if kraus_rank == 0:
        return LocalChannel(kraus=(np.eye(dim, dtype=complex),))
    k = kraus_rank if kraus_rank is not None else dim * dim
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(dim * k, dim)) + 1j * rng.normal(size=(dim * k, dim))
    q, r = np.linalg.qr(g)
    # fix the gauge so the isometry is a deterministic function of the seed
    d = np.diagonal(r)
    phase = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    q = q * phase[None, :]
    kraus = tuple(q[i * dim:(i + 1) * dim, :] for i in range(k))
    return LocalChannel(kraus=kraus)


def apply_local_channel(state: DensityMatrix, channel: LocalChannel, factor: int) -> DensityMatrix:
    dims = state.dims
    if factor < 0 or factor >= len(dims):
        raise SubsystemIndexError(f"factor {factor} out of range")
    if channel.dim != dims[factor]:
        raise DimensionMismatchError("channel dimension does not match the factor")
    out = np.zeros_like(state.matrix)
    for e in channel.kraus:
        lifted = _lift(e, dims, factor)
        out += lifted @ state.matrix @ lifted.conj().T
    return DensityMatrix(matrix=out, dims=dims, _skip_checks=True)
