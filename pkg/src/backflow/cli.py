"""Scenario runner: the library exposed as reproducible command-line experiments.

Configs are JSON with a schema_version field; results land in CSV files
whose headers and float formatting are frozen so that identical config
and seed reproduce identical bytes.  Exit codes: 0 success, 1 config or
validation error, 2 numerical failure, 3 consistency violation (the
scientifically interesting one).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .channels import (
    RateProfile,
    classify_interval,
    constant_rates,
    eternal_rates,
    load_rate_table_csv,
    tune_rates_shrink_image,
)
from .ensembles import OptimizerBudget, construct_me_povm
from .entwit import scenario_entanglement_blind
from .errors import (
    BackflowError,
    ConfigError,
    DegenerateSpectrumError,
    EpsilonRangeError,
    NonBijectiveError,
    PreconditionError,
    QuadratureError,
    ScaleUnderflowError,
)
from .linalg import random_density_matrix
from .mutinfo import _BASIS_STACK, _ball_points, didt_batch, hessian_at_stationary
from .probe import detect_backflow

SCHEMA_VERSION = 1
SCENARIOS = (
    "divisibility-scan",
    "backflow",
    "hessian-verify",
    "mutinfo-map",
    "entanglement-blind",
    "me-povm-demo",
)
# mirrors the coupling values exercised by the closed-form eigenvalue check
HESSIAN_A12_VALUES = (-0.2, -0.1, 0.0, 0.1, 0.2)
ME_POVM_OUTPUTS = 4

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INCONSISTENT = 3

_HEADERS = {
    "divisibility-scan": "t,s,gamma_x,gamma_y,gamma_z,d_x,d_y,d_z,choi_min_eig,cp,p",
    "backflow": "tau,delta_t,c2_before,c2_after,choi_min_eig,backflow,consistent",
    "hessian-verify": "a12,idx,eig_numeric,eig_closed_form,abs_err",
    "mutinfo-map": "sample_id,didt,violation",
    "entanglement-blind": "t,negativity,choi_min_eig_intermediate,c2",
    "me-povm-demo": "outcome,probability,deviation_from_uniform",
}

_DEFAULT_TOLERANCES = {
    "band": 1e-8,
    "didt": 1e-10,
    "eig_rel": 1e-4,
    "eig_abs": 1e-8,
    "uniformity": 1e-9,
    "negativity": 1e-10,
}

_CONFIG_KEYS = {
    "schema_version",
    "scenario",
    "profile",
    "grid",
    "tolerances",
    "budget",
    "epsilon",
    "output",
    "seed",
    "prelude",
    "switch_time",
}

_NUMERICAL_ERRORS = (
    QuadratureError,
    ScaleUnderflowError,
    NonBijectiveError,
    EpsilonRangeError,
    DegenerateSpectrumError,
    np.linalg.LinAlgError,
)

__all__ = [
    "SCENARIOS",
    "SCHEMA_VERSION",
    "ScenarioConfig",
    "load_config",
    "main",
    "run",
]


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description; profiles already resolved."""

    scenario: str
    profile: RateProfile
    t_start: float
    t_end: float
    steps: int
    tolerances: Mapping[str, float]
    budget: OptimizerBudget
    epsilon: float
    output: str
    seed: int
    prelude: RateProfile
    switch_time: float


def _profile_from_spec(spec) -> RateProfile:
    if not isinstance(spec, dict):
        raise ConfigError("profile spec must be a JSON object")
    if "csv" in spec:
        try:
            return load_rate_table_csv(str(spec["csv"]))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"rate table {spec['csv']!r}: {exc}") from exc
    preset = spec.get("preset")
    if preset == "eternal":
        return eternal_rates(domain_end=float(spec.get("domain_end", math.inf)))
    if preset == "constant":
        rates = spec.get("rates")
        if not isinstance(rates, (list, tuple)) or len(rates) != 3:
            raise ConfigError("constant preset needs rates = [gx, gy, gz]")
        gx, gy, gz = (float(v) for v in rates)
        return constant_rates(gx, gy, gz, float(spec.get("domain_end", math.inf)))
    if preset == "shrink-burst":
        if "base" not in spec or "epsilon" not in spec or "t_activate" not in spec:
            raise ConfigError("shrink-burst preset needs base, epsilon, t_activate")
        try:
            return tune_rates_shrink_image(
                _profile_from_spec(spec["base"]),
                float(spec["epsilon"]),
                float(spec["t_activate"]),
            )
        except BackflowError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"shrink-burst preset: {exc}") from exc
    raise ConfigError(f"unknown rate profile preset {preset!r}")


def load_config(path: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario config; ConfigError on any defect."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")

    grid = raw.get("grid")
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object with t_start, t_end, steps")
    try:
        t_start = float(grid["t_start"])
        t_end = float(grid["t_end"])
        steps = int(grid["steps"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    if steps < 2:
        raise ConfigError("grid steps must be at least 2")
    if not (t_start < t_end) or t_start < 0.0:
        raise ConfigError("grid needs 0 <= t_start < t_end")

    profile = _profile_from_spec(raw.get("profile"))
    switch_time = float(raw.get("switch_time", 1.0))
    if switch_time <= 0.0:
        raise ConfigError("switch_time must be positive")
    horizon = profile.domain_end
    if scenario == "entanglement-blind":
        horizon = switch_time + profile.domain_end
    if t_end > horizon:
        raise ConfigError(f"t_end {t_end:g} exceeds the profile domain {horizon:g}")

    tolerances = dict(_DEFAULT_TOLERANCES)
    for key, value in (raw.get("tolerances") or {}).items():
        if key not in _DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {key!r}")
        value = float(value)
        if not value > 0.0:
            raise ConfigError(f"tolerance {key!r} must be positive")
        tolerances[key] = value

    seed = int(raw.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be non-negative")

    budget_raw = raw.get("budget") or {}
    if not isinstance(budget_raw, dict):
        raise ConfigError("budget must be an object")
    allowed = {"seeds", "restarts", "max_iterations", "polish_maxfev"}
    unknown = set(budget_raw) - allowed
    if unknown:
        raise ConfigError(f"unknown budget keys: {sorted(unknown)}")
    defaults = OptimizerBudget()
    try:
        budget = OptimizerBudget(
            seeds=int(budget_raw.get("seeds", defaults.seeds)),
            max_iterations=int(budget_raw.get("max_iterations", defaults.max_iterations)),
            restarts=int(budget_raw.get("restarts", defaults.restarts)),
            polish_maxfev=int(budget_raw.get("polish_maxfev", defaults.polish_maxfev)),
            rng_seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad budget: {exc}") from exc
    if budget.seeds < 1 or budget.max_iterations < 1 or budget.polish_maxfev < 1:
        raise ConfigError("budget counts must be positive")
    if budget.restarts < 0:
        raise ConfigError("budget restarts must be non-negative")

    epsilon = float(raw.get("epsilon", 0.05))
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")

    output = raw.get("output", f"{scenario}.csv")
    if not isinstance(output, str) or not output:
        raise ConfigError("output must be a non-empty file name")

    if "prelude" in raw:
        prelude = _profile_from_spec(raw["prelude"])
    else:
        prelude = constant_rates(2.0, 2.0, 2.0)
    if scenario == "entanglement-blind" and switch_time > prelude.domain_end:
        raise ConfigError("prelude domain must cover the switch time")

    return ScenarioConfig(
        scenario=scenario,
        profile=profile,
        t_start=t_start,
        t_end=t_end,
        steps=steps,
        tolerances=tolerances,
        budget=budget,
        epsilon=epsilon,
        output=output,
        seed=seed,
        prelude=prelude,
        switch_time=switch_time,
    )


def _fmt(value) -> str:
    # bool is an int subclass; test it first
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _grid(config: ScenarioConfig) -> np.ndarray:
    return np.linspace(config.t_start, config.t_end, config.steps)


def _run_divisibility(config: ScenarioConfig, threads: int | None):
    grid = _grid(config)
    pairs = [(float(a), float(b)) for a, b in zip(grid[:-1], grid[1:])]
    verdicts = classify_interval(config.profile, pairs)
    rows = [
        (
            v.t,
            v.s,
            v.gammas[0],
            v.gammas[1],
            v.gammas[2],
            v.decay.d_x,
            v.decay.d_y,
            v.decay.d_z,
            v.choi_min_eig,
            v.cp_divisible,
            v.p_divisible,
        )
        for v in verdicts
    ]
    return rows, EXIT_OK, ""


def _run_backflow(config: ScenarioConfig, threads: int | None):
    grid = _grid(config)
    jobs = [(float(a), float(b - a)) for a, b in zip(grid[:-1], grid[1:])]

    def one(job):
        tau, dt = job
        return detect_backflow(
            config.profile, tau, dt, epsilon=config.epsilon, budget=config.budget
        )

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, jobs))
    else:
        reports = [one(j) for j in jobs]
    rows = [
        (r.tau, r.delta_t, r.c2_before, r.c2_after, r.choi_min_eig,
         r.backflow_detected, r.consistent)
        for r in reports
    ]
    band = config.tolerances["band"]
    outside = [r for r in reports if abs(r.choi_min_eig) >= band]
    if any(r.inconclusive for r in outside):
        return rows, EXIT_NUMERICAL, "backflow crosscheck inconclusive outside the boundary band"
    if any(not r.consistent for r in outside):
        return rows, EXIT_INCONSISTENT, "backflow/Choi mismatch outside the boundary band"
    return rows, EXIT_OK, ""


def _run_hessian(config: ScenarioConfig, threads: int | None):
    rows = []
    ok = True
    for a12 in HESSIAN_A12_VALUES:
        report = hessian_at_stationary(config.profile, config.t_end, a12)
        for idx, (num, want) in enumerate(zip(report.eigenvalues, report.expected)):
            err = abs(float(num) - float(want))
            rows.append((a12, idx, float(num), float(want), err))
            bound = max(
                config.tolerances["eig_abs"],
                config.tolerances["eig_rel"] * abs(float(want)),
            )
            if err > bound:
                ok = False
    if ok:
        return rows, EXIT_OK, ""
    return rows, EXIT_INCONSISTENT, "Hessian eigenvalues depart from the closed forms"


def _run_mutinfo(config: ScenarioConfig, threads: int | None):
    grid = _grid(config)
    samples = config.budget.seeds
    center = np.zeros(15)
    tol = config.tolerances["didt"]
    rows = []
    violated = False
    sample_id = 0
    for k, t in enumerate(grid):
        pts = _ball_points(center, config.epsilon, samples, seed=config.seed + k)
        mats = 0.25 * np.eye(4, dtype=complex)[None] + np.einsum(
            "ni,iab->nab", pts, _BASIS_STACK[1:]
        )
        if threads is not None and threads > 1:
            chunks = np.array_split(mats, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(
                    pool.map(lambda c: didt_batch(c, config.profile, float(t)), chunks)
                )
            values = np.concatenate(parts)
        else:
            values = didt_batch(mats, config.profile, float(t))
        for v in values:
            hit = bool(not np.isnan(v) and v > tol)
            violated = violated or hit
            rows.append((sample_id, float(v), hit))
            sample_id += 1
    if violated:
        return rows, EXIT_INCONSISTENT, "positive dI/dt found inside the scanned neighborhood"
    return rows, EXIT_OK, ""


def _run_entanglement_blind(config: ScenarioConfig, threads: int | None):
    grid = _grid(config)
    report = scenario_entanglement_blind(
        config.prelude,
        config.profile,
        config.switch_time,
        grid,
        epsilon=config.epsilon,
        threads=threads,
    )
    rows = list(
        zip(report.times, report.negativities, report.choi_min_intermediate, report.c2_values)
    )
    if not report.certified:
        return rows, EXIT_INCONSISTENT, "entanglement-blind clauses not certified"
    return rows, EXIT_OK, ""


def _run_me_povm(config: ScenarioConfig, threads: int | None):
    rng = np.random.default_rng(config.seed)
    state = random_density_matrix(rng, 4)
    povm = construct_me_povm(state, ME_POVM_OUTPUTS)
    target = 1.0 / ME_POVM_OUTPUTS
    rows = []
    worst = 0.0
    for k, effect in enumerate(povm.effects):
        p = float(np.real(np.trace(effect @ state.matrix)))
        dev = abs(p - target)
        worst = max(worst, dev)
        rows.append((k, p, dev))
    if worst > config.tolerances["uniformity"]:
        return rows, EXIT_INCONSISTENT, "ME-POVM outcome distribution is not uniform"
    return rows, EXIT_OK, ""


_RUNNERS = {
    "divisibility-scan": _run_divisibility,
    "backflow": _run_backflow,
    "hessian-verify": _run_hessian,
    "mutinfo-map": _run_mutinfo,
    "entanglement-blind": _run_entanglement_blind,
    "me-povm-demo": _run_me_povm,
}


def run(
    config: ScenarioConfig,
    threads: int | None = None,
    output_dir: str | None = None,
    verbose: bool = False,
) -> int:
    """Execute one scenario; write its CSV; return the exit code."""
    if verbose:
        print(
            f"scenario={config.scenario} profile={config.profile.label} "
            f"grid=[{config.t_start:g}, {config.t_end:g}] x {config.steps} seed={config.seed}",
            file=sys.stderr,
        )
    try:
        rows, code, message = _RUNNERS[config.scenario](config, threads)
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    out_path = Path(output_dir) / config.output if output_dir else Path(config.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="ascii") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_HEADERS[config.scenario].split(","))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    if verbose:
        print(f"wrote {out_path} ({len(rows)} rows)", file=sys.stderr)
    if code != EXIT_OK:
        print(f"{config.scenario}: {message} (exit {code})", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="backflow",
        description="Run divisibility, backflow and correlation scenarios from a JSON config.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="execute a scenario config")
    run_parser.add_argument("config", help="path to scenario config (JSON)")
    run_parser.add_argument(
        "--output", metavar="DIR", default=None, help="directory for output files"
    )
    run_parser.add_argument(
        "--threads",
        type=int,
        default=None,
        metavar="N",
        help="worker threads; 0 picks the machine default",
    )
    run_parser.add_argument("--verbose", action="store_true", help="progress to stderr")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads
    if threads is not None and threads < 0:
        print("config error: --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    if threads == 0:
        threads = os.cpu_count() or 1
    return run(config, threads=threads, output_dir=args.output, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())
