"""Benchmark experiments over generated scenarios, with CSV output.

Everything is reproducible from (configuration, seed): per-trial seeds are
derived from (experiment seed, method, action, trial [, dimension]), so the
emitted estimates are independent of trial scheduling and method subsets.
Timing is monotonic wall time around the estimator call alone.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytic import augmented_mi_analytic
from .involved import determine_involved
from .kde import KdeConfig, invmi_kde_augmented_mi, naive_kde_augmented_mi
from .mi import (
    ALL_METHODS,
    METHOD_ANALYTIC,
    METHOD_INVMI_KDE,
    METHOD_NAIVE_KDE,
    MiEstimate,
)
from .scenario import SlamScenario, generate_scenario
from .smc import SampleBudget, mismc_estimate
from .state import marginalize_gaussian, sample_particles

log = logging.getLogger(__name__)

CSV_HEADER = (
    "method,action_id,trial,dim_full,dim_involved,n_particles,"
    "mi_estimate,elapsed_ns,seed"
)

_METHOD_INDEX = {m: i for i, m in enumerate(ALL_METHODS)}


@dataclass(frozen=True)
class ResultRow:
    """One estimator evaluation, as emitted to CSV."""

    method: str
    action_id: str
    trial: int
    dim_full: int
    dim_involved: int
    n_particles: int
    mi_estimate: float
    elapsed_ns: int
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.mi_estimate):
            raise ValueError("mi_estimate must be finite")
        if self.elapsed_ns < 0:
            raise ValueError("elapsed_ns must be >= 0")


def _trial_seed(seed: int, spawn_key: tuple[int, ...]) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=spawn_key)
    return int(ss.generate_state(1, np.uint64)[0])


def evaluate_method(
    scenario: SlamScenario,
    action_id: str,
    method: str,
    n_particles: int,
    seed: int,
    kde_cfg: KdeConfig | None = None,
) -> MiEstimate:
    """Run one estimator once on one scenario action.

    The integer seed fully determines the result; the analytic method
    ignores it.
    """
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {ALL_METHODS}")
    action = scenario.action(action_id)
    prior = scenario.prior
    if method == METHOD_ANALYTIC:
        start = time.perf_counter()
        value = augmented_mi_analytic(prior, action).value
        return MiEstimate(
            value=value,
            method=METHOD_ANALYTIC,
            elapsed=time.perf_counter() - start,
            sample_counts={"dim": prior.dim},
            seed=seed,
        )
    if method == METHOD_NAIVE_KDE:
        return naive_kde_augmented_mi(prior, action, n_particles, kde_cfg, seed)
    involved = determine_involved(prior.layout, action)
    if method == METHOD_INVMI_KDE:
        return invmi_kde_augmented_mi(
            prior, action, involved.blocks, n_particles, kde_cfg, seed
        )
    # mismc: sample the involved-marginal prior at the budget size, then
    # estimate; particle sampling is input preparation, not estimator time.
    rng = np.random.default_rng(seed)
    reduced = marginalize_gaussian(prior, involved.blocks)
    particles = sample_particles(reduced, n_particles, rng)
    budget = SampleBudget(n1=n_particles, n4=n_particles)
    return mismc_estimate(particles, action, budget, rng)


def result_row(
    est: MiEstimate,
    scenario: SlamScenario,
    action_id: str,
    trial: int,
    n_particles: int,
    seed: int,
) -> ResultRow:
    """Assemble the CSV record for one finished estimate."""
    involved = determine_involved(
        scenario.prior.layout, scenario.action(action_id)
    )
    return ResultRow(
        method=est.method,
        action_id=action_id,
        trial=trial,
        dim_full=scenario.prior.dim,
        dim_involved=involved.dim,
        n_particles=n_particles,
        mi_estimate=est.value,
        elapsed_ns=max(0, round(est.elapsed * 1e9)),
        seed=seed,
    )


def _ordered_methods(methods: Iterable[str]) -> list[str]:
    methods = set(methods)
    unknown = methods - set(ALL_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {ALL_METHODS}")
    return [m for m in ALL_METHODS if m in methods]


def run_actions_experiment(
    scenario: SlamScenario,
    methods: Iterable[str],
    n_particles: int,
    trials: int,
    seed: int,
    failures: list[str] | None = None,
) -> list[ResultRow]:
    """Estimate every candidate action's MI, repeatedly, per method.

    The analytic method is deterministic and runs once per action (trial 0);
    sampling methods run ``trials`` times with derived per-trial seeds.
    Estimator failures are logged and recorded in ``failures``; the run
    continues.
    """
    rows: list[ResultRow] = []
    for method in _ordered_methods(methods):
        m_idx = _METHOD_INDEX[method]
        for a_idx, action in enumerate(scenario.actions):
            n_trials = 1 if method == METHOD_ANALYTIC else trials
            for trial in range(n_trials):
                trial_seed = _trial_seed(seed, (m_idx, a_idx, trial))
                try:
                    est = evaluate_method(
                        scenario, action.id, method, n_particles, trial_seed
                    )
                    rows.append(
                        result_row(
                            est, scenario, action.id, trial, n_particles, trial_seed
                        )
                    )
                except Exception as exc:  # noqa: BLE001 - record and continue
                    message = f"{method}/{action.id}/trial {trial}: {exc}"
                    log.warning("estimator failure: %s", message)
                    if failures is not None:
                        failures.append(message)
    return rows


def run_dimension_sweep(
    dims: Sequence[int],
    methods: Iterable[str],
    n_particles: int,
    trials: int,
    seed: int,
    correlation_strength: float = 0.3,
    failures: list[str] | None = None,
) -> list[ResultRow]:
    """The same single-landmark action evaluated at growing state dimension.

    Each dimension gets its own deterministic scenario with one candidate
    action, so the involved dimension stays constant while the full
    dimension sweeps.
    """
    dims = list(dims)
    if dims != sorted(dims) or len(set(dims)) != len(dims):
        raise ValueError("dims must be strictly ascending")
    rows: list[ResultRow] = []
    for dim in dims:
        scenario = generate_scenario(
            dim,
            n_actions=1,
            correlation_strength=correlation_strength,
            seed=_trial_seed(seed, (dim,)) % (2**31),
        )
        action = scenario.actions[0]
        for method in _ordered_methods(methods):
            m_idx = _METHOD_INDEX[method]
            n_trials = 1 if method == METHOD_ANALYTIC else trials
            for trial in range(n_trials):
                trial_seed = _trial_seed(seed, (dim, m_idx, 0, trial))
                try:
                    est = evaluate_method(
                        scenario, action.id, method, n_particles, trial_seed
                    )
                    rows.append(
                        result_row(
                            est, scenario, action.id, trial, n_particles, trial_seed
                        )
                    )
                except Exception as exc:  # noqa: BLE001 - record and continue
                    message = f"dim {dim}/{method}/trial {trial}: {exc}"
                    log.warning("estimator failure: %s", message)
                    if failures is not None:
                        failures.append(message)
    return rows


def zero_elapsed(rows: Iterable[ResultRow]) -> list[ResultRow]:
    """Copies with elapsed_ns zeroed, for byte-reproducible CSV output."""
    return [replace(r, elapsed_ns=0) for r in rows]


def format_row(row: ResultRow) -> str:
    return ",".join(
        (
            row.method,
            row.action_id,
            str(row.trial),
            str(row.dim_full),
            str(row.dim_involved),
            str(row.n_particles),
            f"{row.mi_estimate:.17g}",
            str(row.elapsed_ns),
            str(row.seed),
        )
    )


def emit_csv(rows: Iterable[ResultRow], path: str | Path) -> None:
    """Write rows sorted by (method, action_id, trial), 17-significant-digit
    floats, LF line endings."""
    ordered = sorted(rows, key=lambda r: (r.method, r.action_id, r.trial))
    text = "\n".join([CSV_HEADER] + [format_row(r) for r in ordered]) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[ResultRow]:
    """Parse a result CSV back into rows (exact float round-trip)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        for record in csv.DictReader(handle):
            rows.append(
                ResultRow(
                    method=record["method"],
                    action_id=record["action_id"],
                    trial=int(record["trial"]),
                    dim_full=int(record["dim_full"]),
                    dim_involved=int(record["dim_involved"]),
                    n_particles=int(record["n_particles"]),
                    mi_estimate=float(record["mi_estimate"]),
                    elapsed_ns=int(record["elapsed_ns"]),
                    seed=int(record["seed"]),
                )
            )
    return rows
