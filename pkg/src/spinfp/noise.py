"""Seeded noise injection and Monte Carlo width studies.

Measurement noise is modeled as an additive i.i.d. Gaussian perturbation
of every sample component with standard deviation ``epsilon`` (the Bloch
ball radius is 1, so ``epsilon`` reads as a fractional deviation). A width
study repeats a full estimation over independent noise draws and
summarizes the spread of the estimates; the width (standard deviation of
the estimate distribution) is the accuracy metric used to compare fields
and methods.

Sub-seeds are derived from ``(master seed, epsilon index, draw index)``
through ``numpy``'s splittable ``SeedSequence``, so adding draws or
epsilon points never reshuffles the noise of existing ones and any study
is bit-reproducible under a fixed master seed.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .estimation import FitConfig, estimate, ir_estimate, ir_signal
from .validation import ScenarioError, check_signal

__all__ = [
    "NoiseSpec",
    "Scenario",
    "WidthReport",
    "ComparisonTable",
    "add_noise",
    "width_study",
    "compare_methods",
    "ofp_scenario",
    "ir_scenario",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise amplitude and seed of one perturbation."""

    epsilon: float
    seed: object = None

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon!r}")


def add_noise(g, spec: NoiseSpec) -> np.ndarray:
    """Independent Gaussian perturbation of every sample component."""
    g = check_signal(g, name="signal")
    if spec.epsilon == 0.0:
        return g.copy()
    rng = np.random.default_rng(spec.seed)
    return g + spec.epsilon * rng.standard_normal(g.shape)


def _draw_seed(master_seed: int, eps_index: int, draw_index: int
               ) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed,
                                  spawn_key=(eps_index, draw_index))


@dataclass(frozen=True)
class Scenario:
    """A noiseless signal plus the estimator run on its noisy copies."""

    name: str
    target: str
    truth: float
    clean_signal: np.ndarray
    estimator: Callable[[np.ndarray], float]


@dataclass
class WidthReport:
    """Per-epsilon mean and width of the estimate distribution."""

    method: str
    target: str
    truth: float
    epsilons: np.ndarray
    means: np.ndarray
    widths: np.ndarray
    draws: int
    failures: np.ndarray

    @property
    def successes(self) -> np.ndarray:
        return self.draws - self.failures

    def width_standard_errors(self) -> np.ndarray:
        """Gaussian standard error of each width estimate."""
        n = np.maximum(self.successes, 2)
        return self.widths / np.sqrt(2.0 * (n - 1))


@dataclass
class ComparisonTable:
    """Per-epsilon width ratios of two studies, with propagated errors."""

    epsilons: np.ndarray
    ratios: np.ndarray
    ratio_standard_errors: np.ndarray
    defined: np.ndarray
    numerator: str = ""
    denominator: str = ""


def _run_draw(scenario: Scenario, epsilon: float, master_seed: int,
              eps_index: int, draw_index: int) -> float:
    spec = NoiseSpec(epsilon, seed=_draw_seed(master_seed, eps_index, draw_index))
    noisy = add_noise(scenario.clean_signal, spec)
    return float(scenario.estimator(noisy))


def _load_checkpoint(path: str) -> dict[tuple[int, int], float]:
    done: dict[tuple[int, int], float] = {}
    if path and os.path.exists(path):
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                key = (int(row[0]), int(row[1]))
                done[key] = math.nan if row[2] == "failed" else float(row[2])
    return done


def width_study(scenario: Scenario, eps_grid, draws: int = 30,
                master_seed: int = 0, min_success: float = 0.8,
                robust: bool = False, n_workers: int = 1,
                checkpoint: str | None = None) -> WidthReport:
    """Monte Carlo spread of the estimates over independent noise draws.

    For each epsilon the scenario estimator runs on ``draws`` noisy copies
    of the clean signal; the report carries the sample mean and the sample
    standard deviation (or a MAD-based width when ``robust``). Draws whose
    estimator raises are excluded; if fewer than ``min_success`` survive
    at any epsilon the study aborts with :class:`ScenarioError`.

    ``checkpoint`` names a CSV file recording finished draws keyed by
    ``(epsilon index, draw index)``; an interrupted study rerun with the
    same file resumes from the completed draws and yields the identical
    report.
    """
    if draws < 2:
        raise ValueError("draws must be >= 2")
    eps_grid = [float(e) for e in eps_grid]
    done = _load_checkpoint(checkpoint) if checkpoint else {}
    ledger = None
    if checkpoint:
        os.makedirs(os.path.dirname(checkpoint) or ".", exist_ok=True)
        ledger = open(checkpoint, "a", newline="")

    try:
        pending = [(ei, di) for ei in range(len(eps_grid))
                   for di in range(draws) if (ei, di) not in done]
        if pending:
            if n_workers > 1:
                with ProcessPoolExecutor(max_workers=n_workers) as pool:
                    futures = {key: pool.submit(_run_draw, scenario,
                                                eps_grid[key[0]], master_seed,
                                                key[0], key[1])
                               for key in pending}
                    results = {}
                    for key, fut in futures.items():
                        try:
                            results[key] = fut.result()
                        except Exception:
                            results[key] = math.nan
            else:
                results = {}
                for key in pending:
                    try:
                        results[key] = _run_draw(scenario, eps_grid[key[0]],
                                                 master_seed, key[0], key[1])
                    except Exception:
                        results[key] = math.nan
            for key in pending:  # fixed order for the checkpoint file
                done[key] = results[key]
                if ledger is not None:
                    value = "failed" if math.isnan(results[key]) \
                        else repr(results[key])
                    ledger.write(f"{key[0]},{key[1]},{value}\n")
                    ledger.flush()
    finally:
        if ledger is not None:
            ledger.close()

    means = np.empty(len(eps_grid))
    widths = np.empty(len(eps_grid))
    failures = np.zeros(len(eps_grid), dtype=int)
    for ei in range(len(eps_grid)):
        estimates = np.array([done[(ei, di)] for di in range(draws)])
        good = estimates[~np.isnan(estimates)]
        failures[ei] = draws - good.size
        if good.size < math.ceil(min_success * draws):
            raise ScenarioError(
                f"only {good.size}/{draws} draws succeeded at "
                f"epsilon={eps_grid[ei]} for scenario {scenario.name!r}")
        means[ei] = float(np.mean(good))
        if robust:
            widths[ei] = 1.4826 * float(np.median(np.abs(good - np.median(good))))
        else:
            widths[ei] = float(np.std(good, ddof=1))
    return WidthReport(method=scenario.name, target=scenario.target,
                       truth=scenario.truth, epsilons=np.array(eps_grid),
                       means=means, widths=widths, draws=draws,
                       failures=failures)


def compare_methods(report_a: WidthReport, report_b: WidthReport
                    ) -> ComparisonTable:
    """Per-epsilon ratio ``width_a / width_b`` with propagated errors.

    A zero denominator (for instance the epsilon = 0 row) makes the ratio
    undefined; the row is flagged rather than reported as infinite.
    """
    if not np.array_equal(report_a.epsilons, report_b.epsilons):
        raise ValueError("width reports use different epsilon grids")
    defined = report_b.widths > 0.0
    ratios = np.full(report_a.epsilons.shape, math.nan)
    errors = np.full(report_a.epsilons.shape, math.nan)
    se_a = report_a.width_standard_errors()
    se_b = report_b.width_standard_errors()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios[defined] = report_a.widths[defined] / report_b.widths[defined]
        both = defined & (report_a.widths > 0.0)
        errors[both] = ratios[both] * np.sqrt(
            (se_a[both] / report_a.widths[both]) ** 2
            + (se_b[both] / report_b.widths[both]) ** 2)
        errors[defined & ~both] = 0.0
    return ComparisonTable(epsilons=report_a.epsilons.copy(), ratios=ratios,
                           ratio_standard_errors=errors, defined=defined,
                           numerator=report_a.method,
                           denominator=report_b.method)


# ---------------------------------------------------------------------------
# Scenario factories (module-level workers so studies can be parallelized)
# ---------------------------------------------------------------------------

def _ofp_target(signal, dictionary, sequence, model, config, target):
    report = estimate(dictionary, signal, config, sequence, model)
    return report.parameters[target]


def ofp_scenario(name: str, dictionary, sequence, model, config: FitConfig,
                 truth, target: str) -> Scenario:
    """Fingerprinting scenario: match against ``dictionary``, refine, and
    report the ``target`` parameter. ``truth`` gives the generating values
    of the clean signal."""
    clean = model.trajectory(sequence, truth)
    true_value = model.params_at(truth)[target]
    estimator = partial(_ofp_target, dictionary=dictionary, sequence=sequence,
                        model=model, config=config, target=target)
    return Scenario(name=name, target=target, truth=true_value,
                    clean_signal=clean, estimator=estimator)


def _ir_target(signal, times):
    return ir_estimate(times, signal).t1


def ir_scenario(name: str, t1: float, n_points: int = 120,
                spacing: float = 0.01) -> Scenario:
    """Idealized inversion-recovery scenario with perfect inversion."""
    times = spacing * np.arange(1, n_points + 1)
    clean = ir_signal(times, t1)[:, np.newaxis]
    return Scenario(name=name, target="t1", truth=t1, clean_signal=clean,
                    estimator=partial(_ir_target, times=times))
