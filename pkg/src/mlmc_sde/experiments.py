"""Named, scripted experiments that write CSV tables.

Two table layouts are used:

* error tables (``ERROR_HEADER``): one row per (replicate, N) holding the
  MLMC estimate, the reference value and the absolute error, which is
  ``inf`` whenever the estimate is not finite;
* benchmark tables (``RMSE_HEADER``): one row per (scheme, N) holding the
  root-mean-square error over the replicates and the mean runtime.

Replicate ``r`` always runs with seed ``derive_seed(seed, r)``.  Rows are
sorted before writing, so the file only depends on the configuration.  The
runtime column is the one exception; set ``timing=False`` to write ``nan``
there and obtain byte-identical files across runs.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .estimators import mlmc, rmse_curve
from .problems import Payoff, make_ginzburg_landau, make_langevin, make_x5_problem
from .randomness import derive_seed, resolve_seed
from .reference import gl_reference_value, x5_expectation
from .schemes import Scheme

__all__ = [
    "ERROR_HEADER",
    "EXPERIMENTS",
    "ExperimentConfig",
    "RMSE_HEADER",
    "default_N_range",
    "format_cell",
    "run_experiment",
    "write_csv",
]

ERROR_HEADER = ("experiment", "replicate", "seed", "N", "scheme", "estimate", "reference",
                "abs_error", "diverged")
RMSE_HEADER = ("experiment", "scheme", "N", "replicates", "rmse", "mean_runtime_seconds",
               "reference", "diverged_count")

EXPERIMENTS = (
    "fig_divergence_sigma1",
    "fig_converge_then_diverge_sigma01",
    "fig_converge_then_diverge_sigma033",
    "fig_ginzburg",
    "fig_langevin_benchmark",
    "mlmc_tamed_convergence",
)

_DEFAULT_RANGES = {
    "fig_divergence_sigma1": (1, 7),
    "fig_converge_then_diverge_sigma01": (1, 18),
    "fig_converge_then_diverge_sigma033": (1, 18),
    "fig_ginzburg": (1, 14),
    "fig_langevin_benchmark": (5, 14),
    "mlmc_tamed_convergence": (4, 14),
}


def default_N_range(experiment: str) -> tuple[int, ...]:
    lo, hi = _DEFAULT_RANGES[experiment]
    return tuple(2**e for e in range(lo, hi + 1))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one experiment run.

    ``gl_reference_samples`` / ``gl_reference_steps`` size the Monte Carlo
    reference for Ginzburg-Landau; ``langevin_reference_N`` /
    ``langevin_reference_runs`` size the tamed-MLMC reference used by the
    Langevin benchmark.
    """

    experiment: str
    seed: int | None = None
    replicates: int = 4
    N_range: tuple | None = None
    output_path: str | None = None
    timing: bool = True
    workers: int = 1
    gl_reference_samples: int = 10**5
    gl_reference_steps: int = 2**12
    langevin_reference_N: int = 2**16
    langevin_reference_runs: int = 16

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.replicates < 0:
            raise ValueError("replicates must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        rng = self.N_range if self.N_range is not None else default_N_range(self.experiment)
        rng = tuple(int(n) for n in rng)
        for n in rng:
            if n < 1 or n & (n - 1):
                raise ValueError(f"N_range entries must be powers of two, got {n}")
        object.__setattr__(self, "N_range", rng)
        object.__setattr__(self, "seed", resolve_seed(self.seed))


def format_cell(value) -> str:
    """CSV text for one cell: shortest round-trip floats, inf/-inf/nan, true/false."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def write_csv(target, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write ``header`` and ``rows`` to a path or an open text stream."""
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_csv(fh, header, rows)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_cell(v) for v in row])


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _error_rows(cfg: ExperimentConfig, problem, scheme: Scheme, reference: float):
    payoff = Payoff.terminal_power(2.0)
    cells = [(r, N) for r in range(cfg.replicates) for N in cfg.N_range]

    def run(cell):
        r, N = cell
        s = derive_seed(cfg.seed, r)
        rep = mlmc(problem, scheme, payoff, N, s)
        err = abs(rep.value - reference) if math.isfinite(rep.value) else math.inf
        return (cfg.experiment, r, s, N, scheme.value, rep.value, reference, err, rep.diverged)

    rows = _map(run, cells, cfg.workers)
    rows.sort(key=lambda row: (row[1], row[3]))
    return ERROR_HEADER, rows


def _rmse_rows(cfg: ExperimentConfig, problem, payoff, schemes, reference: float):
    if cfg.replicates == 0:
        return RMSE_HEADER, []
    seeds = [derive_seed(cfg.seed, r) for r in range(cfg.replicates)]
    cells = [(sc, N) for sc in schemes for N in cfg.N_range]

    def run(cell):
        sc, N = cell
        row = rmse_curve(problem, sc, payoff, [N], cfg.replicates, reference,
                         replicate_seeds=seeds)[0]
        runtime = row.mean_runtime if cfg.timing else math.nan
        return (cfg.experiment, sc.value, N, row.replicates, row.rmse, runtime, reference,
                row.diverged_count)

    rows = _map(run, cells, cfg.workers)
    rows.sort(key=lambda row: (row[1], row[2]))
    return RMSE_HEADER, rows


def langevin_reference(d: int = 10, N: int = 2**16, runs: int = 16, seed: int | None = None) -> float:
    """Mean of ``runs`` tamed-MLMC estimates of E[sup |X_t|^2] for Langevin at N steps.

    Run ``j`` uses ``derive_seed(derive_seed(seed, 2**32), j)``, a family
    disjoint from the replicate seeds of the benchmark itself.
    """
    base = derive_seed(resolve_seed(seed), 2**32)
    problem = make_langevin(d)
    payoff = Payoff.path_sup_square_norm()
    vals = [mlmc(problem, Scheme.TAMED_EULER, payoff, N, derive_seed(base, j)).value
            for j in range(runs)]
    return math.fsum(vals) / runs


def build_table(cfg: ExperimentConfig):
    """(header, rows) for an experiment without touching the filesystem."""
    name = cfg.experiment
    if name == "fig_divergence_sigma1":
        return _error_rows(cfg, make_x5_problem(1.0), Scheme.EXPLICIT_EULER, x5_expectation(1.0))
    if name == "fig_converge_then_diverge_sigma01":
        return _error_rows(cfg, make_x5_problem(0.1), Scheme.EXPLICIT_EULER, x5_expectation(0.1))
    if name == "fig_converge_then_diverge_sigma033":
        return _error_rows(cfg, make_x5_problem(1.0 / 3.0), Scheme.EXPLICIT_EULER,
                           x5_expectation(1.0 / 3.0))
    if name == "fig_ginzburg":
        if cfg.replicates == 0:
            return ERROR_HEADER, []
        ref, _ = gl_reference_value(cfg.gl_reference_samples, cfg.gl_reference_steps, cfg.seed)
        return _error_rows(cfg, make_ginzburg_landau(), Scheme.EXPLICIT_EULER, ref)
    if name == "mlmc_tamed_convergence":
        return _rmse_rows(cfg, make_x5_problem(1.0), Payoff.terminal_power(2.0),
                          [Scheme.TAMED_EULER], x5_expectation(1.0))
    # fig_langevin_benchmark
    if cfg.replicates == 0:
        return RMSE_HEADER, []
    ref = langevin_reference(10, cfg.langevin_reference_N, cfg.langevin_reference_runs, cfg.seed)
    return _rmse_rows(cfg, make_langevin(10), Payoff.path_sup_square_norm(),
                      [Scheme.IMPLICIT_EULER, Scheme.TAMED_EULER], ref)


def run_experiment(cfg: ExperimentConfig) -> str:
    """Run the experiment, write its CSV to ``cfg.output_path`` and return the CSV text.

    The output path is opened before any computation so an unwritable
    destination fails fast.  With no output path the text is only returned.
    """
    fh = None
    if cfg.output_path is not None:
        fh = open(cfg.output_path, "w", newline="", encoding="utf-8")
    try:
        header, rows = build_table(cfg)
        buf = io.StringIO()
        write_csv(buf, header, rows)
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text
    finally:
        if fh is not None:
            fh.close()
