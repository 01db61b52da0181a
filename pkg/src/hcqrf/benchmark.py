"""Monte Carlo comparison of forest variants on the synthetic scenarios."""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import ScenarioSpec, simulate_scenario
from .evaluation import MetricTable, _metric_row
from .forest import ForestConfig, estimate_many, grow_forest

log = logging.getLogger(__name__)

METHODS = {
    # name: (split rule, uses latent complete data)
    "hcqrf": ("hybrid", False),
    "hcqrf_c": ("hybrid", True),
    "marginal": ("marginal", False),
    "marginal_c": ("marginal", True),
}


def rep_seeds(seed, reps):
    """Seeds of the individual repetitions; shared across sample sizes."""
    ss = np.random.SeedSequence([int(seed), 4])
    return [int(s) for s in ss.generate_state(reps, dtype=np.uint32)]


@dataclass
class RepResult:
    rep: int
    seed: int
    method: str
    metrics: list
    censoring_rate: float
    seconds: float


@dataclass
class BenchmarkResult:
    table: MetricTable
    reps: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def values(self, method, coefficient, metric="mse") -> np.ndarray:
        """Per-repetition values of one metric, in repetition order."""
        out = []
        for r in self.reps:
            if r.method != method:
                continue
            for row in r.metrics:
                if row["coefficient"] == coefficient:
                    out.append(row[metric])
        return np.array(out, dtype=float)


def fit_method(method, train, tau, config, seed, n_jobs=1):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    rule, complete = METHODS[method]
    data = train.complete() if complete else train
    cfg = replace(config, split_rule=rule, complete_data=complete)
    return grow_forest(data, tau, cfg, seed=seed, n_jobs=n_jobs)


def evaluate_forest(forest, truth, method, n_jobs=1):
    betas, _, _, status = estimate_many(forest, truth.x_star, n_jobs=n_jobs)
    if np.any(status != 0):
        raise RuntimeError(f"{method}: estimation failed at {int(np.sum(status != 0))} test points")
    rows = [
        _metric_row(method, f"beta{j}", betas[:, j], truth.beta_true[:, j])
        for j in range(betas.shape[1])
    ]
    if truth.z_star is not None and truth.q_true is not None:
        pred = np.einsum("ij,ij->i", truth.z_star, betas)
        rows.append(_metric_row(method, "quantile", pred, truth.q_true))
    return rows


def _mean_rows(rows_by_rep):
    first = rows_by_rep[0]
    out = []
    for j, row in enumerate(first):
        merged = dict(row)
        for key in ("mse", "mae", "rmse", "rmae"):
            vals = [r[j][key] for r in rows_by_rep]
            merged[key] = None if any(v is None for v in vals) else float(np.mean(vals))
        out.append(merged)
    return out


def monte_carlo_benchmark(spec: ScenarioSpec, methods=("hcqrf",), reps=20, seed=0,
                          config: ForestConfig | None = None, n_jobs=1,
                          progress=None) -> BenchmarkResult:
    """Simulate, fit and score every method in ``reps`` repetitions.

    Repetition ``r`` simulates with the ``r``-th entry of
    ``rep_seeds(seed, reps)`` (so runs at different ``n1`` are paired) and
    grows each forest with that same seed.  Each repetition refits the
    censoring model.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    config = config or ForestConfig()
    start = time.perf_counter()
    per_method = {m: [] for m in methods}
    records = []
    for r, s in enumerate(rep_seeds(seed, reps)):
        train, truth = simulate_scenario(replace(spec, seed=s))
        for m in methods:
            t0 = time.perf_counter()
            try:
                forest = fit_method(m, train, spec.tau, config, s, n_jobs)
                rows = evaluate_forest(forest, truth, m, n_jobs)
            except Exception as exc:
                raise RuntimeError(f"repetition {r} (seed {s}), method {m}: {exc}") from exc
            per_method[m].append(rows)
            records.append(RepResult(r, s, m, rows, train.censoring_rate, time.perf_counter() - t0))
            log.info("rep %d seed %d %s done in %.1fs", r, s, m, records[-1].seconds)
            if progress is not None:
                progress(records[-1])
    table_rows = [row for m in methods for row in _mean_rows(per_method[m])]
    table = MetricTable(table_rows, reps, spec.scenario_id, spec.tau,
                        {"spec": asdict(spec), "forest": asdict(config), "seed": seed})
    return BenchmarkResult(table, records, time.perf_counter() - start)


def build_description() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_benchmark(result: BenchmarkResult, outdir, extra=None) -> tuple:
    """Write the metric CSV and a JSON manifest; returns both paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t = result.table
    csv_path = outdir / f"benchmark_{t.scenario}_{t.tau:g}.csv"
    t.to_csv(csv_path)
    manifest = {
        "config": t.config,
        "reps": [
            {"rep": r.rep, "seed": r.seed, "method": r.method,
             "censoring_rate": r.censoring_rate, "seconds": round(r.seconds, 3)}
            for r in result.reps
        ],
        "build": build_description(),
        "version": __version__,
        "wall_seconds": round(result.wall_seconds, 3),
    }
    if extra:
        manifest.update(extra)
    man_path = outdir / f"benchmark_{t.scenario}_{t.tau:g}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return csv_path, man_path
