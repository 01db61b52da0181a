"""Accuracy metrics, Kaplan-Meier curves and the calibration statistic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

QUANTILE_GRID = np.round(np.arange(1, 20) * 0.05, 2)
RELATIVE_FLOOR = 1e-8


@dataclass
class MetricTable:
    """Rows of ``(method, coefficient, mse, mae, rmse, rmae)``.

    ``rmse`` and ``rmae`` are None where the true value comes within
    ``1e-8`` of zero somewhere on the test set.
    """

    rows: list = field(default_factory=list)
    n_reps: int = 1
    scenario: str | None = None
    tau: float | None = None
    config: dict = field(default_factory=dict)

    def get(self, method, coefficient) -> dict:
        for r in self.rows:
            if r["method"] == method and r["coefficient"] == coefficient:
                return r
        raise KeyError((method, coefficient))

    def to_csv(self, path):
        cols = ["method", "coefficient", "mse", "mae", "rmse", "rmae"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["method"], r["coefficient"]] + [
                    "" if r[c] is None else repr(float(r[c])) for c in cols[2:]
                ])

    def format(self) -> str:
        head = f"{'method':<12}{'coefficient':<13}{'MSE':>11}{'MAE':>11}{'RMSE':>11}{'RMAE':>11}"
        lines = []
        if self.scenario is not None:
            lines.append(f"{self.scenario} tau={self.tau:g} reps={self.n_reps}")
        lines.append(head)
        fmt = lambda v: f"{'-':>11}" if v is None else f"{v:>11.4f}"
        for r in self.rows:
            lines.append(f"{r['method']:<12}{r['coefficient']:<13}" + "".join(
                fmt(r[c]) for c in ("mse", "mae", "rmse", "rmae")
            ))
        return "\n".join(lines)


def _metric_row(method, name, est, true):
    err = est - true
    row = {
        "method": method,
        "coefficient": name,
        "mse": float(np.mean(err ** 2)),
        "mae": float(np.mean(np.abs(err))),
        "rmse": None,
        "rmae": None,
    }
    if np.min(np.abs(true)) > RELATIVE_FLOOR:
        rel = err / np.abs(true)
        row["rmse"] = float(np.mean(rel ** 2))
        row["rmae"] = float(np.mean(np.abs(rel)))
    return row


def mse_mae(estimates, truth, method="hcqrf", names=None) -> MetricTable:
    """Per-coefficient test-set errors of ``estimates`` against ``truth``.

    ``truth`` is a TruthTable or an array shaped like ``estimates``.
    Coefficients are labelled ``beta0, beta1, ...`` unless ``names`` is
    given.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    true = np.atleast_2d(np.asarray(getattr(truth, "beta_true", truth), dtype=float))
    if est.shape != true.shape:
        raise DataError(f"estimate shape {est.shape} does not match truth {true.shape}")
    names = names or [f"beta{j}" for j in range(est.shape[1])]
    return MetricTable([_metric_row(method, names[j], est[:, j], true[:, j]) for j in range(est.shape[1])])


def quantile_metrics(predicted, q_true, method="hcqrf") -> dict:
    """Errors of predicted conditional quantiles, labelled ``quantile``."""
    return _metric_row(method, "quantile", np.asarray(predicted, dtype=float),
                       np.asarray(q_true, dtype=float))


@dataclass(frozen=True)
class KmCurve:
    """Kaplan-Meier product-limit estimate.

    ``survival[j]`` is ``S(t)`` on ``[times[j], times[j + 1])``; ``S = 1``
    before the first event time.
    """

    times: np.ndarray
    survival: np.ndarray
    n_risk: np.ndarray
    n_event: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.times, t, side="right")
        s = np.concatenate([[1.0], self.survival])[pos]
        return float(s) if s.ndim == 0 else s

    def quantile(self, tau) -> float:
        """``inf{t : 1 - S(t) >= tau}``."""
        hit = np.flatnonzero(1.0 - self.survival >= tau - 1e-12)
        if hit.size == 0:
            raise DataError(f"quantile beyond follow-up: KM curve never reaches {tau:g}")
        return float(self.times[hit[0]])


def km_estimate(times, status) -> KmCurve:
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=np.int64)
    if times.size == 0:
        raise DataError("Kaplan-Meier needs at least one observation")
    if times.shape != status.shape:
        raise DataError("times and status differ in length")
    event_times = np.unique(times[status == 1])
    n_risk = np.array([np.sum(times >= t) for t in event_times], dtype=np.int64)
    n_event = np.array([np.sum((times == t) & (status == 1)) for t in event_times], dtype=np.int64)
    surv = np.cumprod(1.0 - n_event / n_risk) if event_times.size else np.empty(0)
    return KmCurve(event_times, surv, n_risk, n_event)


def invert_quantile_grid(q_values, t, grid=QUANTILE_GRID) -> float:
    """``sup{tau in grid range : Q(tau) <= t}`` for a linearly interpolated Q.

    The result is clamped to ``[grid[0], grid[-1]]``.
    """
    q = np.asarray(q_values, dtype=float)
    g = np.asarray(grid, dtype=float)
    if q[-1] <= t:
        return float(g[-1])
    for j in range(len(g) - 2, -1, -1):
        if q[j + 1] <= t:
            return float(g[j + 1])
        if q[j] <= t:
            frac = (t - q[j]) / (q[j + 1] - q[j])
            return float(g[j] + frac * (g[j + 1] - g[j]))
    return float(g[0])


def calibration_tau_hat(model, x, z, times, status, tau, grid=QUANTILE_GRID) -> float:
    """Average model-implied level of the stratum's Kaplan-Meier quantile.

    Parameters
    ----------
    model
        Any object with ``predict_quantile_grid(x, z, taus)`` returning an
        array of shape ``(n, len(taus))``.
    x, z : array_like
        Members of one stratum.
    times, status : array_like
        The stratum's observed outcomes for the Kaplan-Meier curve.
    tau : float
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise DataError("empty stratum")
    t_km = km_estimate(times, status).quantile(tau)
    qgrid = np.asarray(model.predict_quantile_grid(x, z, grid), dtype=float)
    return float(np.mean([invert_quantile_grid(row, t_km, grid) for row in qgrid]))


def calibration_table(model, data, groups, tau, grid=QUANTILE_GRID) -> dict:
    """``tau_hat`` for every (group, arm) stratum.

    ``groups`` labels each row of ``data``; the arm is ``data.z[:, 1]``
    (a single stratum per group when ``q == 1``).
    """
    groups = np.asarray(groups)
    arms = data.z[:, 1] if data.q > 1 else np.zeros(data.n)
    out = {}
    for g in np.unique(groups):
        for a in np.unique(arms):
            sel = (groups == g) & (arms == a)
            if not sel.any():
                continue
            out[(g.item() if hasattr(g, "item") else g, float(a))] = calibration_tau_hat(
                model, data.x[sel], data.z[sel], data.y[sel], data.delta[sel], tau, grid
            )
    return out


class ForestQuantileModel:
    """Conditional quantiles ``z' beta_tau(x)`` from a fitted forest."""

    def __init__(self, forest, n_jobs=1):
        self.forest = forest
        self.n_jobs = n_jobs

    def predict_quantile_grid(self, x, z, taus):
        from .forest import estimate_many

        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty((x.shape[0], len(taus)))
        for j, t in enumerate(taus):
            betas, _, _, status = estimate_many(self.forest, x, float(t), n_jobs=self.n_jobs)
            if np.any(status != 0):
                raise DataError(f"quantile fit failed at tau={t:g} for {int(np.sum(status != 0))} rows")
            out[:, j] = np.einsum("ij,ij->i", z, betas)
        return out
