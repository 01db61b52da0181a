"""Survival datasets, CSV ingestion and the synthetic scenarios.

A dataset holds the observed time ``y = min(T, C)``, the event indicator
``delta = 1{T <= C}``, effect modifiers ``x`` (n x p) and predictive
variables ``z`` (n x q) whose first column is the constant 1.

The CSV layout is one header row followed by comma separated numeric
cells::

    time,status,x_age,x_grade,z_treat
    12.5,1,63,2,1
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import DataError, ParseError

INTERCEPT = "intercept"


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored observations with modifiers and predictors.

    Parameters
    ----------
    y : ndarray of shape (n,)
        Observed times, nonnegative.
    delta : ndarray of shape (n,)
        1 for an observed event, 0 for a censored time.
    x : ndarray of shape (n, p)
        Effect modifiers.
    z : ndarray of shape (n, q)
        Predictive variables; column 0 must be identically 1.
    event_time : ndarray of shape (n,), optional
        Latent event times, known only for simulated data.  Used to build
        the complete-data version of a censored sample.
    """

    y: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    z: np.ndarray
    modifier_names: tuple = ()
    predictor_names: tuple = ()
    event_time: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        delta = np.ascontiguousarray(self.delta).astype(np.int64)
        x = np.ascontiguousarray(self.x, dtype=float)
        z = np.ascontiguousarray(self.z, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or x.ndim != 2 or z.ndim != 2:
            raise DataError("y must be 1-d; x and z must be 2-d")
        n = y.shape[0]
        if delta.shape != (n,) or x.shape[0] != n or z.shape[0] != n:
            raise DataError("y, delta, x and z must have the same number of rows")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)) or not np.all(np.isfinite(z)):
            raise DataError("non-finite values in data")
        if np.any(y < 0):
            raise DataError(f"negative time, row {int(np.argmax(y < 0)) + 1}")
        if np.any((delta != 0) & (delta != 1)):
            raise DataError("status must be 0/1")
        if z.shape[1] < 1 or np.any(z[:, 0] != 1.0):
            raise DataError("column 0 of z must be the constant 1")
        if x.shape[1] < 1:
            raise DataError("at least one modifier is required")
        if n <= z.shape[1]:
            raise DataError(f"need more rows than predictors (n={n}, q={z.shape[1]})")
        mnames = tuple(self.modifier_names) or tuple(f"x{k + 1}" for k in range(x.shape[1]))
        pnames = tuple(self.predictor_names) or (INTERCEPT,) + tuple(
            f"z{j}" for j in range(1, z.shape[1])
        )
        if len(mnames) != x.shape[1] or len(pnames) != z.shape[1]:
            raise DataError("column names do not match matrix widths")
        for name, value in (("y", y), ("delta", delta), ("x", x), ("z", z)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "modifier_names", mnames)
        object.__setattr__(self, "predictor_names", pnames)
        if self.event_time is not None:
            t = np.ascontiguousarray(self.event_time, dtype=float)
            t.setflags(write=False)
            object.__setattr__(self, "event_time", t)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def censoring_rate(self) -> float:
        return float(1.0 - self.delta.mean())

    def complete(self) -> "SurvivalDataset":
        """The same sample with every latent event time observed."""
        if self.event_time is None:
            raise DataError("latent event times are unknown for this dataset")
        return replace(self, y=self.event_time, delta=np.ones(self.n, dtype=np.int64))

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        t = None if self.event_time is None else self.event_time[rows]
        return replace(
            self, y=self.y[rows], delta=self.delta[rows], x=self.x[rows], z=self.z[rows],
            event_time=t,
        )


def default_schema(header):
    """Column roles implied by the ``time,status,x_*,z_*`` naming convention."""
    return {
        "time": "time",
        "status": "status",
        "modifiers": [h for h in header if h.startswith("x_")],
        "predictors": [h for h in header if h.startswith("z_")],
    }


def load_dataset(path, schema=None) -> SurvivalDataset:
    """Read a survival CSV.

    Parameters
    ----------
    path : str or Path
    schema : dict, optional
        Keys ``time``, ``status``, ``modifiers`` (list) and ``predictors``
        (list, may be empty).  ``categorical`` may list modifier columns
        holding text levels; those are mapped to 0, 1, 2, ... in sorted
        order.  Without a schema the ``time,status,x_*,z_*`` convention
        applies.

    Raises
    ------
    ParseError
        Missing columns, empty or non-numeric cells, negative times, or a
        status outside {0, 1}.  The message names the row (1-based, header
        excluded) and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        records = [r for r in reader if any(cell.strip() for cell in r)]
    schema = dict(default_schema(header) if schema is None else schema)
    modifiers = list(schema.get("modifiers", []))
    predictors = list(schema.get("predictors", []))
    categorical = set(schema.get("categorical", []))
    if not modifiers:
        raise ParseError("schema names no modifier columns")
    wanted = [schema["time"], schema["status"]] + modifiers + predictors
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", column=missing[0])
    pos = {h: i for i, h in enumerate(header)}
    if not records:
        raise ParseError(f"{path}: no data rows")

    levels = {}
    for col in categorical:
        values = sorted({r[pos[col]].strip() for r in records if pos[col] < len(r)})
        levels[col] = {v: float(i) for i, v in enumerate(values)}

    def cell(row_no, record, col):
        i = pos[col]
        raw = record[i].strip() if i < len(record) else ""
        if raw == "":
            raise ParseError(f"missing value, row {row_no}, column {col}", row_no, col)
        if col in levels:
            return levels[col][raw]
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(
                f"non-numeric value {raw!r}, row {row_no}, column {col}", row_no, col
            ) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite value, row {row_no}, column {col}", row_no, col)
        return value

    n = len(records)
    y = np.empty(n)
    delta = np.empty(n, dtype=np.int64)
    x = np.empty((n, len(modifiers)))
    z = np.ones((n, 1 + len(predictors)))
    for r, record in enumerate(records):
        row_no = r + 1
        y[r] = cell(row_no, record, schema["time"])
        if y[r] < 0:
            raise ParseError(f"negative time, row {row_no}", row_no, schema["time"])
        s = cell(row_no, record, schema["status"])
        if s not in (0.0, 1.0):
            raise ParseError(
                f"status must be 0/1, row {row_no}, column {schema['status']}",
                row_no, schema["status"],
            )
        delta[r] = int(s)
        for k, col in enumerate(modifiers):
            x[r, k] = cell(row_no, record, col)
        for j, col in enumerate(predictors):
            z[r, j + 1] = cell(row_no, record, col)
    strip = lambda c: c[2:] if c.startswith(("x_", "z_")) else c
    return SurvivalDataset(
        y, delta, x, z,
        tuple(strip(c) for c in modifiers),
        (INTERCEPT,) + tuple(strip(c) for c in predictors),
    )


def write_dataset(data: SurvivalDataset, path):
    """Write ``data`` in the ``time,status,x_*,z_*`` layout."""
    header = ["time", "status"] + [f"x_{m}" for m in data.modifier_names]
    header += [f"z_{m}" for m in data.predictor_names[1:]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow(
                [repr(float(data.y[i])), int(data.delta[i])]
                + [repr(float(v)) for v in data.x[i]]
                + [repr(float(v)) for v in data.z[i, 1:]]
            )


# --------------------------------------------------------------------------
# synthetic scenarios

SCENARIOS = (
    "S1_tree_binary",
    "S2_boosting",
    "S3_cosine",
    "S3a_hetero",
    "S3b_heavy_tail",
    "S3c_dep_censor",
    "Sup1_constant",
    "Sup2_quantile_varying",
)
_ALIASES = {s.split("_", 1)[0].lower(): s for s in SCENARIOS}


def canonical_scenario(scenario_id: str) -> str:
    """Resolve a full id (``S1_tree_binary``) or its prefix (``S1``)."""
    if scenario_id in SCENARIOS:
        return scenario_id
    key = str(scenario_id).lower()
    if key in _ALIASES:
        return _ALIASES[key]
    raise DataError(f"unknown scenario {scenario_id!r}; choose from {', '.join(SCENARIOS)}")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    n1: int = 500
    n2: int | None = None
    p: int = 10
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario_id", canonical_scenario(self.scenario_id))
        if self.n2 is None:
            default = 200 if self.scenario_id == "Sup1_constant" else 400
            object.__setattr__(self, "n2", default)
        if self.n1 <= 0 or self.n2 <= 0:
            raise DataError("n1 and n2 must be positive")
        if not 0.0 < self.tau < 1.0:
            raise DataError(f"tau must lie in (0, 1), got {self.tau}")
        if self.p < modifier_floor(self.scenario_id):
            raise DataError(
                f"{self.scenario_id} needs p >= {modifier_floor(self.scenario_id)}"
            )


@dataclass(frozen=True)
class TruthTable:
    """Test modifiers with the true coefficients at level ``tau``."""

    x_star: np.ndarray
    beta_true: np.ndarray
    z_star: np.ndarray | None = None
    q_true: np.ndarray | None = None

    def __post_init__(self):
        n = self.x_star.shape[0]
        if self.beta_true.shape[0] != n:
            raise DataError("beta_true and x_star row counts differ")
        for extra in (self.z_star, self.q_true):
            if extra is not None and extra.shape[0] != n:
                raise DataError("truth table row counts differ")


def modifier_floor(scenario_id) -> int:
    """Smallest modifier dimension a scenario's coefficient functions use."""
    sid = canonical_scenario(scenario_id)
    if sid.startswith(("S3", "Sup2")):
        return 3
    if sid == "Sup1_constant":
        return 1
    return 2


def predictor_count(scenario_id) -> int:
    """q, including the intercept."""
    sid = canonical_scenario(scenario_id)
    if sid == "S2_boosting":
        return 4
    if sid.startswith(("S3", "Sup2")):
        return 3
    return 2


def true_beta(scenario_id, x, tau) -> np.ndarray:
    """Coefficients of the conditional ``tau``-quantile of T given (x, z).

    ``x`` may be a single modifier vector or an (n, p) matrix; the result
    has shape (q,) or (n, q) accordingly.
    """
    sid = canonical_scenario(scenario_id)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] < modifier_floor(sid):
        raise DataError(
            f"{sid} needs at least {modifier_floor(sid)} modifiers, got {X.shape[1]}"
        )
    n = X.shape[0]
    if sid == "S1_tree_binary":
        b1 = 15.0 - 5.0 * ((X[:, 0] > 0.2) & (X[:, 1] > 0.2))
        out = np.column_stack([np.full(n, 5.0), b1])
    elif sid == "S2_boosting":
        inside = X[:, 0] ** 2 + X[:, 1] ** 2 < 1.0
        out = np.where(inside[:, None], [5.0, 1.0, 3.0, 5.0], [5.0, 0.0, 10.0, 0.0])
    elif sid == "Sup1_constant":
        out = np.tile([5.0, 10.0], (n, 1))
    else:
        b0 = 1.0 + 3.0 * X[:, 2]
        b1 = 10.0 - 7.5 * np.cos(np.pi / 2.0 * (X[:, 0] - 0.5))
        b2 = 0.5 * X[:, 1] * (3.0 - X[:, 1]) + 1.0
        if sid == "Sup2_quantile_varying":
            b2 = b2 + X[:, 1] * stats.chi2.ppf(tau, 1) / 10.0
        out = np.column_stack([b0, b1, b2])
    out = np.asarray(out, dtype=float)
    return out[0] if single else out


def _draw_covariates(sid, rng, n, p):
    q = predictor_count(sid)
    if sid == "S1_tree_binary":
        x = rng.uniform(0.0, 1.0, (n, p))
        znc = rng.binomial(1, 0.5, (n, 1)).astype(float)
    elif sid in ("S2_boosting", "Sup1_constant"):
        x = rng.uniform(0.0, 1.0, (n, p))
        znc = rng.uniform(0.0, 1.0, (n, q - 1))
    else:
        x = rng.uniform(0.0, 2.0, (n, p))
        znc = rng.uniform(0.0, 2.0, (n, q - 1))
    return x, np.column_stack([np.ones(n), znc])


def _centered_error(sid, rng, x, tau):
    # each error is shifted so its tau-quantile given x is 0
    n = x.shape[0]
    if sid in ("S1_tree_binary", "S2_boosting"):
        return rng.normal(0.0, 0.5, n) - 0.5 * stats.norm.ppf(tau)
    if sid in ("S3_cosine", "S3c_dep_censor"):
        return rng.normal(0.0, 1.0, n) - stats.norm.ppf(tau)
    if sid == "S3a_hetero":
        return x[:, 1] * (rng.normal(0.0, 1.0, n) - stats.norm.ppf(tau)) / 2.0
    if sid == "S3b_heavy_tail":
        return rng.standard_t(2, n) - stats.t.ppf(tau, 2)
    if sid == "Sup1_constant":
        return rng.chisquare(2, n) - stats.chi2.ppf(tau, 2)
    # Sup2: the chi-square term rides on beta_2, epsilon ~ U(0, 1)
    return rng.uniform(0.0, 1.0, n) - tau


def _censoring_times(sid, rng, x):
    n = x.shape[0]
    # S3 and Sup2 bounds give the 25% censoring the other scenarios have;
    # U(0, 30) and U(0, 67) would give about 41% and 18%
    upper = {
        "S1_tree_binary": 50.0,
        "S2_boosting": 40.0,
        "S3_cosine": 50.0,
        "S3a_hetero": 60.0,
        "S3b_heavy_tail": 60.0,
        "Sup1_constant": 48.0,
        "Sup2_quantile_varying": 50.0,
    }
    if sid == "S3c_dep_censor":
        xi = rng.uniform(0.0, 1.0, n)
        return -np.log(xi) / (0.017 * np.exp(0.1 * x[:, 0]))
    return rng.uniform(0.0, upper[sid], n)


def _event_times(sid, rng, x, z, tau):
    beta = true_beta(sid, x, tau)
    if sid == "Sup2_quantile_varying":
        # data carry the random X2 * xi / 10 slope; truth uses its tau-quantile
        beta = beta.copy()
        xi = rng.chisquare(1, x.shape[0])
        beta[:, 2] += x[:, 1] * (xi - stats.chi2.ppf(tau, 1)) / 10.0
    eps = _centered_error(sid, rng, x, tau)
    return np.einsum("ij,ij->i", z, beta) + eps


def simulate_scenario(spec: ScenarioSpec):
    """Draw a training sample and a test truth table for ``spec``.

    The train and test streams are independent children of ``spec.seed``,
    so the training data do not depend on ``n2`` and vice versa.

    Returns
    -------
    train : SurvivalDataset
        Carries the latent event times (see ``SurvivalDataset.complete``).
    truth : TruthTable
    """
    sid = spec.scenario_id
    train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(train_ss)
    x, z = _draw_covariates(sid, rng, spec.n1, spec.p)
    t = _event_times(sid, rng, x, z, spec.tau)
    c = _censoring_times(sid, rng, x)
    # negative latent times from unbounded errors are floored at 0
    t = np.maximum(t, 0.0)
    y = np.minimum(t, c)
    delta = (t <= c).astype(np.int64)
    q = z.shape[1]
    train = SurvivalDataset(
        y, delta, x, z,
        tuple(f"x{k + 1}" for k in range(spec.p)),
        (INTERCEPT,) + tuple(f"z{j}" for j in range(1, q)),
        event_time=t,
    )
    rng2 = np.random.default_rng(test_ss)
    xs, zs = _draw_covariates(sid, rng2, spec.n2, spec.p)
    beta = true_beta(sid, xs, spec.tau)
    truth = TruthTable(xs, beta, zs, np.einsum("ij,ij->i", zs, beta))
    return train, truth


def load_covariates(path, modifier_names, predictor_names):
    """Read ``x_*`` and ``z_*`` columns for prediction.

    Returns ``(x, z)`` with the intercept prepended to ``z``.  Other
    columns (time, status, ...) are ignored.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        records = [r for r in reader if any(cell.strip() for cell in r)]
    xcols = [f"x_{m}" for m in modifier_names]
    zcols = [f"z_{m}" for m in predictor_names[1:]]
    missing = [c for c in xcols + zcols if c not in header]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", column=missing[0])
    pos = {h: i for i, h in enumerate(header)}
    x = np.empty((len(records), len(xcols)))
    z = np.ones((len(records), 1 + len(zcols)))
    for r, record in enumerate(records):
        for target, cols, off in ((x, xcols, 0), (z, zcols, 1)):
            for j, col in enumerate(cols):
                raw = record[pos[col]].strip() if pos[col] < len(record) else ""
                try:
                    target[r, j + off] = float(raw)
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {raw!r}, row {r + 1}, column {col}", r + 1, col
                    ) from None
    return x, z
