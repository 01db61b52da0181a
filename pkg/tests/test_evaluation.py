import numpy as np
import pytest
from scipy import stats

from hcqrf import DataError, SurvivalDataset
from hcqrf.benchmark import METHODS, monte_carlo_benchmark, rep_seeds, write_benchmark
from hcqrf.data import ScenarioSpec, TruthTable
from hcqrf.evaluation import (
    QUANTILE_GRID,
    calibration_table,
    calibration_tau_hat,
    invert_quantile_grid,
    km_estimate,
    mse_mae,
)
from hcqrf.censoring import CdfConfig
from hcqrf.forest import ForestConfig


def test_perfect_and_offset_estimates():
    truth = np.array([[5.0, 10.0], [5.0, 15.0]])
    t = mse_mae(truth, truth)
    assert all(t.get("hcqrf", c)["mse"] == 0 for c in ("beta0", "beta1"))
    t = mse_mae(truth + 0.5, truth)
    row = t.get("hcqrf", "beta1")
    assert row["mse"] == pytest.approx(0.25) and row["mae"] == pytest.approx(0.5)
    assert row["rmae"] == pytest.approx(np.mean(0.5 / np.array([10.0, 15.0])))


def test_relative_metrics_absent_near_zero_truth():
    truth = np.array([[0.0, 1.0], [1.0, 1.0]])
    t = mse_mae(truth + 0.1, truth)
    assert t.get("hcqrf", "beta0")["rmse"] is None
    assert t.get("hcqrf", "beta1")["rmse"] is not None


def test_metric_shape_mismatch():
    with pytest.raises(DataError):
        mse_mae(np.zeros((3, 2)), np.zeros((3, 3)))


def test_metric_table_csv(tmp_path):
    t = mse_mae(np.ones((2, 1)), np.zeros((2, 1)))
    t.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "method,coefficient,mse,mae,rmse,rmae"
    assert lines[1] == "hcqrf,beta0,1.0,1.0,,"


def test_km_uncensored_steps():
    km = km_estimate([1, 2, 3, 4], [1, 1, 1, 1])
    np.testing.assert_allclose(km.survival, [0.75, 0.5, 0.25, 0.0])
    assert km(0.5) == 1.0 and km(2.5) == 0.5
    assert km.quantile(0.5) == 2.0


def test_km_with_one_censored_time():
    # {1, 2+, 3, 4}: the censored row leaves the risk set before t = 3
    km = km_estimate([1, 2, 3, 4], [1, 0, 1, 1])
    assert km(1) == pytest.approx(0.75)
    assert km(3) == pytest.approx(0.375)
    km3 = km_estimate([1, 2, 3], [1, 0, 1])
    assert km3(1) == pytest.approx(2 / 3)
    assert km3(3) == 0.0


def test_km_all_censored():
    km = km_estimate([1, 2, 3], [0, 0, 0])
    assert km(10.0) == 1.0
    with pytest.raises(DataError, match="quantile beyond follow-up"):
        km.quantile(0.5)


def test_km_matches_empirical_survival():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=200)
    km = km_estimate(t, np.ones(200))
    grid = rng.uniform(0, 3, 50)
    np.testing.assert_allclose(km(grid), 1 - np.searchsorted(np.sort(t), grid, side="right") / 200)


def test_inversion_clamps_and_interpolates():
    q = np.linspace(1, 19, 19)  # Q(tau_j) = j
    assert invert_quantile_grid(q, 0.0) == 0.05
    assert invert_quantile_grid(q, 100.0) == 0.95
    assert invert_quantile_grid(q, 10.0) == pytest.approx(0.5)
    assert invert_quantile_grid(q, 10.5) == pytest.approx(0.525)


def test_inversion_monotone_in_t():
    rng = np.random.default_rng(1)
    q = np.sort(rng.exponential(size=19)).cumsum()
    ts = np.linspace(-1, q[-1] + 1, 300)
    taus = [invert_quantile_grid(q, t) for t in ts]
    assert np.all(np.diff(taus) >= 0)


class NormalModel:
    """Conditional quantiles of T ~ N(mu, 1) with mu = 5 + 2 z."""

    def predict_quantile_grid(self, x, z, taus):
        mu = 5 + 2 * np.asarray(z)[:, 1]
        return mu[:, None] + stats.norm.ppf(np.asarray(taus))[None, :]


def test_calibration_below_grid_clamps():
    z = np.column_stack([np.ones(10), np.zeros(10)])
    # KM quantile near 0 while the model puts every quantile near 5
    assert calibration_tau_hat(NormalModel(), np.zeros((10, 1)), z, np.full(10, 0.1),
                               np.ones(10), 0.5) == 0.05


def test_calibration_truth_fed_model():
    rng = np.random.default_rng(2)
    n = 2000
    z = np.column_stack([np.ones(n), np.repeat([0.0, 1.0], n // 2)])
    t = 5 + 2 * z[:, 1] + rng.normal(size=n)
    data = SurvivalDataset(t, np.ones(n), np.zeros((n, 1)), z)
    table = calibration_table(NormalModel(), data, np.zeros(n), 0.5)
    assert set(table) == {(0.0, 0.0), (0.0, 1.0)}
    for v in table.values():
        assert abs(v - 0.5) < 0.05


def test_calibration_monotone_in_km_quantile():
    model = NormalModel()
    z = np.column_stack([np.ones(5), np.zeros(5)])
    vals = []
    for shift in np.linspace(3, 7, 9):
        times = shift + np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
        vals.append(calibration_tau_hat(model, np.zeros((5, 1)), z, times, np.ones(5), 0.5))
    assert np.all(np.diff(vals) >= 0)


def test_calibration_empty_stratum():
    with pytest.raises(DataError):
        calibration_tau_hat(NormalModel(), np.zeros((0, 1)), np.zeros((0, 2)), [], [], 0.5)


def test_grid_is_nineteen_levels():
    assert len(QUANTILE_GRID) == 19 and QUANTILE_GRID[0] == 0.05 and QUANTILE_GRID[-1] == 0.95


def test_rep_seeds_do_not_depend_on_size():
    assert rep_seeds(3, 5) == rep_seeds(3, 10)[:5]


def test_single_rep_benchmark(tmp_path):
    spec = ScenarioSpec("S1", n1=120, n2=30, seed=0)
    cfg = ForestConfig(n_trees=5, cdf=CdfConfig(n_trees=20))
    res = monte_carlo_benchmark(spec, tuple(METHODS), reps=1, seed=1, config=cfg)
    names = {(r["method"], r["coefficient"]) for r in res.table.rows}
    for m in METHODS:
        assert {(m, "beta0"), (m, "beta1"), (m, "quantile")} <= names
    csv_path, man_path = write_benchmark(res, tmp_path)
    assert csv_path.name == "benchmark_S1_tree_binary_0.5.csv"
    assert "build" in man_path.read_text()
    # a method's numbers do not depend on which other methods ran
    again = monte_carlo_benchmark(spec, ("hcqrf",), reps=1, seed=1, config=cfg)
    assert again.table.get("hcqrf", "beta1") == res.table.get("hcqrf", "beta1")


def test_aggregation_ignores_repetition_order():
    from hcqrf.benchmark import _mean_rows

    rng = np.random.default_rng(0)
    reps = [[{"method": "m", "coefficient": "beta0", "mse": v, "mae": v, "rmse": None, "rmae": None}]
            for v in rng.uniform(size=7)]
    a = _mean_rows(reps)[0]["mse"]
    b = _mean_rows(reps[::-1])[0]["mse"]
    assert a == pytest.approx(b, rel=1e-15)


def test_truth_table_rows_checked():
    with pytest.raises(DataError):
        TruthTable(np.zeros((3, 2)), np.zeros((2, 2)))
