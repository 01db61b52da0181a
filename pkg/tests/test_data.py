import numpy as np
import pytest

from hcqrf import DataError, ParseError, SurvivalDataset
from hcqrf.data import (
    SCENARIOS,
    ScenarioSpec,
    canonical_scenario,
    load_covariates,
    load_dataset,
    simulate_scenario,
    true_beta,
    write_dataset,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    f = _write(tmp_path / "d.csv", "time,status,x_1,z_1\n1.5,1,0.2,0\n2,0,0.4,1\n3,1,0.9,1\n")
    d = load_dataset(f)
    assert (d.n, d.p, d.q) == (3, 1, 2)
    np.testing.assert_array_equal(d.z[:, 0], 1.0)
    assert d.modifier_names == ("1",) and d.predictor_names == ("intercept", "1")


def test_negative_time_names_row(tmp_path):
    f = _write(tmp_path / "d.csv", "time,status,x_1\n1,1,0\n-1,1,0\n3,0,1\n")
    with pytest.raises(ParseError, match="negative time, row 2"):
        load_dataset(f)


def test_bad_status(tmp_path):
    f = _write(tmp_path / "d.csv", "time,status,x_1\n1,1,0\n2,2,0\n3,0,1\n")
    with pytest.raises(ParseError, match="status must be 0/1"):
        load_dataset(f)


def test_missing_and_non_numeric_cells(tmp_path):
    f = _write(tmp_path / "d.csv", "time,status,x_1\n1,1,\n2,0,0\n3,0,1\n")
    with pytest.raises(ParseError, match="missing value, row 1, column x_1"):
        load_dataset(f)
    f = _write(tmp_path / "e.csv", "time,status,x_1\n1,1,abc\n2,0,0\n3,0,1\n")
    with pytest.raises(ParseError) as err:
        load_dataset(f)
    assert err.value.row == 1 and err.value.column == "x_1"


def test_missing_column(tmp_path):
    f = _write(tmp_path / "d.csv", "time,x_1\n1,0\n2,1\n")
    with pytest.raises(ParseError, match="missing columns: status"):
        load_dataset(f, {"time": "time", "status": "status", "modifiers": ["x_1"]})


def test_categorical_levels_sorted(tmp_path):
    f = _write(tmp_path / "d.csv", "t,s,grade,age\n1,1,b,30\n2,0,a,40\n3,1,c,50\n4,1,a,60\n")
    d = load_dataset(f, {"time": "t", "status": "s", "modifiers": ["grade", "age"],
                         "categorical": ["grade"]})
    np.testing.assert_array_equal(d.x[:, 0], [1, 0, 2, 0])
    assert d.q == 1


def test_write_then_load_round_trip(tmp_path):
    train, _ = simulate_scenario(ScenarioSpec("S1", n1=50, n2=5, seed=3))
    write_dataset(train, tmp_path / "t.csv")
    back = load_dataset(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.y, train.y)
    np.testing.assert_array_equal(back.x, train.x)
    np.testing.assert_array_equal(back.z, train.z)
    x, z = load_covariates(tmp_path / "t.csv", back.modifier_names, back.predictor_names)
    np.testing.assert_array_equal(x, train.x)
    np.testing.assert_array_equal(z, train.z)


def test_dataset_validation():
    with pytest.raises(DataError, match="constant 1"):
        SurvivalDataset(np.ones(3), np.ones(3), np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(DataError, match="more rows"):
        SurvivalDataset(np.ones(2), np.ones(2), np.zeros((2, 1)), np.ones((2, 2)))
    d = SurvivalDataset(np.ones(3), [1, 0, 1], np.zeros((3, 1)), np.ones((3, 1)))
    assert d.censoring_rate == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        d.y[0] = 5.0


def test_scenario_one_coefficients():
    x = np.full(10, 0.5)
    assert true_beta("S1", x, 0.5)[1] == 10.0
    x[:2] = (0.1, 0.9)
    assert true_beta("S1", x, 0.5)[1] == 15.0


def test_scenario_three_and_two_coefficients():
    x = np.full(10, 0.5)
    assert true_beta("S3", x, 0.5)[1] == pytest.approx(2.5)
    x = np.zeros(10)
    x[:2] = np.sqrt(0.125)
    np.testing.assert_allclose(true_beta("S2", x, 0.5)[1:], [1, 3, 5])
    x[:2] = 1.0
    np.testing.assert_allclose(true_beta("S2", x, 0.5)[1:], [0, 10, 0])
    np.testing.assert_array_equal(true_beta("Sup1", np.random.default_rng(0).uniform(size=(4, 10)), 0.3),
                                  np.tile([5.0, 10.0], (4, 1)))


def test_coefficient_value_sets():
    x = np.random.default_rng(1).uniform(0, 1, (2000, 10))
    assert set(np.unique(true_beta("S1", x, 0.5)[:, 1])) == {10.0, 15.0}
    assert len(np.unique(true_beta("S2", x, 0.5), axis=0)) == 2
    # S3 coefficients are continuous: small moves give small changes
    x2 = np.random.default_rng(2).uniform(0, 2, (500, 10))
    b = true_beta("S3", x2, 0.5)
    b_eps = true_beta("S3", x2 + 1e-6, 0.5)
    assert np.max(np.abs(b - b_eps)) < 1e-4


def test_scenario_aliases():
    assert canonical_scenario("s3b") == "S3b_heavy_tail"
    assert canonical_scenario("S1_tree_binary") == "S1_tree_binary"
    with pytest.raises(DataError):
        canonical_scenario("S9")


def test_spec_defaults_and_validation():
    assert ScenarioSpec("Sup1").n2 == 200
    assert ScenarioSpec("S1").n2 == 400
    with pytest.raises(DataError):
        ScenarioSpec("S3", p=2)
    with pytest.raises(DataError):
        ScenarioSpec("S1", tau=1.0)


@pytest.mark.parametrize("sid", SCENARIOS)
def test_simulation_is_reproducible(sid):
    spec = ScenarioSpec(sid, n1=80, n2=20, seed=11)
    (a, ta), (b, tb) = simulate_scenario(spec), simulate_scenario(spec)
    for f in ("y", "delta", "x", "z", "event_time"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert ta.beta_true.tobytes() == tb.beta_true.tobytes()
    assert a.n == 80 and ta.x_star.shape == (20, 10)


def test_train_stream_independent_of_test_size():
    a, _ = simulate_scenario(ScenarioSpec("S1", n1=60, n2=10, seed=4))
    b, _ = simulate_scenario(ScenarioSpec("S1", n1=60, n2=300, seed=4))
    np.testing.assert_array_equal(a.y, b.y)


def test_errors_are_centered_at_tau_quantile():
    # P(T <= z' beta(x) | x, z) should equal tau
    for sid in ("S1", "S3", "S3a", "S3b", "Sup1"):
        for tau in (0.25, 0.5, 0.75):
            train, _ = simulate_scenario(ScenarioSpec(sid, n1=20000, n2=1, tau=tau, seed=2))
            q = np.einsum("ij,ij->i", train.z, true_beta(sid, train.x, tau))
            assert abs(np.mean(train.event_time <= q) - tau) < 0.015, (sid, tau)


def _mean_censoring(sid, seeds=20):
    return np.mean([simulate_scenario(ScenarioSpec(sid, n1=500, n2=1, seed=s))[0].censoring_rate
                    for s in range(seeds)])


@pytest.mark.parametrize("sid", [
    "S1", "S2", "S3", "S3a", "S3b", "S3c", "Sup1", "Sup2",
])
def test_censoring_rate_near_quarter(sid):
    rate = _mean_censoring(sid)
    assert abs(rate - 0.25) <= 0.05, rate
