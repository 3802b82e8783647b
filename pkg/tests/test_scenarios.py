import numpy as np
import pytest

from voltpolicy.scenarios import (
    BaseProfiles,
    MeterMask,
    ScenarioError,
    ScenarioSet,
    apply_mask,
    generate_dataset,
    load_profiles,
    read_scenarios,
    save_profiles,
    split,
    synthetic_profiles,
    write_scenarios,
)


def test_bundled_dataset_size(dataset, splits):
    assert len(dataset) == 1200 and dataset.n_buses == 36
    train, test = splits
    assert (len(train), len(test)) == (960, 240)
    # the test set is the chronological tail, the training part a permutation of the head
    np.testing.assert_array_equal(test.p_c, dataset.p_c[960:])
    assert sorted(map(tuple, train.p_c)) == sorted(map(tuple, dataset.p_c[:960]))


def test_generation_invariants(dataset):
    assert np.all(dataset.p_c >= 0) and np.all(dataset.p_g >= 0) and np.all(dataset.q_c >= 0)
    # lagging power factor in [0.9, 1]
    mask = dataset.p_c > 0
    pf = dataset.p_c[mask] / np.hypot(dataset.p_c[mask], dataset.q_c[mask])
    assert pf.min() >= 0.9 - 1e-12 and pf.max() <= 1.0
    np.testing.assert_array_equal(dataset.timestamps[:240], np.arange(240))
    np.testing.assert_array_equal(dataset.timestamps[240:480], np.arange(240))


def test_noise_scale():
    base = BaseProfiles(np.full((240, 2), 0.5), np.full((240, 2), 1.0))
    data = generate_dataset(base, 0.1, 20, seed=3)
    assert abs(np.std(data.p_c - 0.5) - 0.05) < 0.002
    assert abs(np.std(data.p_g - 1.0) - 0.1) < 0.004


def test_zero_noise_identical_replicas():
    base = synthetic_profiles(np.full(4, 0.05), [2, 3], n_points=30)
    data = generate_dataset(base, 0.0, 3, seed=1)
    for r in range(3):
        np.testing.assert_array_equal(data.p_c[30 * r : 30 * (r + 1)], base.p_c)
        np.testing.assert_array_equal(data.p_g[30 * r : 30 * (r + 1)], base.p_g)


def test_generation_is_seeded():
    base = synthetic_profiles(np.full(3, 0.05), [1], n_points=10)
    a = generate_dataset(base, 0.1, 2, seed=9)
    b = generate_dataset(base, 0.1, 2, seed=9)
    c = generate_dataset(base, 0.1, 2, seed=10)
    assert a.digest() == b.digest() != c.digest()


@pytest.mark.parametrize("kwargs", [dict(noise_sigma_ratio=-0.1), dict(replicas=0)])
def test_generation_errors(kwargs):
    base = synthetic_profiles(np.full(3, 0.05), [1], n_points=10)
    with pytest.raises(ScenarioError):
        generate_dataset(base, **kwargs)
    with pytest.raises(ScenarioError):
        generate_dataset(BaseProfiles(np.zeros((0, 3)), np.zeros((0, 3))))


def test_split_errors(dataset):
    with pytest.raises(ScenarioError):
        split(dataset, 1.0)
    with pytest.raises(ScenarioError):
        split(dataset.subset([0]), 0.8)


def test_masks(feeder, dataset):
    full = apply_mask(dataset, MeterMask.full(36), feeder.controlled_buses)
    np.testing.assert_array_equal(full.phi, dataset.theta_matrix)
    solar = MeterMask(tuple(feeder.solar_buses))
    masked = apply_mask(dataset, solar, feeder.controlled_buses)
    assert masked.phi.shape == (1200, 3 * len(feeder.solar_buses))
    # phi entries are an exact subset of theta
    idx = feeder.solar_buses - 1
    np.testing.assert_array_equal(masked.phi[:, : len(idx)], dataset.p_c[:, idx])
    np.testing.assert_array_equal(masked[5].phi, masked.phi[5])
    with pytest.raises(ScenarioError, match="12"):
        apply_mask(dataset, MeterMask(tuple(b for b in feeder.solar_buses if b != 12)), feeder.controlled_buses)
    with pytest.raises(ScenarioError):
        MeterMask(())
    with pytest.raises(ScenarioError):
        MeterMask((0, 1))
    with pytest.raises(ScenarioError):
        MeterMask((40,)).validate(36)


def test_iteration_yields_rows(dataset):
    sub = dataset.subset(np.arange(3))
    rows = list(sub)
    assert len(rows) == 3
    np.testing.assert_array_equal(rows[1].phi, sub.theta_matrix[1])
    np.testing.assert_array_equal(rows[1].theta.p_g, sub.p_g[1])


def test_scenario_csv_round_trip(tmp_path, dataset):
    sub = dataset.subset(np.arange(25))
    write_scenarios(sub, tmp_path / "s.csv")
    back = read_scenarios(tmp_path / "s.csv")
    assert back.digest() == sub.digest()
    empty = dataset.subset(np.arange(0))
    write_scenarios(empty, tmp_path / "e.csv")
    assert len(read_scenarios(tmp_path / "e.csv")) == 0
    with pytest.raises(ScenarioError):
        read_scenarios(tmp_path / "missing.csv")
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ScenarioError):
        read_scenarios(tmp_path / "bad.csv")


def test_profiles_round_trip(tmp_path):
    base = synthetic_profiles(np.full(3, 0.05), [1, 3], n_points=12)
    save_profiles(base, tmp_path / "p.csv")
    back = load_profiles(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.p_c, base.p_c)
    np.testing.assert_array_equal(back.p_g, base.p_g)
    assert np.all(base.p_g[:, 1] == 0)
    with pytest.raises(ScenarioError):
        load_profiles(tmp_path / "nope.csv")


def test_theta_matrix_layout():
    s = ScenarioSet.from_theta_matrix(np.arange(6.0).reshape(1, 6))
    np.testing.assert_array_equal(s.p_c, [[0, 1]])
    np.testing.assert_array_equal(s.q_c, [[2, 3]])
    np.testing.assert_array_equal(s.p_g, [[4, 5]])
    with pytest.raises(ScenarioError):
        ScenarioSet.from_theta_matrix(np.zeros((1, 4)))
    with pytest.raises(ScenarioError):
        ScenarioSet(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), [0, 1])
