import numpy as np
import pytest

from sodinv import sampling as smp
from sodinv.euler1d import Grid, PrimitiveField, SolverConfig


def tiny_grid():
    return Grid(nx=32)


def manual_dataset(n_pairs=6, nx=32, seed=0, rho_const=None):
    """Handcrafted dataset that avoids solver runs."""
    rng = np.random.default_rng(seed)
    grid = Grid(nx=nx)
    pairs = []
    for _ in range(n_pairs):
        theta = smp.ParameterVector(*rng.uniform(0.1, 1.0, 4))
        rho0 = np.full(nx, rho_const) if rho_const else rng.uniform(0.5, 1.5, nx)
        rhof = np.full(nx, rho_const) if rho_const else rng.uniform(0.5, 1.5, nx)
        x0 = PrimitiveField(rho0, np.zeros(nx), rng.uniform(0.5, 1.5, nx))
        xf = PrimitiveField(rhof, rng.normal(size=nx), rng.uniform(0.5, 1.5, nx))
        pairs.append(smp.SnapshotPair(theta, x0, xf))
    return smp.Dataset(grid=grid, pairs=pairs, seed=seed, solver_config=SolverConfig())


class TestLhs:
    def test_single_sample_in_range(self):
        ranges = smp.ParameterRanges()
        (theta,) = smp.lhs_sample(1, ranges, seed=0)
        for name, (lo, hi) in ranges.items():
            assert lo <= getattr(theta, name) <= hi

    def test_stratification_n4(self):
        ranges = smp.ParameterRanges()
        thetas = smp.lhs_sample(4, ranges, seed=3)
        rho_l = sorted(t.rho_L for t in thetas)
        edges = [0.5, 0.75, 1.0, 1.25, 1.5]
        for value, lo, hi in zip(rho_l, edges[:-1], edges[1:]):
            assert lo <= value <= hi

    def test_determinism(self):
        ranges = smp.ParameterRanges()
        a = smp.lhs_sample(7, ranges, seed=11)
        b = smp.lhs_sample(7, ranges, seed=11)
        assert all(x.as_array().tolist() == y.as_array().tolist() for x, y in zip(a, b))

    def test_stratification_property_random(self):
        # every dimension puts exactly one sample in each of the n strata
        ranges = smp.ParameterRanges()
        lows, highs = ranges.as_arrays()
        rng = np.random.default_rng(99)
        for _ in range(20):
            n = int(rng.integers(1, 40))
            seed = int(rng.integers(0, 2**31))
            arr = np.array([t.as_array() for t in smp.lhs_sample(n, ranges, seed)])
            for dim in range(4):
                unit = (arr[:, dim] - lows[dim]) / (highs[dim] - lows[dim])
                strata = np.floor(unit * n).astype(int)
                strata = np.clip(strata, 0, n - 1)  # top edge belongs to last stratum
                assert sorted(strata) == list(range(n))

    def test_n_zero_rejected(self):
        with pytest.raises(ValueError):
            smp.lhs_sample(0, smp.ParameterRanges(), seed=0)


class TestGenerateDataset:
    def test_order_and_count(self):
        grid = tiny_grid()
        thetas = smp.lhs_sample(3, smp.ParameterRanges(), seed=5)
        ds = smp.generate_dataset(thetas, grid, SolverConfig(), seed=5)
        assert len(ds) == 3
        for theta, pair in zip(thetas, ds.pairs):
            assert np.array_equal(theta.as_array(), pair.theta.as_array())
            assert pair.x0.nx == grid.nx and pair.xf.nx == grid.nx

    def test_uniform_theta_steady(self):
        grid = tiny_grid()
        theta = smp.ParameterVector(0.1, 0.12, 0.1, 0.12)
        ds = smp.generate_dataset([theta], grid, SolverConfig(), seed=0)
        pair = ds.pairs[0]
        assert np.max(np.abs(pair.xf.as_array() - pair.x0.as_array())) <= 1e-12

    def test_empty_list(self):
        ds = smp.generate_dataset([], tiny_grid(), SolverConfig(), seed=0)
        assert len(ds) == 0

    def test_positivity_of_outputs(self):
        grid = tiny_grid()
        thetas = smp.lhs_sample(5, smp.ParameterRanges(), seed=8)
        ds = smp.generate_dataset(thetas, grid, SolverConfig(), seed=8)
        for pair in ds.pairs:
            pair.xf.validate()

    def test_worker_fanout_matches_serial(self):
        grid = tiny_grid()
        thetas = smp.lhs_sample(4, smp.ParameterRanges(), seed=2)
        serial = smp.generate_dataset(thetas, grid, SolverConfig(), seed=2, workers=1)
        fanned = smp.generate_dataset(thetas, grid, SolverConfig(), seed=2, workers=2)
        for a, b in zip(serial.pairs, fanned.pairs):
            assert np.array_equal(a.xf.as_array(), b.xf.as_array())


class TestSplit:
    def test_fraction_arithmetic(self):
        ds = manual_dataset(10)
        train, val = smp.split_dataset(ds, 0.8, seed=0)
        assert len(train) == 8 and len(val) == 2

    def test_disjoint_covering_deterministic(self):
        ds = manual_dataset(25)
        a = smp.split_dataset(ds, 0.8, seed=4)
        b = smp.split_dataset(ds, 0.8, seed=4)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        merged = np.sort(np.concatenate(a))
        assert np.array_equal(merged, np.arange(25))

    def test_smallest_case(self):
        ds = manual_dataset(2)
        train, val = smp.split_dataset(ds, 0.5, seed=1)
        assert len(train) == 1 and len(val) == 1

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            smp.split_dataset(manual_dataset(4), 1.0, seed=0)


class TestNormalization:
    def test_standardizes_training_channels(self):
        ds = manual_dataset(8)
        idx = np.arange(6)
        stats = smp.fit_normalization(ds, idx)
        snaps = []
        for i in idx:
            snaps.append(stats.apply(ds.pairs[i].x0.as_array()))
            snaps.append(stats.apply(ds.pairs[i].xf.as_array()))
        stacked = np.stack(snaps)
        assert np.max(np.abs(stacked.mean(axis=(0, 2)))) <= 1e-10
        assert np.max(np.abs(stacked.std(axis=(0, 2)) - 1.0)) <= 1e-10

    def test_roundtrip(self):
        ds = manual_dataset(5)
        stats = smp.fit_normalization(ds, np.arange(5))
        arr = ds.pairs[0].xf.as_array()
        back = stats.invert(stats.apply(arr))
        assert np.max(np.abs(back - arr)) <= 1e-12

    def test_constant_channel_rejected(self):
        ds = manual_dataset(5, rho_const=0.9)
        with pytest.raises(ValueError, match="rho"):
            smp.fit_normalization(ds, np.arange(5))

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            smp.fit_normalization(manual_dataset(3), np.array([], dtype=int))

    def test_velocity_pooling_gives_positive_std(self):
        # x0 velocity is identically zero; pooling with xf keeps std positive
        grid = tiny_grid()
        thetas = smp.lhs_sample(3, smp.ParameterRanges(), seed=13)
        ds = smp.generate_dataset(thetas, grid, SolverConfig(), seed=13)
        stats = smp.fit_normalization(ds, np.arange(3))
        assert stats.std[1] > 0.0


class TestPersistence:
    def test_roundtrip_field_by_field(self, tmp_path):
        grid = tiny_grid()
        thetas = smp.lhs_sample(3, smp.ParameterRanges(), seed=21)
        ds = smp.generate_dataset(thetas, grid, SolverConfig(), seed=21)
        path = tmp_path / "ds.sstb"
        smp.save_dataset(ds, path)
        back = smp.load_dataset(path)
        assert back.grid == ds.grid
        assert back.seed == ds.seed
        assert back.solver_config == ds.solver_config
        for a, b in zip(ds.pairs, back.pairs):
            assert np.array_equal(a.theta.as_array(), b.theta.as_array())
            assert np.array_equal(a.x0.as_array(), b.x0.as_array())
            assert np.array_equal(a.xf.as_array(), b.xf.as_array())

    def test_byte_determinism(self, tmp_path):
        ds = manual_dataset(4)
        a, b = tmp_path / "a.sstb", tmp_path / "b.sstb"
        smp.save_dataset(ds, a)
        smp.save_dataset(ds, b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncation_detected(self, tmp_path):
        ds = manual_dataset(3)
        path = tmp_path / "ds.sstb"
        smp.save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(Exception, match="length mismatch"):
            smp.load_dataset(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "ds.sstb"
        path.write_bytes(b"JUNK" * 10)
        with pytest.raises(Exception, match="magic"):
            smp.load_dataset(path)


class TestParameterVector:
    def test_order_contract(self):
        theta = smp.ParameterVector(rho_L=1.0, p_L=2.0, rho_R=0.1, p_R=0.2)
        assert theta.as_array().tolist() == [1.0, 2.0, 0.1, 0.2]

    def test_positive_required(self):
        with pytest.raises(ValueError):
            smp.ParameterVector(1.0, -2.0, 0.1, 0.2)

    def test_ranges_validation(self):
        with pytest.raises(ValueError):
            smp.ParameterRanges(rho_L=(1.5, 0.5))
