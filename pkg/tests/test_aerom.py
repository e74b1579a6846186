import numpy as np
import pytest

from sodinv import aerom
from sodinv import autodiff as ad
from sodinv import nn
from sodinv import sampling as smp
from sodinv.autodiff import Tape
from sodinv.euler1d import Grid, PrimitiveField, SolverConfig


@pytest.fixture(scope="module")
def tiny_dataset():
    grid = Grid(nx=64)
    thetas = smp.lhs_sample(24, smp.ParameterRanges(), seed=42)
    return smp.generate_dataset(thetas, grid, SolverConfig(), seed=42)


@pytest.fixture(scope="module")
def tiny_split(tiny_dataset):
    return smp.split_dataset(tiny_dataset, 0.8, seed=1)


@pytest.fixture(scope="module")
def tiny_bundle(tiny_dataset, tiny_split):
    cfg = aerom.TrainingConfig(epochs=40, batch_size=8, latent_dim=8,
                               fo_epochs=60, seed=7)
    bundle, _ = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
    aerom.train_forward_operator(bundle, tiny_dataset, tiny_split, cfg)
    return bundle


class TestEncodeDecode:
    def test_latent_length(self, tiny_bundle, tiny_dataset):
        z = aerom.encode(tiny_bundle, tiny_dataset.pairs[0].xf)
        assert z.shape == (tiny_bundle.latent_dim,)

    def test_identical_fields_identical_latents(self, tiny_bundle, tiny_dataset):
        fld = tiny_dataset.pairs[1].xf
        assert np.array_equal(aerom.encode(tiny_bundle, fld),
                              aerom.encode(tiny_bundle, fld))

    def test_encode_continuity(self, tiny_bundle, tiny_dataset):
        fld = tiny_dataset.pairs[2].xf
        z0 = aerom.encode(tiny_bundle, fld)
        bumped = PrimitiveField(fld.rho.copy(), fld.u.copy(), fld.p.copy())
        bumped.rho[10] += 1e-8
        z1 = aerom.encode(tiny_bundle, bumped)
        assert 0 < np.max(np.abs(z1 - z0)) < 1e-5

    def test_grid_mismatch_rejected(self, tiny_bundle):
        wrong = PrimitiveField(np.ones(32), np.zeros(32), np.ones(32))
        with pytest.raises(ValueError, match="cells"):
            aerom.encode(tiny_bundle, wrong)

    def test_decode_shape(self, tiny_bundle):
        fld = aerom.decode(tiny_bundle, np.zeros(tiny_bundle.latent_dim))
        assert fld.as_array().shape == (3, 64)

    def test_decode_length_mismatch(self, tiny_bundle):
        with pytest.raises(ValueError, match="latent"):
            aerom.decode(tiny_bundle, np.zeros(5))

    def test_reconstruction_roundtrip_close(self, tiny_bundle, tiny_dataset, tiny_split):
        total, _ = aerom.validation_mse(tiny_bundle, tiny_dataset, tiny_split[1])
        fld = tiny_dataset.pairs[int(tiny_split[1][0])].xf
        recon = aerom.decode(tiny_bundle, aerom.encode(tiny_bundle, fld))
        err = tiny_bundle.stats.apply(recon.as_array()) - tiny_bundle.stats.apply(fld.as_array())
        assert np.mean(err**2) < 20 * max(total, 1e-8)


class TestTraining:
    def test_loss_decreases_and_finite(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=10, batch_size=8, latent_dim=4,
                                   fo_epochs=5, seed=3)
        _, history = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        assert np.all(np.isfinite(history["train"]))
        assert history["train"][-1] < history["train"][0]

    def test_seed_reproducibility(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=4, batch_size=8, latent_dim=4,
                                   fo_epochs=3, seed=5)
        _, h1 = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        _, h2 = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        assert h1["train"] == h2["train"]
        assert h1["val"] == h2["val"]

    def test_encoder_frozen_bitwise(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=3, batch_size=8, latent_dim=4,
                                   fo_epochs=10, seed=9)
        bundle, _ = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        before = bundle.encoder.params.copy_values()
        aerom.train_forward_operator(bundle, tiny_dataset, tiny_split, cfg)
        after = bundle.encoder.params.copy_values()
        for name in before:
            assert np.array_equal(before[name], after[name])

    def test_identity_dataset_forward_operator(self, tiny_dataset, tiny_split):
        # xf == x0 for every pair: F converges toward the identity map on the
        # training latents
        cfg = aerom.TrainingConfig(epochs=1, batch_size=32, latent_dim=4,
                                   fo_epochs=4000, seed=2, lr_final=1e-5)
        bundle, _ = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        pairs = [smp.SnapshotPair(p.theta, p.x0, p.x0) for p in tiny_dataset.pairs]
        degenerate = smp.Dataset(grid=tiny_dataset.grid, pairs=pairs, seed=0,
                                 solver_config=tiny_dataset.solver_config)
        history = aerom.train_forward_operator(bundle, degenerate, tiny_split, cfg)
        assert history["train"][-1] < 1e-6

    def test_budget_subsampling_nested(self, tiny_dataset, tiny_split):
        small = aerom._budget_indices(tiny_split[0], 5, seed=4)
        large = aerom._budget_indices(tiny_split[0], 10, seed=4)
        assert set(small).issubset(set(large))
        with pytest.raises(ValueError, match="budget"):
            aerom._budget_indices(tiny_split[0], 10_000, seed=4)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_training_aborts(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=3, batch_size=8, latent_dim=4,
                                   fo_epochs=3, seed=1, lr=1e150)
        with pytest.raises(RuntimeError, match="non-finite"):
            aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)


class TestPredictFinal:
    def test_shape_and_finite(self, tiny_bundle):
        rng = np.random.default_rng(0)
        for _ in range(5):
            theta = np.array([rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                              rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.15)])
            pred = aerom.predict_final(tiny_bundle, theta)
            arr = pred.as_array()
            assert arr.shape == (3, 64) and np.all(np.isfinite(arr))

    def test_determinism(self, tiny_bundle):
        theta = np.array([1.0, 1.0, 0.125, 0.1])
        a = aerom.predict_final(tiny_bundle, theta)
        b = aerom.predict_final(tiny_bundle, theta)
        assert np.array_equal(a.as_array(), b.as_array())

    def test_theta_gradient_matches_fd(self, tiny_bundle):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(10):
            theta = np.array([rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4),
                              rng.uniform(0.06, 0.14), rng.uniform(0.06, 0.14)])
            tape = Tape(record_params=False)
            tvar = tape.input(theta)
            out = aerom.surrogate_forward(tape, tiny_bundle, tvar)
            tape.backward(ad.vsum(ad.mul(out, out)))
            g_ad = tvar.grad.copy()
            for i in range(4):
                h = 1e-6 * max(1.0, abs(theta[i]))
                tp, tm = theta.copy(), theta.copy()
                tp[i] += h
                tm[i] -= h
                fp = np.sum(aerom.predict_final(tiny_bundle, tp).as_array() ** 2)
                fm = np.sum(aerom.predict_final(tiny_bundle, tm).as_array() ** 2)
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(g_ad[i] - fd) / max(abs(fd), 1e-6))
        assert worst <= 1e-4

    def test_untrained_bundle_rejected(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=1, batch_size=8, latent_dim=4,
                                   fo_epochs=1, seed=0)
        bundle, _ = aerom.train_autoencoder(tiny_dataset, tiny_split, cfg)
        with pytest.raises(RuntimeError, match="forward operator"):
            aerom.predict_final(bundle, np.array([1.0, 1.0, 0.125, 0.1]))

    def test_decoder_gradcheck(self, tiny_bundle):
        z0 = aerom.encode(tiny_bundle, aerom.decode(tiny_bundle, np.zeros(8)))
        target = np.zeros((1, 3, 64))

        def loss_fn():
            t = Tape()
            out = tiny_bundle.decoder.forward(t, t.constant(z0[None]))
            return ad.mse_loss(out, target)

        report = nn.gradcheck(loss_fn, tiny_bundle.decoder.params,
                              np.random.default_rng(3), n_per_param=2)
        assert report.passed, report


class TestSweeps:
    def test_latent_sweep_contract(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=5, batch_size=8, latent_dim=4,
                                   fo_epochs=3, seed=6)
        result = aerom.latent_sweep(tiny_dataset, [2, 4], tiny_split, cfg)
        assert result.column("latent_dim") == [2, 4]
        for row in result.rows:
            assert row["val_mse"] >= 0.0
            assert row["train_seconds"] > 0.0
            assert set(row) >= {"val_mse_rho", "val_mse_u", "val_mse_p"}

    def test_data_study_contract(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=5, batch_size=8, latent_dim=4,
                                   fo_epochs=3, seed=6)
        result = aerom.data_scaling_study(tiny_dataset, [4, 8], tiny_split, cfg)
        assert result.column("n_sim") == [4, 8]

    def test_budget_exceeding_split_rejected(self, tiny_dataset, tiny_split):
        cfg = aerom.TrainingConfig(epochs=1, batch_size=8, latent_dim=4,
                                   fo_epochs=1, seed=6)
        with pytest.raises(ValueError, match="budget"):
            aerom.data_scaling_study(tiny_dataset, [1000], tiny_split, cfg)

    def test_sweep_csv(self, tiny_dataset, tiny_split, tmp_path):
        cfg = aerom.TrainingConfig(epochs=2, batch_size=8, latent_dim=2,
                                   fo_epochs=1, seed=6)
        result = aerom.latent_sweep(tiny_dataset, [2], tiny_split, cfg)
        path = tmp_path / "sweep.csv"
        result.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0].startswith("latent_dim,val_mse")
        assert len(lines) == 2


class TestPersistence:
    def test_bundle_roundtrip(self, tiny_bundle, tmp_path):
        path = tmp_path / "bundle.sstb"
        aerom.save_bundle(tiny_bundle, path)
        back = aerom.load_bundle(path)
        theta = np.array([1.0, 1.0, 0.125, 0.1])
        assert np.array_equal(aerom.predict_final(back, theta).as_array(),
                              aerom.predict_final(tiny_bundle, theta).as_array())
        assert back.training_meta["seed"] == tiny_bundle.training_meta["seed"]

    def test_byte_determinism(self, tiny_bundle, tmp_path):
        a, b = tmp_path / "a.sstb", tmp_path / "b.sstb"
        aerom.save_bundle(tiny_bundle, a)
        aerom.save_bundle(tiny_bundle, b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_kind_rejected(self, tiny_dataset, tmp_path):
        path = tmp_path / "ds.sstb"
        smp.save_dataset(tiny_dataset, path)
        with pytest.raises(Exception, match="bundle"):
            aerom.load_bundle(path)


class TestArchSpec:
    def test_encoder_lengths_paper_grid(self):
        arch = aerom.ArchSpec(nx=1000, latent_dim=32)
        assert arch.encoder_lengths() == [1000, 500, 250, 125, 63]

    def test_encoder_lengths_desk_grid(self):
        arch = aerom.ArchSpec(nx=256, latent_dim=32)
        assert arch.encoder_lengths() == [256, 128, 64, 32, 16]

    def test_bundle_invariant_shapes(self, tiny_bundle):
        # encoder output, decoder input and forward-operator ends all share N_z
        z = aerom.encode(tiny_bundle, aerom.decode(tiny_bundle, np.zeros(8)))
        assert z.shape == (8,)
        t = Tape()
        zf = tiny_bundle.forward_op.forward(t, t.constant(np.zeros((1, 8))))
        assert zf.data.shape == (1, 8)
