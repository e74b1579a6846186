"""AE-ROM surrogate: convolutional encoder, mirrored decoder, latent forward
operator, their training loops, the composed predictor, and the latent-size /
data-budget studies."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import Tape, Variable
from .euler1d import Grid, PrimitiveField
from .nn import Adam, Conv1d, ConvTranspose1d, Dense, ParameterSet
from .sampling import Dataset, NormalizationStats, fit_normalization

KERNEL = 5
STRIDE = 2
PAD = 2  # keeps encoder lengths at ceil(L/2) per stage


@dataclass(frozen=True)
class ArchSpec:
    """Network sizes; everything else about the models follows from these."""

    nx: int
    latent_dim: int
    channels: tuple = (16, 32, 64, 128)
    fo_hidden: tuple = (128, 128)

    def encoder_lengths(self) -> list[int]:
        lengths = [self.nx]
        for _ in self.channels:
            lengths.append((lengths[-1] - 1) // STRIDE + 1)
        return lengths

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "fo_hidden": list(self.fo_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(nx=d["nx"], latent_dim=d["latent_dim"],
                   channels=tuple(d["channels"]), fo_hidden=tuple(d["fo_hidden"]))


@dataclass
class TrainingConfig:
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    latent_dim: int = 32
    n_sim: int | None = None  # training budget; None uses the whole train split
    fo_epochs: int = 200
    aux_decoded_loss: bool = False
    lr_final: float | None = None  # geometric decay target; None keeps lr constant

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.fo_epochs, self.latent_dim) < 1:
            raise ValueError("training sizes must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def lr_at(self, epoch: int, total: int) -> float:
        if self.lr_final is None or total <= 1:
            return self.lr
        frac = epoch / (total - 1)
        return self.lr * (self.lr_final / self.lr) ** frac


class Encoder:
    def __init__(self, arch: ArchSpec, rng: np.random.Generator):
        self.arch = arch
        self.params = ParameterSet()
        lengths = arch.encoder_lengths()
        self.convs = []
        c_prev = 3
        for i, c in enumerate(arch.channels):
            self.convs.append(
                Conv1d(f"enc.conv{i}", c_prev, c, KERNEL, STRIDE, PAD, self.params, rng)
            )
            c_prev = c
        self.flat_dim = arch.channels[-1] * lengths[-1]
        self.fc = Dense("enc.fc", self.flat_dim, arch.latent_dim, self.params, rng)

    def forward(self, tape: Tape, x: Variable) -> Variable:
        h = x
        for conv in self.convs:
            h = ad.gelu(conv(tape, h))
        h = ad.reshape(h, (h.shape[0], self.flat_dim))
        return self.fc(tape, h)


class Decoder:
    def __init__(self, arch: ArchSpec, rng: np.random.Generator):
        self.arch = arch
        self.params = ParameterSet()
        lengths = arch.encoder_lengths()
        self.flat_dim = arch.channels[-1] * lengths[-1]
        self.bottom_len = lengths[-1]
        self.fc = Dense("dec.fc", arch.latent_dim, self.flat_dim, self.params, rng)
        rev_channels = list(arch.channels[::-1])  # e.g. 128, 64, 32, 16
        rev_lengths = lengths[::-1]  # e.g. 63, 125, 250, 500, 1000
        self.tconvs = []
        for i in range(len(rev_channels)):
            c_in = rev_channels[i]
            c_out = rev_channels[i + 1] if i + 1 < len(rev_channels) else rev_channels[-1]
            self.tconvs.append(
                ConvTranspose1d(f"dec.tconv{i}", c_in, c_out, KERNEL, STRIDE,
                                rev_lengths[i + 1], self.params, rng)
            )
        self.head = Conv1d("dec.head", rev_channels[-1], 3, 1, 1, 0, self.params, rng)

    def forward(self, tape: Tape, z: Variable) -> Variable:
        h = ad.gelu(self.fc(tape, z))
        h = ad.reshape(h, (h.shape[0], self.arch.channels[-1], self.bottom_len))
        for tconv in self.tconvs:
            h = ad.gelu(tconv(tape, h))
        return self.head(tape, h)


class ForwardOperator:
    def __init__(self, arch: ArchSpec, rng: np.random.Generator):
        self.params = ParameterSet()
        sizes = [arch.latent_dim, *arch.fo_hidden, arch.latent_dim]
        self.layers = [
            Dense(f"fo.fc{i}", sizes[i], sizes[i + 1], self.params, rng)
            for i in range(len(sizes) - 1)
        ]

    def forward(self, tape: Tape, z: Variable) -> Variable:
        h = z
        for layer in self.layers[:-1]:
            h = ad.gelu(layer(tape, h))
        return self.layers[-1](tape, h)


@dataclass
class AeRomBundle:
    """Trained surrogate: encoder, decoder, forward operator, normalization."""

    arch: ArchSpec
    grid: Grid
    encoder: Encoder
    decoder: Decoder
    forward_op: ForwardOperator | None
    stats: NormalizationStats
    training_meta: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    def all_params(self) -> ParameterSet:
        ps = ParameterSet()
        ps.extend(self.encoder.params)
        ps.extend(self.decoder.params)
        if self.forward_op is not None:
            ps.extend(self.forward_op.params)
        return ps

    def ic_matrix(self) -> np.ndarray:
        """(3*nx, 4) map from theta to the flattened piecewise IC field."""
        nx = self.grid.nx
        left = self.grid.cell_centers <= 0.5
        mat = np.zeros((3 * nx, 4))
        mat[:nx, 0] = left
        mat[:nx, 2] = ~left
        mat[2 * nx :, 1] = left
        mat[2 * nx :, 3] = ~left
        return mat


# ---------------------------------------------------------------------------
# forward passes


def encode(bundle: AeRomBundle, fld: PrimitiveField) -> np.ndarray:
    """Normalized encoder pass; returns the latent vector of length N_z."""
    if fld.nx != bundle.arch.nx:
        raise ValueError(f"field has {fld.nx} cells, bundle expects {bundle.arch.nx}")
    x = bundle.stats.apply(fld.as_array())[None]
    tape = Tape(record_params=False)
    z = bundle.encoder.forward(tape, tape.constant(x))
    return z.data[0].copy()


def decode(bundle: AeRomBundle, z: np.ndarray) -> PrimitiveField:
    """Decoder pass plus denormalization back to physical units."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (bundle.latent_dim,):
        raise ValueError(f"latent vector must have length {bundle.latent_dim}")
    tape = Tape(record_params=False)
    out = bundle.decoder.forward(tape, tape.constant(z[None]))
    return PrimitiveField.from_array(bundle.stats.invert(out.data[0]))


def surrogate_forward(tape: Tape, bundle: AeRomBundle, theta: Variable) -> Variable:
    """Differentiable theta -> predicted final field (3, nx), physical units."""
    if bundle.forward_op is None:
        raise RuntimeError("bundle has no trained forward operator")
    nx = bundle.arch.nx
    flat = ad.matvec(tape.constant(bundle.ic_matrix()), theta)
    x = ad.reshape(flat, (1, 3, nx))
    mean = bundle.stats.mean.reshape(1, 3, 1)
    inv_std = (1.0 / bundle.stats.std).reshape(1, 3, 1)
    xn = ad.mul(ad.sub(x, mean), inv_std)
    z0 = bundle.encoder.forward(tape, xn)
    zf = bundle.forward_op.forward(tape, z0)
    xhat = bundle.decoder.forward(tape, zf)
    out = ad.add(ad.mul(xhat, bundle.stats.std.reshape(1, 3, 1)), mean)
    return ad.reshape(out, (3, nx))


def predict_final(bundle: AeRomBundle, theta) -> PrimitiveField:
    """Compose decoder(F(encoder(IC(theta)))) for a plain parameter vector."""
    arr = np.asarray(getattr(theta, "as_array", lambda: theta)(), dtype=np.float64)
    if arr.shape != (4,) or np.any(arr <= 0):
        raise ValueError("theta must be 4 positive components")
    tape = Tape(record_params=False)
    out = surrogate_forward(tape, bundle, tape.constant(arr))
    return PrimitiveField.from_array(out.data)


# ---------------------------------------------------------------------------
# training


def _normalized_snapshots(dataset: Dataset, idx, stats: NormalizationStats) -> np.ndarray:
    """Pooled initial+final snapshots, normalized, shape (2*len(idx), 3, nx)."""
    out = np.empty((2 * len(idx), 3, dataset.grid.nx))
    for j, i in enumerate(idx):
        out[2 * j] = stats.apply(dataset.pairs[i].x0.as_array())
        out[2 * j + 1] = stats.apply(dataset.pairs[i].xf.as_array())
    return out


def _budget_indices(train_idx: np.ndarray, n_sim: int | None, seed: int) -> np.ndarray:
    """Seeded prefix of a shuffled train split; prefixes nest across budgets."""
    train_idx = np.asarray(train_idx)
    if n_sim is None or n_sim >= train_idx.size:
        if n_sim is not None and n_sim > train_idx.size:
            raise ValueError(f"budget {n_sim} exceeds train split of {train_idx.size}")
        return train_idx
    perm = np.random.default_rng(seed).permutation(train_idx)
    return np.sort(perm[:n_sim])


def _eval_reconstruction(encoder: Encoder, decoder: Decoder, snaps: np.ndarray,
                         chunk: int = 64) -> tuple[float, np.ndarray]:
    """Total and per-channel MSE of decode(encode(x)) on normalized snapshots."""
    sq_sum = np.zeros(3)
    count = 0
    for lo in range(0, snaps.shape[0], chunk):
        x = snaps[lo : lo + chunk]
        tape = Tape(record_params=False)
        xhat = decoder.forward(tape, encoder.forward(tape, tape.constant(x)))
        err = (xhat.data - x) ** 2
        sq_sum += err.sum(axis=(0, 2))
        count += x.shape[0] * x.shape[2]
    per_channel = sq_sum / count
    return float(per_channel.mean()), per_channel


def train_autoencoder(dataset: Dataset, split: tuple, config: TrainingConfig
                      ) -> tuple[AeRomBundle, dict]:
    """Adam minimization of the reconstruction MSE over shuffled mini-batches.

    Both initial and final snapshots are training targets. Returns the bundle
    (forward operator untrained) and per-epoch train/validation loss history.
    """
    train_idx, val_idx = split
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    used_train = _budget_indices(train_idx, config.n_sim, config.seed)
    if used_train.size == 0:
        raise ValueError("training split is empty")

    stats = fit_normalization(dataset, used_train)
    x_train = _normalized_snapshots(dataset, used_train, stats)
    x_val = _normalized_snapshots(dataset, np.asarray(val_idx), stats)

    arch = ArchSpec(nx=dataset.grid.nx, latent_dim=config.latent_dim)
    encoder = Encoder(arch, np.random.default_rng(seeds[0]))
    decoder = Decoder(arch, np.random.default_rng(seeds[1]))
    params = ParameterSet()
    params.extend(encoder.params)
    params.extend(decoder.params)
    opt = Adam(params, lr=config.lr)
    shuffle_rng = np.random.default_rng(seeds[2])

    n = x_train.shape[0]
    bs = min(config.batch_size, n)
    history = {"train": [], "val": []}
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch, config.epochs)
        order = shuffle_rng.permutation(n)
        sq_sum = 0.0
        for lo in range(0, n, bs):
            batch = x_train[order[lo : lo + bs]]
            tape = Tape()
            xhat = decoder.forward(tape, encoder.forward(tape, tape.constant(batch)))
            loss = ad.mse_loss(xhat, batch)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite AE loss at epoch {epoch}, batch {lo // bs}")
            params.zero_grad()
            tape.backward(loss)
            opt.step()
            sq_sum += float(loss.data) * batch.size
        history["train"].append(sq_sum / x_train.size)
        val_total, _ = _eval_reconstruction(encoder, decoder, x_val)
        history["val"].append(val_total)

    bundle = AeRomBundle(
        arch=arch,
        grid=dataset.grid,
        encoder=encoder,
        decoder=decoder,
        forward_op=None,
        stats=stats,
        training_meta={
            "seed": config.seed,
            "ae_epochs": config.epochs,
            "batch_size": bs,
            "lr": config.lr,
            "n_train_pairs": int(used_train.size),
            "train_indices": [int(i) for i in used_train],
            "val_indices": [int(i) for i in np.asarray(val_idx)],
            "ae_history": history,
        },
    )
    return bundle, history


def _encode_pairs(bundle: AeRomBundle, dataset: Dataset, idx) -> tuple[np.ndarray, np.ndarray]:
    z0 = np.empty((len(idx), bundle.latent_dim))
    zf = np.empty((len(idx), bundle.latent_dim))
    for j, i in enumerate(idx):
        z0[j] = encode(bundle, dataset.pairs[i].x0)
        zf[j] = encode(bundle, dataset.pairs[i].xf)
    return z0, zf


def train_forward_operator(bundle: AeRomBundle, dataset: Dataset, split: tuple,
                           config: TrainingConfig) -> dict:
    """Fit the latent map z0 -> zf with the encoder frozen (bitwise unchanged)."""
    train_idx, val_idx = split
    used_train = bundle.training_meta.get("train_indices")
    if used_train is None:
        used_train = _budget_indices(train_idx, config.n_sim, config.seed)
    seeds = np.random.SeedSequence(config.seed).spawn(8)
    fo = ForwardOperator(bundle.arch, np.random.default_rng(seeds[4]))
    shuffle_rng = np.random.default_rng(seeds[5])

    z0_train, zf_train = _encode_pairs(bundle, dataset, used_train)
    z0_val, zf_val = _encode_pairs(bundle, dataset, np.asarray(val_idx))
    xf_train = None
    if config.aux_decoded_loss:
        xf_train = np.stack(
            [bundle.stats.apply(dataset.pairs[i].xf.as_array()) for i in used_train]
        )

    opt = Adam(fo.params, lr=config.lr)
    n = z0_train.shape[0]
    bs = min(config.batch_size, n)
    history = {"train": [], "val": []}
    for epoch in range(config.fo_epochs):
        opt.lr = config.lr_at(epoch, config.fo_epochs)
        order = shuffle_rng.permutation(n)
        sq_sum = 0.0
        for lo in range(0, n, bs):
            sel = order[lo : lo + bs]
            tape = Tape()
            pred = fo.forward(tape, tape.constant(z0_train[sel]))
            loss = ad.mse_loss(pred, zf_train[sel])
            if config.aux_decoded_loss:
                decoded = bundle.decoder.forward(tape, pred)
                loss = ad.add(loss, ad.mse_loss(decoded, xf_train[sel]))
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite FO loss at epoch {epoch}, batch {lo // bs}")
            fo.params.zero_grad()
            tape.backward(loss)
            opt.step()
            sq_sum += float(loss.data) * pred.data.size
        history["train"].append(sq_sum / zf_train.size)
        tape = Tape(record_params=False)
        pred = fo.forward(tape, tape.constant(z0_val))
        history["val"].append(float(np.mean((pred.data - zf_val) ** 2)))

    bundle.forward_op = fo
    bundle.training_meta["fo_epochs"] = config.fo_epochs
    bundle.training_meta["fo_history"] = history
    return history


def validation_mse(bundle: AeRomBundle, dataset: Dataset, val_idx) -> tuple[float, np.ndarray]:
    """Reconstruction MSE (total, per channel) on normalized validation snapshots."""
    snaps = _normalized_snapshots(dataset, np.asarray(val_idx), bundle.stats)
    return _eval_reconstruction(bundle.encoder, bundle.decoder, snaps)


# ---------------------------------------------------------------------------
# studies


@dataclass
class SweepResult:
    variable: str
    rows: list

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]

    def write_csv(self, path):
        cols = [self.variable, "val_mse", "val_mse_rho", "val_mse_u", "val_mse_p",
                "train_seconds"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(str(row[c]) for c in cols) + "\n")


def _train_and_score(dataset, split, config) -> dict:
    t0 = time.perf_counter()
    bundle, _ = train_autoencoder(dataset, split, config)
    seconds = time.perf_counter() - t0
    total, per_channel = validation_mse(bundle, dataset, split[1])
    return {
        "val_mse": total,
        "val_mse_rho": float(per_channel[0]),
        "val_mse_u": float(per_channel[1]),
        "val_mse_p": float(per_channel[2]),
        "train_seconds": seconds,
    }


def latent_sweep(dataset: Dataset, latent_dims, split: tuple,
                 config: TrainingConfig) -> SweepResult:
    """Train one autoencoder per latent size with identical seeds and budgets."""
    if not len(latent_dims):
        raise ValueError("latent_dims must be nonempty")
    rows = []
    for nz in latent_dims:
        cfg = TrainingConfig(**{**config.__dict__, "latent_dim": int(nz)})
        row = {"latent_dim": int(nz), **_train_and_score(dataset, split, cfg)}
        rows.append(row)
    return SweepResult(variable="latent_dim", rows=rows)


def data_scaling_study(dataset: Dataset, budgets, split: tuple,
                       config: TrainingConfig) -> SweepResult:
    """Train at fixed latent size over nested training budgets."""
    if not len(budgets):
        raise ValueError("budgets must be nonempty")
    train_idx = np.asarray(split[0])
    if max(budgets) > train_idx.size:
        raise ValueError(
            f"largest budget {max(budgets)} exceeds the train split ({train_idx.size} pairs)"
        )
    rows = []
    for n_sim in budgets:
        cfg = TrainingConfig(**{**config.__dict__, "n_sim": int(n_sim)})
        row = {"n_sim": int(n_sim), **_train_and_score(dataset, split, cfg)}
        rows.append(row)
    return SweepResult(variable="n_sim", rows=rows)


# ---------------------------------------------------------------------------
# persistence


def save_bundle(bundle: AeRomBundle, path):
    params = bundle.all_params()
    header = {
        "kind": "bundle",
        "arch": bundle.arch.to_dict(),
        "grid": {"nx": bundle.grid.nx, "x_min": bundle.grid.x_min, "x_max": bundle.grid.x_max},
        "stats": bundle.stats.to_dict(),
        "has_forward_op": bundle.forward_op is not None,
        "params": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
        "training_meta": bundle.training_meta,
    }
    payload = np.concatenate([p.data.ravel() for p in params])
    container.write_container(path, header, payload)


def load_bundle(path) -> AeRomBundle:
    header, payload = container.read_container(path)
    if header.get("kind") != "bundle":
        raise container.ContainerError(f"{path}: not a bundle container")
    arch = ArchSpec.from_dict(header["arch"])
    g = header["grid"]
    grid = Grid(nx=g["nx"], x_min=g["x_min"], x_max=g["x_max"])
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    encoder = Encoder(arch, rng)
    decoder = Decoder(arch, rng)
    fo = ForwardOperator(arch, rng) if header["has_forward_op"] else None
    bundle = AeRomBundle(
        arch=arch, grid=grid, encoder=encoder, decoder=decoder, forward_op=fo,
        stats=NormalizationStats.from_dict(header["stats"]),
        training_meta=header.get("training_meta", {}),
    )
    params = bundle.all_params()
    expected = [p.name for p in params]
    declared = [p["name"] for p in header["params"]]
    if expected != declared:
        raise container.ContainerError(f"{path}: parameter table mismatch")
    offset = 0
    for p in params:
        size = p.data.size
        if offset + size > payload.size:
            raise container.ContainerError(f"{path}: payload too short for {p.name}")
        p.data[...] = payload[offset : offset + size].reshape(p.data.shape)
        offset += size
    if offset != payload.size:
        raise container.ContainerError(f"{path}: trailing bytes in payload")
    return bundle
