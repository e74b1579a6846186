"""Stage orchestration for the CLI: each command resolves its inputs, runs the
underlying modules, writes artifacts plus a run manifest into the output
directory, and returns the manifest."""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__, aerom, bayes
from .config import stage_seed
from .euler1d import Grid, GasModel, SolverConfig
from .sampling import (Dataset, ParameterRanges, generate_dataset, lhs_sample,
                       load_dataset, save_dataset, split_dataset)


class PipelineError(RuntimeError):
    """A stage failed in a way the CLI should surface as a nonzero exit."""


def grid_from_config(cfg: dict) -> Grid:
    g = cfg["grid"]
    return Grid(nx=g["nx"], x_min=g["x_min"], x_max=g["x_max"])


def solver_from_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(gas=GasModel(s["gamma"]), cfl=s["cfl"], t_final=s["t_final"],
                        weno_eps=s["weno_eps"], boundary=s["boundary"])


def training_from_config(cfg: dict, **overrides) -> aerom.TrainingConfig:
    t = cfg["train"]
    kw = {
        "epochs": t["ae_epochs"],
        "batch_size": t["batch_size"],
        "lr": t["lr"],
        "seed": stage_seed(cfg, "train"),
        "latent_dim": t["latent_dim"],
        "fo_epochs": t["fo_epochs"],
        "aux_decoded_loss": t["aux_decoded_loss"],
    }
    kw.update(overrides)
    return aerom.TrainingConfig(**kw)


def nuts_from_config(cfg: dict, seed: int) -> bayes.NutsConfig:
    n = cfg["nuts"]
    return bayes.NutsConfig(chains=n["chains"], warmup=n["warmup"], draws=n["draws"],
                            target_accept=n["target_accept"],
                            max_tree_depth=n["max_tree_depth"], seed=seed)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _combine_seed(base: int, salt: int) -> int:
    return int(np.random.SeedSequence([base, salt]).generate_state(1)[0])


def write_manifest(out_dir: Path, command: str, cfg: dict, inputs: dict,
                   outputs: list, seconds: float) -> dict:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": cfg,
        "stage_seeds": {s: stage_seed(cfg, s)
                        for s in ("sampling", "split", "train", "observation", "nuts", "sweep")},
        "inputs": {str(p): _sha256(p) for p in inputs.values()},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_seconds": seconds,
    }
    path = out_dir / f"{command.replace('-', '_')}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_history_csv(path: Path, history: dict):
    with open(path, "w") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for i, (tr, va) in enumerate(zip(history["train"], history["val"])):
            fh.write(f"{i},{tr},{va}\n")


def cmd_gen_data(cfg: dict, progress=print) -> dict:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    grid = grid_from_config(cfg)
    solver = solver_from_config(cfg)
    ranges = ParameterRanges.from_dict(cfg["sampling"]["ranges"])
    seed = stage_seed(cfg, "sampling")
    thetas = lhs_sample(cfg["sampling"]["n_sim"], ranges, seed)
    progress(f"sampled {len(thetas)} parameter vectors (LHS, seed {seed})")
    dataset = generate_dataset(thetas, grid, solver, seed=seed,
                               workers=cfg["threads"])
    progress(f"solved {len(dataset)} shock-tube runs at nx={grid.nx}")
    path = out_dir / "dataset.sstb"
    save_dataset(dataset, path)
    return write_manifest(out_dir, "gen-data", cfg, {}, [path],
                          time.perf_counter() - t0)


def _load_dataset_checked(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise PipelineError(f"dataset not found: {path} (run gen-data first)")
    return load_dataset(path)


def cmd_train(cfg: dict, dataset_path=None, progress=print) -> dict:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = Path(dataset_path or out_dir / "dataset.sstb")
    dataset = _load_dataset_checked(dataset_path)
    t0 = time.perf_counter()
    split = split_dataset(dataset, 1.0 - cfg["sampling"]["val_fraction"],
                          stage_seed(cfg, "split"))
    tcfg = training_from_config(cfg)
    progress(f"training autoencoder: N_z={tcfg.latent_dim}, {tcfg.epochs} epochs "
             f"on {len(split[0])} pairs")
    bundle, ae_history = aerom.train_autoencoder(dataset, split, tcfg)
    progress(f"autoencoder validation MSE {ae_history['val'][-1]:.3e}")
    fo_history = aerom.train_forward_operator(bundle, dataset, split, tcfg)
    progress(f"forward operator latent MSE {fo_history['val'][-1]:.3e}")
    bundle_path = out_dir / "bundle.sstb"
    aerom.save_bundle(bundle, bundle_path)
    _write_history_csv(out_dir / "ae_loss.csv", ae_history)
    _write_history_csv(out_dir / "fo_loss.csv", fo_history)
    return write_manifest(out_dir, "train", cfg, {"dataset": dataset_path},
                          [bundle_path, out_dir / "ae_loss.csv", out_dir / "fo_loss.csv"],
                          time.perf_counter() - t0)


def cmd_sweep(cfg: dict, kind: str, dataset_path=None, progress=print) -> dict:
    if kind not in ("latent", "data"):
        raise PipelineError(f"unknown sweep kind {kind!r}; use 'latent' or 'data'")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = Path(dataset_path or out_dir / "dataset.sstb")
    dataset = _load_dataset_checked(dataset_path)
    t0 = time.perf_counter()
    split = split_dataset(dataset, 1.0 - cfg["sampling"]["val_fraction"],
                          stage_seed(cfg, "split"))
    tcfg = training_from_config(cfg, seed=stage_seed(cfg, "sweep"))
    if kind == "latent":
        result = aerom.latent_sweep(dataset, cfg["sweep"]["latent_dims"], split, tcfg)
        path = out_dir / "latent_sweep.csv"
    else:
        budgets = [b for b in cfg["sweep"]["data_budgets"]]
        if max(budgets) > len(split[0]):
            raise PipelineError(
                f"data sweep needs budgets up to {max(budgets)} training pairs but the "
                f"train split holds {len(split[0])}; regenerate with a larger --n-sim")
        result = aerom.data_scaling_study(dataset, budgets, split, tcfg)
        path = out_dir / "data_sweep.csv"
    result.write_csv(path)
    for row in result.rows:
        progress(f"{result.variable}={row[result.variable]}: val MSE {row['val_mse']:.3e}")
    return write_manifest(out_dir, f"sweep-{kind}", cfg, {"dataset": dataset_path},
                          [path], time.perf_counter() - t0)


def _write_posterior_csv(path: Path, samples: bayes.PosteriorSamples):
    with open(path, "w") as fh:
        fh.write("chain,step,rho_L,p_L,rho_R,p_R\n")
        for c in range(samples.chains.shape[0]):
            for s in range(samples.chains.shape[1]):
                row = samples.chains[c, s]
                fh.write(f"{c},{s},{row[0]},{row[1]},{row[2]},{row[3]}\n")


def _write_summary_csv(path: Path, x, mean, std, lo, hi):
    with open(path, "w") as fh:
        fh.write("x,mean,std,lo95,hi95\n")
        for vals in zip(x, mean, std, lo, hi):
            fh.write(",".join(str(v) for v in vals) + "\n")


def _write_observations_csv(path: Path, obs: bayes.ObservationSet, grid: Grid):
    idx = bayes.snap_to_cells(obs.config.locations, grid)
    x = grid.cell_centers[idx]
    n = obs.config.n_obs
    with open(path, "w") as fh:
        fh.write("x,channel,value\n")
        for j in range(n):
            fh.write(f"{x[j]},rho,{obs.y_obs[j]}\n")
        for j in range(n):
            fh.write(f"{x[j]},p,{obs.y_obs[n + j]}\n")


def cmd_infer(cfg: dict, n_obs: int | None = None, bundle_path=None,
              progress=print) -> dict:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle_path = Path(bundle_path or out_dir / "bundle.sstb")
    if not bundle_path.exists():
        raise PipelineError(f"bundle not found: {bundle_path} (run train first)")
    bundle = aerom.load_bundle(bundle_path)
    if bundle.forward_op is None:
        raise PipelineError(f"{bundle_path} has no trained forward operator")
    t0 = time.perf_counter()
    n_obs = int(n_obs if n_obs is not None else cfg["observation"]["n_obs"])
    grid = grid_from_config(cfg)
    if grid.nx != bundle.arch.nx:
        raise PipelineError(
            f"config grid nx={grid.nx} does not match bundle nx={bundle.arch.nx}")
    solver = solver_from_config(cfg)
    sigma = cfg["observation"]["sigma"]
    theta_true = np.asarray(cfg["observation"]["theta_true"], dtype=np.float64)

    obs_cfg = bayes.ObservationConfig.uniform(n_obs, sigma)
    noise_seed = _combine_seed(stage_seed(cfg, "observation"), n_obs)
    obs = bayes.synthesize_observations(theta_true, obs_cfg, grid, solver, noise_seed)
    progress(f"synthesized {obs_cfg.n_y} noisy observations (sigma={sigma})")

    prior = bayes.PriorSpec()
    ncfg = nuts_from_config(cfg, _combine_seed(stage_seed(cfg, "nuts"), n_obs))
    samples = bayes.nuts_sample(obs, bundle, prior, ncfg)
    progress(f"NUTS: {samples.n_samples} draws, {samples.divergences} divergences, "
             f"max Rhat {samples.rhat.max():.4f}")
    summary = bayes.posterior_summary(samples, theta_true, grid)

    tag = f"nobs{n_obs}"
    outputs = []
    post_path = out_dir / f"posterior_{tag}.csv"
    _write_posterior_csv(post_path, samples)
    outputs.append(post_path)
    obs_path = out_dir / f"observations_{tag}.csv"
    _write_observations_csv(obs_path, obs, grid)
    outputs.append(obs_path)
    for var in ("rho", "p"):
        path = out_dir / f"summary_{var}_{tag}.csv"
        if var == "rho":
            _write_summary_csv(path, summary.x, summary.mean_rho, summary.std_rho,
                               summary.lo_rho, summary.hi_rho)
        else:
            _write_summary_csv(path, summary.x, summary.mean_p, summary.std_p,
                               summary.lo_p, summary.hi_p)
        outputs.append(path)
    diagnostics = {
        "n_obs": n_obs,
        "sigma": sigma,
        "theta_true": theta_true.tolist(),
        "noise_seed": noise_seed,
        "nuts_seed": ncfg.seed,
        "rhat": samples.rhat.tolist(),
        "ess": samples.ess.tolist(),
        "divergences": samples.divergences,
        "accept_mean": samples.accept_mean.tolist(),
        "step_sizes": samples.step_sizes.tolist(),
        "warnings": samples.warnings,
        "metrics": {
            "rmse_rho": summary.rmse_rho,
            "rmse_p": summary.rmse_p,
            "mean_std_rho": summary.mean_std_rho,
            "mean_std_p": summary.mean_std_p,
        },
    }
    diag_path = out_dir / f"diagnostics_{tag}.json"
    diag_path.write_text(json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    outputs.append(diag_path)
    manifest = write_manifest(out_dir, f"infer-{tag}", cfg, {"bundle": bundle_path},
                              outputs, time.perf_counter() - t0)
    divergence_rate = samples.divergences / samples.n_samples
    if divergence_rate > 0.10:
        raise PipelineError(
            f"divergence rate {divergence_rate:.1%} exceeds 10%; "
            f"diagnostics written to {diag_path}")
    return manifest


def cmd_report(cfg: dict, progress=print) -> dict:
    out_dir = Path(cfg["out_dir"])
    diag_paths = sorted(out_dir.glob("diagnostics_nobs*.json"),
                        key=lambda p: int(p.stem.split("nobs")[1]))
    if not diag_paths:
        raise PipelineError(
            f"no completed inversion runs in {out_dir}; expected files matching "
            f"'diagnostics_nobs<N>.json' produced by `sodinv infer`")
    t0 = time.perf_counter()
    table = []
    for path in diag_paths:
        d = json.loads(path.read_text())
        table.append({"n_obs": d["n_obs"], **d["metrics"],
                      "divergences": d["divergences"], "rhat_max": max(d["rhat"])})
    first, last = table[0], table[-1]

    def reduction(key):
        return 100.0 * (first[key] - last[key]) / first[key]

    report = {
        "runs": table,
        "n_obs_range": [first["n_obs"], last["n_obs"]],
        "reduction_percent": {
            "mean_std_rho": reduction("mean_std_rho"),
            "mean_std_p": reduction("mean_std_p"),
            "rmse_rho": reduction("rmse_rho"),
            "rmse_p": reduction("rmse_p"),
        },
    }
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    progress(f"aggregated {len(table)} runs; posterior std reductions: "
             f"rho {report['reduction_percent']['mean_std_rho']:.1f}%, "
             f"p {report['reduction_percent']['mean_std_p']:.1f}%")
    return write_manifest(out_dir, "report", cfg, {}, [path], time.perf_counter() - t0)
