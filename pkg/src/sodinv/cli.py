"""Command-line interface: gen-data, train, sweep, infer, report."""
from __future__ import annotations

import click

from . import pipeline
from .config import ConfigError, load_config


def _resolve_config(ctx_obj, extra=None):
    overrides = dict(ctx_obj["overrides"])
    if extra:
        for key, value in extra.items():
            node = overrides
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
    try:
        return load_config(path=ctx_obj["config_path"], profile=ctx_obj["profile"],
                           overrides=overrides)
    except (ConfigError, OSError) as err:
        raise click.ClickException(str(err)) from err


def _run(stage, *args, **kwargs):
    try:
        stage(*args, **kwargs)
    except pipeline.PipelineError as err:
        raise click.ClickException(str(err)) from err


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file; values override the profile.")
@click.option("--profile", type=click.Choice(["desk", "paper"]), default="desk",
              show_default=True, help="Built-in configuration profile.")
@click.option("--seed", type=int, default=None, help="Root seed for every stage.")
@click.option("--threads", type=int, default=None, help="Worker count for solver fan-out.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory for artifacts and manifests.")
@click.pass_context
def main(ctx, config_path, profile, seed, threads, out_dir):
    """Shock-tube surrogate pipeline: data generation, training, sweeps,
    Bayesian inversion and reporting."""
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if threads is not None:
        overrides["threads"] = threads
    if out_dir is not None:
        overrides["out_dir"] = out_dir
    ctx.obj = {"config_path": config_path, "profile": profile, "overrides": overrides}


@main.command("gen-data")
@click.option("--n-sim", type=int, default=None, help="Number of LHS simulations.")
@click.pass_context
def gen_data(ctx, n_sim):
    """Sample initial states and run the high-fidelity solver for each."""
    extra = {"sampling.n_sim": n_sim} if n_sim is not None else None
    cfg = _resolve_config(ctx.obj, extra)
    _run(pipeline.cmd_gen_data, cfg, progress=click.echo)


@main.command()
@click.option("--dataset", type=click.Path(dir_okay=False), default=None,
              help="Dataset container path (default: <out>/dataset.sstb).")
@click.option("--latent-dim", type=int, default=None, help="Latent dimension N_z.")
@click.pass_context
def train(ctx, dataset, latent_dim):
    """Train the autoencoder, then the latent forward operator."""
    extra = {"train.latent_dim": latent_dim} if latent_dim is not None else None
    cfg = _resolve_config(ctx.obj, extra)
    _run(pipeline.cmd_train, cfg, dataset_path=dataset, progress=click.echo)


@main.command()
@click.option("--kind", type=click.Choice(["latent", "data"]), required=True)
@click.option("--dataset", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def sweep(ctx, kind, dataset):
    """Latent-dimension or data-budget study; emits a CSV table."""
    cfg = _resolve_config(ctx.obj)
    _run(pipeline.cmd_sweep, cfg, kind, dataset_path=dataset, progress=click.echo)


@main.command()
@click.option("--n-obs", type=int, default=None, help="Observation count.")
@click.option("--bundle", type=click.Path(dir_okay=False), default=None,
              help="Bundle checkpoint path (default: <out>/bundle.sstb).")
@click.pass_context
def infer(ctx, n_obs, bundle):
    """Synthesize noisy observations and sample the posterior with NUTS."""
    cfg = _resolve_config(ctx.obj)
    _run(pipeline.cmd_infer, cfg, n_obs=n_obs, bundle_path=bundle, progress=click.echo)


@main.command()
@click.pass_context
def report(ctx):
    """Aggregate inversion metrics across observation densities."""
    cfg = _resolve_config(ctx.obj)
    _run(pipeline.cmd_report, cfg, progress=click.echo)


if __name__ == "__main__":
    main()
