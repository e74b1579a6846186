"""Bayesian initial-state inversion: observation operator, synthetic data,
Gaussian likelihood, uniform priors, NUTS sampling through the differentiable
surrogate, and posterior summary metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nuts
from .aerom import AeRomBundle, surrogate_forward
from .autodiff import Tape
from .euler1d import Grid, PrimitiveField, SolverConfig, build_initial_condition, solve
from .sampling import ParameterVector

OBS_X_MIN = 0.1
OBS_X_MAX = 0.9


@dataclass(frozen=True)
class ObservationConfig:
    """Sensor layout and noise level; rho and p are observed at each location."""

    n_obs: int
    locations: np.ndarray
    sigma: float

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64)
        object.__setattr__(self, "locations", loc)
        if loc.shape != (self.n_obs,):
            raise ValueError("locations length must equal n_obs")
        if np.any(np.diff(loc) <= 0.0):
            raise ValueError("locations must be strictly increasing")
        if loc[0] < OBS_X_MIN - 1e-12 or loc[-1] > OBS_X_MAX + 1e-12:
            raise ValueError(f"locations must lie within [{OBS_X_MIN}, {OBS_X_MAX}]")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")

    @property
    def n_y(self) -> int:
        return 2 * self.n_obs

    @classmethod
    def uniform(cls, n_obs: int, sigma: float = 0.05) -> "ObservationConfig":
        return cls(n_obs=n_obs, locations=make_observation_locations(n_obs), sigma=sigma)


@dataclass
class ObservationSet:
    config: ObservationConfig
    y_obs: np.ndarray  # rho values then p values, length 2*n_obs
    truth_theta: ParameterVector | None
    noise_seed: int

    def __post_init__(self):
        self.y_obs = np.asarray(self.y_obs, dtype=np.float64)
        if self.y_obs.shape != (self.config.n_y,):
            raise ValueError("y_obs length must be 2*n_obs")


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors; support contains the sampling ranges."""

    lows: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 0.0]))
    highs: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 0.2, 0.2]))

    def __post_init__(self):
        lows = np.asarray(self.lows, dtype=np.float64)
        highs = np.asarray(self.highs, dtype=np.float64)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if lows.shape != (4,) or highs.shape != (4,):
            raise ValueError("prior bounds must have 4 components")
        if np.any(highs <= lows):
            raise ValueError("prior bounds must have positive width")

    @property
    def widths(self) -> np.ndarray:
        return self.highs - self.lows

    def contains(self, theta: np.ndarray) -> bool:
        return bool(np.all(theta > self.lows) and np.all(theta < self.highs))


@dataclass(frozen=True)
class NutsConfig:
    chains: int = 4
    warmup: int = 500
    draws: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.chains, self.warmup, self.draws, self.max_tree_depth) < 1:
            raise ValueError("chains, warmup, draws and max_tree_depth must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0,1)")


@dataclass
class PosteriorSamples:
    chains: np.ndarray  # (n_chains, n_draws, 4), constrained
    divergences: int
    accept_mean: np.ndarray  # per chain
    step_sizes: np.ndarray  # per chain
    rhat: np.ndarray  # per component
    ess: np.ndarray  # per component
    warnings: list

    @property
    def draws(self) -> np.ndarray:
        return self.chains.reshape(-1, 4)

    @property
    def n_samples(self) -> int:
        return self.chains.shape[0] * self.chains.shape[1]


@dataclass
class PosteriorSummary:
    x: np.ndarray
    mean_rho: np.ndarray
    std_rho: np.ndarray
    lo_rho: np.ndarray
    hi_rho: np.ndarray
    mean_p: np.ndarray
    std_p: np.ndarray
    lo_p: np.ndarray
    hi_p: np.ndarray
    rmse_rho: float
    rmse_p: float
    mean_std_rho: float
    mean_std_p: float


# ---------------------------------------------------------------------------
# observation operator


def make_observation_locations(n_obs: int) -> np.ndarray:
    """n_obs equally spaced sensors over [0.1, 0.9], endpoints included."""
    if n_obs < 2:
        raise ValueError("n_obs must be at least 2")
    return np.linspace(OBS_X_MIN, OBS_X_MAX, n_obs)


def snap_to_cells(locations: np.ndarray, grid: Grid) -> np.ndarray:
    """Nearest cell-center index per location; ties break toward the lower index."""
    frac = (np.asarray(locations) - grid.x_min) / grid.dx - 0.5
    idx = np.ceil(frac - 0.5).astype(np.intp)
    if np.any(idx < 0) or np.any(idx >= grid.nx):
        raise ValueError("observation location outside the grid")
    return idx


def observe(fld: PrimitiveField, config: ObservationConfig, grid: Grid) -> np.ndarray:
    """[rho at sensors, p at sensors]; velocity is never observed."""
    idx = snap_to_cells(config.locations, grid)
    return np.concatenate([fld.rho[idx], fld.p[idx]])


def synthesize_observations(theta_true, config: ObservationConfig, grid: Grid,
                            solver_config: SolverConfig, seed: int) -> ObservationSet:
    """High-fidelity solve of theta_true plus seeded iid Gaussian noise."""
    theta = theta_true if isinstance(theta_true, ParameterVector) \
        else ParameterVector.from_array(theta_true)
    xf = solve(theta.as_array(), grid, solver_config)
    clean = observe(xf, config, grid)
    noise = np.random.default_rng(seed).normal(0.0, config.sigma, size=clean.shape)
    return ObservationSet(config=config, y_obs=clean + noise,
                          truth_theta=theta, noise_seed=seed)


# ---------------------------------------------------------------------------
# densities and the unconstrained parameterization


def log_prior(theta, prior: PriorSpec) -> float:
    """Sum of uniform log-densities; -inf sentinel outside the support."""
    t = np.asarray(getattr(theta, "as_array", lambda: theta)(), dtype=np.float64)
    if not prior.contains(t):
        return -np.inf
    return float(-np.sum(np.log(prior.widths)))


def to_unconstrained(theta, prior: PriorSpec) -> tuple[np.ndarray, float]:
    """Componentwise scaled logit; also returns the log-Jacobian of the inverse."""
    t = np.asarray(getattr(theta, "as_array", lambda: theta)(), dtype=np.float64)
    if not prior.contains(t):
        raise ValueError(f"theta must lie strictly inside the prior support: {t}")
    unit = (t - prior.lows) / prior.widths
    eta = np.log(unit) - np.log1p(-unit)
    return eta, _log_jacobian(eta, prior)


def from_unconstrained(eta: np.ndarray, prior: PriorSpec) -> np.ndarray:
    s = _sigmoid(np.asarray(eta, dtype=np.float64))
    return prior.lows + prior.widths * s


def _sigmoid(x: np.ndarray) -> np.ndarray:
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def _log_jacobian(eta: np.ndarray, prior: PriorSpec) -> float:
    # d theta / d eta = width * sigmoid(eta) * (1 - sigmoid(eta))
    sp = np.logaddexp(0.0, eta) + np.logaddexp(0.0, -eta)
    return float(np.sum(np.log(prior.widths) - sp))


def log_likelihood(theta, obs: ObservationSet, bundle: AeRomBundle) -> float:
    """Fully normalized Gaussian log-likelihood through the surrogate."""
    t = np.asarray(getattr(theta, "as_array", lambda: theta)(), dtype=np.float64)
    if np.any(t <= 0.0):
        raise ValueError("theta components must be positive")
    tape = Tape(record_params=False)
    pred = surrogate_forward(tape, bundle, tape.constant(t))
    idx = _flat_obs_indices(obs.config, bundle.grid)
    y_model = pred.data.reshape(-1)[idx]
    sigma = obs.config.sigma
    resid = obs.y_obs - y_model
    n_y = obs.config.n_y
    return float(-0.5 / sigma**2 * np.sum(resid**2)
                 - 0.5 * n_y * np.log(2.0 * np.pi * sigma**2))


def _flat_obs_indices(config: ObservationConfig, grid: Grid) -> np.ndarray:
    idx = snap_to_cells(config.locations, grid)
    return np.concatenate([idx, 2 * grid.nx + idx])  # rho rows then p rows


def make_logp_grad(obs: ObservationSet | None, bundle: AeRomBundle | None,
                   prior: PriorSpec):
    """Unconstrained-space log-posterior and gradient, by reverse-mode autodiff.

    With obs=None the likelihood term is dropped (prior-only target, used by
    the transform-correctness checks).
    """
    log_width = float(np.sum(np.log(prior.widths)))
    flat_prior = -log_width  # uniform log-density inside the support
    if obs is not None:
        if bundle is None:
            raise ValueError("a trained bundle is required to evaluate the likelihood")
        idx = _flat_obs_indices(obs.config, bundle.grid)
        sigma = obs.config.sigma
        ll_const = -0.5 * obs.config.n_y * np.log(2.0 * np.pi * sigma**2)
        y_obs = obs.y_obs

    def logp_grad(eta: np.ndarray) -> tuple[float, np.ndarray]:
        tape = Tape(record_params=False)
        eta_var = tape.input(eta)
        # log-Jacobian of eta -> theta, numerically stable via softplus
        sp = ad.add(ad.softplus(eta_var), ad.softplus(ad.neg(eta_var)))
        logjac = ad.add(ad.vsum(ad.neg(sp)), log_width)
        total = logjac
        if obs is not None:
            theta = ad.add(ad.mul(ad.sigmoid(eta_var), prior.widths), prior.lows)
            pred = surrogate_forward(tape, bundle, theta)
            y_model = ad.gather(ad.reshape(pred, (-1,)), idx)
            resid = ad.sub(y_model, y_obs)
            ll = ad.mul(ad.vsum(ad.mul(resid, resid)), -0.5 / sigma**2)
            total = ad.add(total, ll)
        tape.backward(total)
        value = float(total.data) + flat_prior
        if obs is not None:
            value += ll_const
        return value, eta_var.grad.copy()

    return logp_grad


# ---------------------------------------------------------------------------
# sampling and summaries


def nuts_sample(obs: ObservationSet, bundle: AeRomBundle, prior: PriorSpec,
                config: NutsConfig) -> PosteriorSamples:
    """Posterior draws over theta via NUTS in the unconstrained parameterization."""
    logp_grad = make_logp_grad(obs, bundle, prior)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    chains = np.empty((config.chains, config.draws, 4))
    accept = np.empty(config.chains)
    step_sizes = np.empty(config.chains)
    divergences = 0
    for c in range(config.chains):
        rng = np.random.default_rng(seeds[c])
        theta0 = prior.lows + prior.widths * rng.random(4)
        eta0, _ = to_unconstrained(theta0, prior)
        result = nuts.run_chain(
            logp_grad, eta0, warmup=config.warmup, draws=config.draws,
            target_accept=config.target_accept,
            max_tree_depth=config.max_tree_depth, rng=rng)
        chains[c] = from_unconstrained(result.samples, prior)
        accept[c] = result.accept_mean
        step_sizes[c] = result.step_size
        divergences += result.divergences
    rhat = nuts.split_rhat(chains)
    ess = nuts.effective_sample_size(chains)
    warnings = []
    total_draws = config.chains * config.draws
    if divergences > 0.10 * total_draws:
        warnings.append(
            f"divergence rate {divergences / total_draws:.1%} exceeds 10%")
    if np.any(rhat > 1.05):
        warnings.append(f"split-Rhat above 1.05: {np.round(rhat, 4).tolist()}")
    return PosteriorSamples(chains=chains, divergences=divergences,
                            accept_mean=accept, step_sizes=step_sizes,
                            rhat=rhat, ess=ess, warnings=warnings)


def _piecewise_fields(draws: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    left = grid.cell_centers <= 0.5
    rho = np.where(left, draws[:, 0:1], draws[:, 2:3])
    p = np.where(left, draws[:, 1:2], draws[:, 3:4])
    return rho, p


def posterior_summary(samples: PosteriorSamples | np.ndarray, truth_theta,
                      grid: Grid) -> PosteriorSummary:
    """Pointwise mean/std/credible bands of the inferred initial fields plus
    RMSE against the truth and the spatially averaged posterior std."""
    draws = samples.draws if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if draws.ndim != 2 or draws.shape[1] != 4:
        raise ValueError("draws must have shape (n_samples, 4)")
    if draws.shape[0] < 2:
        raise ValueError("posterior std needs at least 2 samples")
    truth = np.asarray(getattr(truth_theta, "as_array", lambda: truth_theta)(),
                       dtype=np.float64)
    truth_field = build_initial_condition(truth, grid)
    rho, p = _piecewise_fields(draws, grid)
    mean_rho = rho.mean(axis=0)
    mean_p = p.mean(axis=0)
    std_rho = rho.std(axis=0, ddof=1)
    std_p = p.std(axis=0, ddof=1)
    lo_rho, hi_rho = np.percentile(rho, [2.5, 97.5], axis=0)
    lo_p, hi_p = np.percentile(p, [2.5, 97.5], axis=0)
    return PosteriorSummary(
        x=grid.cell_centers,
        mean_rho=mean_rho, std_rho=std_rho, lo_rho=lo_rho, hi_rho=hi_rho,
        mean_p=mean_p, std_p=std_p, lo_p=lo_p, hi_p=hi_p,
        rmse_rho=float(np.sqrt(np.mean((mean_rho - truth_field.rho) ** 2))),
        rmse_p=float(np.sqrt(np.mean((mean_p - truth_field.p) ** 2))),
        mean_std_rho=float(std_rho.mean()),
        mean_std_p=float(std_p.mean()),
    )


def observation_sweep(theta_true, n_obs_list, bundle: AeRomBundle, grid: Grid,
                      solver_config: SolverConfig, nuts_config: NutsConfig,
                      sigma: float = 0.05, seed: int = 0) -> list[dict]:
    """Synthesize observations, run NUTS and collect posterior metrics per n_obs."""
    if not len(n_obs_list):
        raise ValueError("n_obs_list must be nonempty")
    prior = PriorSpec()
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(2 * len(n_obs_list))
    for i, n_obs in enumerate(n_obs_list):
        cfg = ObservationConfig.uniform(int(n_obs), sigma)
        noise_seed = int(seeds[2 * i].generate_state(1)[0])
        obs = synthesize_observations(theta_true, cfg, grid, solver_config, noise_seed)
        chain_seed = int(seeds[2 * i + 1].generate_state(1)[0])
        samples = nuts_sample(obs, bundle, prior,
                              NutsConfig(**{**nuts_config.__dict__, "seed": chain_seed}))
        summary = posterior_summary(samples, theta_true, grid)
        rows.append({
            "n_obs": int(n_obs),
            "rmse_rho": summary.rmse_rho,
            "rmse_p": summary.rmse_p,
            "mean_std_rho": summary.mean_std_rho,
            "mean_std_p": summary.mean_std_p,
            "max_rhat": float(samples.rhat.max()),
            "divergences": samples.divergences,
            "warnings": list(samples.warnings),
        })
    return rows
