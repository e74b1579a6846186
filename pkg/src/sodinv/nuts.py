"""No-U-Turn sampler with multinomial trajectory sampling, dual-averaging step
size adaptation and windowed diagonal mass-matrix adaptation, plus split-Rhat
and effective-sample-size diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ENERGY_DROP = 1000.0  # divergence threshold on the Hamiltonian error


@dataclass
class ChainResult:
    samples: np.ndarray  # (draws, d)
    divergences: int
    accept_mean: float
    step_size: float
    inv_mass: np.ndarray
    tree_depths: np.ndarray


def _leapfrog(logp_grad, q, p, g, eps, inv_mass):
    p = p + 0.5 * eps * g
    q = q + eps * inv_mass * p
    lp, g = logp_grad(q)
    p = p + 0.5 * eps * g
    return q, p, g, lp


def find_reasonable_epsilon(logp_grad, q, inv_mass, rng) -> float:
    """Heuristic initial step size: double/halve until the one-step acceptance
    probability crosses 1/2."""
    d = q.size
    eps = 1.0
    lp, g = logp_grad(q)
    p = rng.standard_normal(d) / np.sqrt(inv_mass)
    h0 = lp - 0.5 * np.sum(p * p * inv_mass)
    q1, p1, _, lp1 = _leapfrog(logp_grad, q, p, g, eps, inv_mass)
    h1 = lp1 - 0.5 * np.sum(p1 * p1 * inv_mass)
    if not np.isfinite(h1):
        h1 = -np.inf
    direction = 1.0 if h1 - h0 > np.log(0.5) else -1.0
    for _ in range(100):
        eps *= 2.0**direction
        q1, p1, _, lp1 = _leapfrog(logp_grad, q, p, g, eps, inv_mass)
        h1 = lp1 - 0.5 * np.sum(p1 * p1 * inv_mass)
        if not np.isfinite(h1):
            h1 = -np.inf
        if direction * (h1 - h0) <= direction * np.log(0.5):
            break
    return eps


class _Tree:
    __slots__ = ("q_minus", "p_minus", "g_minus", "q_plus", "p_plus", "g_plus",
                 "proposal", "log_weight", "sum_accept", "n_leapfrog",
                 "turning", "diverged")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def _is_turning(q_minus, q_plus, p_minus, p_plus, inv_mass) -> bool:
    dq = q_plus - q_minus
    return (np.dot(dq, inv_mass * p_minus) < 0.0) or (np.dot(dq, inv_mass * p_plus) < 0.0)


def _build_tree(logp_grad, q, p, g, depth, direction, eps, inv_mass, h0, rng):
    if depth == 0:
        q1, p1, g1, lp1 = _leapfrog(logp_grad, q, p, g, direction * eps, inv_mass)
        h1 = lp1 - 0.5 * np.sum(p1 * p1 * inv_mass)
        delta = h1 - h0 if np.isfinite(h1) else -np.inf
        return _Tree(
            q_minus=q1, p_minus=p1, g_minus=g1,
            q_plus=q1, p_plus=p1, g_plus=g1,
            proposal=(q1, lp1), log_weight=delta,
            sum_accept=min(1.0, np.exp(min(delta, 0.0))), n_leapfrog=1,
            turning=False, diverged=delta < -MAX_ENERGY_DROP,
        )

    first = _build_tree(logp_grad, q, p, g, depth - 1, direction, eps, inv_mass, h0, rng)
    if first.turning or first.diverged:
        return first
    if direction > 0:
        second = _build_tree(logp_grad, first.q_plus, first.p_plus, first.g_plus,
                             depth - 1, direction, eps, inv_mass, h0, rng)
        first.q_plus, first.p_plus, first.g_plus = second.q_plus, second.p_plus, second.g_plus
    else:
        second = _build_tree(logp_grad, first.q_minus, first.p_minus, first.g_minus,
                             depth - 1, direction, eps, inv_mass, h0, rng)
        first.q_minus, first.p_minus, first.g_minus = (
            second.q_minus, second.p_minus, second.g_minus)

    total = np.logaddexp(first.log_weight, second.log_weight)
    if np.log(rng.random()) < second.log_weight - total:
        first.proposal = second.proposal
    first.log_weight = total
    first.sum_accept += second.sum_accept
    first.n_leapfrog += second.n_leapfrog
    first.diverged = second.diverged
    first.turning = second.turning or _is_turning(
        first.q_minus, first.q_plus, first.p_minus, first.p_plus, inv_mass)
    return first


def _transition(logp_grad, q, lp, g, eps, inv_mass, max_depth, rng):
    """One NUTS draw; returns (q', lp', g', accept_stat, depth, diverged)."""
    d = q.size
    p = rng.standard_normal(d) / np.sqrt(inv_mass)
    h0 = lp - 0.5 * np.sum(p * p * inv_mass)
    q_minus = q_plus = q
    p_minus = p_plus = p
    g_minus = g_plus = g
    proposal = (q, lp)
    log_weight = 0.0
    sum_accept = 0.0
    n_leapfrog = 0
    diverged = False
    depth = 0
    while depth < max_depth:
        direction = 1.0 if rng.random() < 0.5 else -1.0
        if direction > 0:
            tree = _build_tree(logp_grad, q_plus, p_plus, g_plus, depth,
                               direction, eps, inv_mass, h0, rng)
        else:
            tree = _build_tree(logp_grad, q_minus, p_minus, g_minus, depth,
                               direction, eps, inv_mass, h0, rng)
        sum_accept += tree.sum_accept
        n_leapfrog += tree.n_leapfrog
        if tree.diverged:
            diverged = True
            break
        if tree.turning:
            break
        # biased progressive sampling toward the new subtree
        if np.log(rng.random()) < tree.log_weight - log_weight:
            proposal = tree.proposal
        log_weight = np.logaddexp(log_weight, tree.log_weight)
        if direction > 0:
            q_plus, p_plus, g_plus = tree.q_plus, tree.p_plus, tree.g_plus
        else:
            q_minus, p_minus, g_minus = tree.q_minus, tree.p_minus, tree.g_minus
        depth += 1
        if _is_turning(q_minus, q_plus, p_minus, p_plus, inv_mass):
            break
    q_new, lp_new = proposal
    if not np.array_equal(q_new, q):
        _, g_new = logp_grad(q_new)
    else:
        g_new = g
    accept_stat = sum_accept / max(n_leapfrog, 1)
    return q_new, lp_new, g_new, accept_stat, depth, diverged


class _DualAveraging:
    """Nesterov dual averaging of log step size (Hoffman & Gelman)."""

    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.m = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.log_eps = np.log(eps0)

    def update(self, accept_stat):
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m**-self.kappa
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    def adapted(self):
        return np.exp(self.log_eps_bar)


def _adaptation_windows(warmup: int):
    """Stan-style schedule: fast start, doubling slow windows, fast tail.
    Returns the iteration indices at which the metric is re-estimated."""
    if warmup < 20:
        return []
    init_buffer, term_buffer, base = 75, 50, 25
    if init_buffer + term_buffer + base > warmup:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.10 * warmup))
        base = warmup - init_buffer - term_buffer
        if base < 5:
            return []
    ends = []
    start = init_buffer
    size = base
    while True:
        end = start + size
        if end + term_buffer + 2 * size > warmup:
            end = warmup - term_buffer
            ends.append(end)
            break
        ends.append(end)
        start = end
        size *= 2
    return ends


def run_chain(logp_grad, q0: np.ndarray, *, warmup: int, draws: int,
              target_accept: float, max_tree_depth: int,
              rng: np.random.Generator, adapt_mass: bool = True) -> ChainResult:
    """Run one NUTS chain; warmup adapts step size and diagonal metric."""
    q = np.asarray(q0, dtype=np.float64).copy()
    d = q.size
    lp, g = logp_grad(q)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        raise ValueError("non-finite log-density or gradient at the initial point")

    inv_mass = np.ones(d)
    eps = find_reasonable_epsilon(logp_grad, q, inv_mass, rng)
    averager = _DualAveraging(eps, target_accept)
    window_ends = _adaptation_windows(warmup) if adapt_mass else []
    window_samples = []

    for m in range(warmup):
        q, lp, g, accept_stat, _, _ = _transition(
            logp_grad, q, lp, g, eps, inv_mass, max_tree_depth, rng)
        eps = averager.update(accept_stat)
        window_samples.append(q.copy())
        if window_ends and m + 1 == window_ends[0]:
            window_ends.pop(0)
            block = np.asarray(window_samples)
            n = block.shape[0]
            var = block.var(axis=0, ddof=1) if n > 1 else np.ones(d)
            inv_mass = var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0)
            window_samples = []
            eps = find_reasonable_epsilon(logp_grad, q, inv_mass, rng)
            averager = _DualAveraging(eps, target_accept)
    if warmup > 0:
        eps = averager.adapted()

    samples = np.empty((draws, d))
    depths = np.empty(draws, dtype=np.int64)
    divergences = 0
    accept_sum = 0.0
    for i in range(draws):
        q, lp, g, accept_stat, depth, diverged = _transition(
            logp_grad, q, lp, g, eps, inv_mass, max_tree_depth, rng)
        samples[i] = q
        depths[i] = depth
        divergences += int(diverged)
        accept_sum += accept_stat
    return ChainResult(
        samples=samples, divergences=divergences,
        accept_mean=accept_sum / max(draws, 1), step_size=float(eps),
        inv_mass=inv_mass, tree_depths=depths,
    )


# ---------------------------------------------------------------------------
# diagnostics


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-Rhat per component for draws shaped (n_chains, n_draws, d)."""
    n_chains, n_draws, d = chains.shape
    if n_draws < 4:
        raise ValueError("need at least 4 draws per chain for split-Rhat")
    half = n_draws // 2
    seqs = np.concatenate(
        [chains[:, :half, :], chains[:, n_draws - half :, :]], axis=0)
    m, n = seqs.shape[0], half
    means = seqs.mean(axis=1)  # (m, d)
    grand = means.mean(axis=0)
    b = n / (m - 1) * np.sum((means - grand) ** 2, axis=0)
    w = seqs.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * w + b / n
    return np.sqrt(var_plus / w)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Geyer initial-monotone-sequence ESS per component, Stan-style combining."""
    n_chains, n_draws, d = chains.shape
    out = np.empty(d)
    for k in range(d):
        x = chains[:, :, k]
        chain_means = x.mean(axis=1)
        chain_vars = x.var(axis=1, ddof=1)
        w = chain_vars.mean()
        var_plus = w * (n_draws - 1) / n_draws
        if n_chains > 1:
            var_plus += chain_means.var(ddof=1)
        # per-chain autocovariance via FFT
        acov = np.empty((n_chains, n_draws))
        for c in range(n_chains):
            y = x[c] - chain_means[c]
            size = 2 * n_draws
            f = np.fft.rfft(y, size)
            ac = np.fft.irfft(f * np.conj(f), size)[:n_draws].real
            acov[c] = ac / n_draws
        rho = np.empty(n_draws)
        rho[0] = 1.0
        for t in range(1, n_draws):
            rho[t] = 1.0 - (w - acov[:, t].mean()) / var_plus
        # sum consecutive pairs while positive, enforce monotone decrease
        tau = 1.0 + 2.0 * rho[1] if n_draws > 1 else 1.0
        prev_pair = 1.0 + rho[1] if n_draws > 1 else 1.0
        t = 2
        total_pairs = prev_pair
        while t + 1 < n_draws:
            pair = rho[t] + rho[t + 1]
            if pair < 0.0:
                break
            pair = min(pair, prev_pair)
            total_pairs += pair
            prev_pair = pair
            t += 2
        tau = max(2.0 * total_pairs - 1.0, 1.0 / np.log10(n_draws + 1.0))
        out[k] = n_chains * n_draws / tau
    return out
