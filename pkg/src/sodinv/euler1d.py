"""High-fidelity 1D Euler solver: WENO5 reconstruction, HLLC fluxes, SSP-RK3
time stepping, plus an exact Riemann solver used as a verification oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

NGHOST = 3  # WENO5 needs 3 ghost cells per side
_MAX_STEPS = 200_000


class InvalidStateError(RuntimeError):
    """Nonpositive density/pressure encountered (solver blow-up or bad input)."""


class VacuumError(ValueError):
    """Riemann problem generates vacuum; no star-state pressure exists."""


@dataclass(frozen=True)
class GasModel:
    """Ideal gas with constant specific-heat ratio."""

    gamma: float = 1.4

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    def sound_speed(self, rho, p):
        return np.sqrt(self.gamma * p / rho)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered 1D grid."""

    nx: int
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.nx < 11:
            raise ValueError(f"nx must be >= 11 for the WENO5 stencil, got {self.nx}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def cell_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx


@dataclass
class PrimitiveField:
    """Density, velocity, pressure over a grid (nondimensional)."""

    rho: np.ndarray
    u: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if not (self.rho.shape == self.u.shape == self.p.shape):
            raise ValueError("rho, u, p must share one length")

    @property
    def nx(self) -> int:
        return self.rho.shape[0]

    def as_array(self) -> np.ndarray:
        """Stack to shape (3, nx) in channel order (rho, u, p)."""
        return np.stack([self.rho, self.u, self.p])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PrimitiveField":
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy())

    def validate(self):
        _check_positive(self.rho, "rho")
        _check_positive(self.p, "p")


@dataclass
class ConservedField:
    """Mass, momentum and total energy per unit volume."""

    rho: np.ndarray
    mom: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.mom = np.asarray(self.mom, dtype=np.float64)
        self.E = np.asarray(self.E, dtype=np.float64)
        if not (self.rho.shape == self.mom.shape == self.E.shape):
            raise ValueError("rho, mom, E must share one length")

    def as_array(self) -> np.ndarray:
        return np.stack([self.rho, self.mom, self.E])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ConservedField":
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy())


@dataclass(frozen=True)
class SolverConfig:
    """Numerical settings for the finite-volume march."""

    gas: GasModel = field(default_factory=GasModel)
    cfl: float = 0.5
    t_final: float = 0.2
    weno_eps: float = 1e-6
    boundary: str = "transmissive"

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must be in (0,1], got {self.cfl}")
        if not self.t_final > 0.0:
            raise ValueError("t_final must be positive")
        if not self.weno_eps > 0.0:
            raise ValueError("weno_eps must be positive")
        if self.boundary != "transmissive":
            raise ValueError(f"unsupported boundary kind: {self.boundary!r}")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gas.gamma,
            "cfl": self.cfl,
            "t_final": self.t_final,
            "weno_eps": self.weno_eps,
            "boundary": self.boundary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(
            gas=GasModel(d["gamma"]),
            cfl=d["cfl"],
            t_final=d["t_final"],
            weno_eps=d["weno_eps"],
            boundary=d["boundary"],
        )


@dataclass(frozen=True)
class RiemannStates:
    """Two constant primitive states (rho, u, p) separated by a diaphragm."""

    left: tuple
    right: tuple

    def __post_init__(self):
        for name, (rho, _, p) in (("left", self.left), ("right", self.right)):
            if rho <= 0.0 or p <= 0.0:
                raise InvalidStateError(f"{name} state needs positive rho and p")


def _check_positive(arr: np.ndarray, name: str):
    bad = np.flatnonzero(~(arr > 0.0))
    if bad.size:
        raise InvalidStateError(f"nonpositive {name} at cell {bad[0]}: {arr[bad[0]]}")


# ---------------------------------------------------------------------------
# primitive <-> conserved


def primitive_to_conserved(field: PrimitiveField, gas: GasModel) -> ConservedField:
    """E = p/(gamma-1) + rho*u^2/2, mom = rho*u."""
    field.validate()
    mom = field.rho * field.u
    E = field.p / (gas.gamma - 1.0) + 0.5 * field.rho * field.u**2
    return ConservedField(field.rho.copy(), mom, E)


def conserved_to_primitive(field: ConservedField, gas: GasModel) -> PrimitiveField:
    """Exact inverse of :func:`primitive_to_conserved`."""
    _check_positive(field.rho, "rho")
    u = field.mom / field.rho
    p = (gas.gamma - 1.0) * (field.E - 0.5 * field.mom * u)
    _check_positive(p, "derived pressure")
    return PrimitiveField(field.rho.copy(), u, p)


def euler_flux(state, gas: GasModel) -> np.ndarray:
    """Flux triple [rho*u, rho*u^2+p, u*(E+p)] for one primitive state."""
    rho, u, p = state
    if rho <= 0.0 or p <= 0.0:
        raise InvalidStateError("euler_flux needs positive rho and p")
    E = p / (gas.gamma - 1.0) + 0.5 * rho * u * u
    return np.array([rho * u, rho * u * u + p, u * (E + p)])


# ---------------------------------------------------------------------------
# WENO5 / HLLC kernels


@nb.njit(cache=True)
def _weno5_scalar(v0, v1, v2, v3, v4, eps):
    # Jiang-Shu weights; reconstructs the right-interface value of the center
    # cell (v2) from a 5-cell stencil.
    b0 = (13.0 / 12.0) * (v0 - 2.0 * v1 + v2) ** 2 + 0.25 * (v0 - 4.0 * v1 + 3.0 * v2) ** 2
    b1 = (13.0 / 12.0) * (v1 - 2.0 * v2 + v3) ** 2 + 0.25 * (v1 - v3) ** 2
    b2 = (13.0 / 12.0) * (v2 - 2.0 * v3 + v4) ** 2 + 0.25 * (3.0 * v2 - 4.0 * v3 + v4) ** 2
    a0 = 0.1 / (eps + b0) ** 2
    a1 = 0.6 / (eps + b1) ** 2
    a2 = 0.3 / (eps + b2) ** 2
    s = a0 + a1 + a2
    p0 = (2.0 * v0 - 7.0 * v1 + 11.0 * v2) / 6.0
    p1 = (-v1 + 5.0 * v2 + 2.0 * v3) / 6.0
    p2 = (2.0 * v2 + 5.0 * v3 - v4) / 6.0
    return (a0 * p0 + a1 * p1 + a2 * p2) / s


@nb.njit(cache=True)
def _hllc_scalar(rl, ul, pl, rr, ur, pr, gamma):
    al = np.sqrt(gamma * pl / rl)
    ar = np.sqrt(gamma * pr / rr)
    El = pl / (gamma - 1.0) + 0.5 * rl * ul * ul
    Er = pr / (gamma - 1.0) + 0.5 * rr * ur * ur

    # Einfeldt bounds from Roe averages
    sql = np.sqrt(rl)
    sqr = np.sqrt(rr)
    u_roe = (sql * ul + sqr * ur) / (sql + sqr)
    h_roe = (sql * (El + pl) / rl + sqr * (Er + pr) / rr) / (sql + sqr)
    a_roe2 = (gamma - 1.0) * (h_roe - 0.5 * u_roe * u_roe)
    a_roe = np.sqrt(a_roe2) if a_roe2 > 0.0 else 0.0
    s_l = min(ul - al, u_roe - a_roe)
    s_r = max(ur + ar, u_roe + a_roe)

    if s_l >= 0.0:
        return rl * ul, rl * ul * ul + pl, ul * (El + pl)
    if s_r <= 0.0:
        return rr * ur, rr * ur * ur + pr, ur * (Er + pr)

    s_star = (pr - pl + rl * ul * (s_l - ul) - rr * ur * (s_r - ur)) / (
        rl * (s_l - ul) - rr * (s_r - ur)
    )
    if s_star >= 0.0:
        f0 = rl * ul
        f1 = rl * ul * ul + pl
        f2 = ul * (El + pl)
        fac = rl * (s_l - ul) / (s_l - s_star)
        u0 = fac
        u1 = fac * s_star
        u2 = fac * (El / rl + (s_star - ul) * (s_star + pl / (rl * (s_l - ul))))
        return (
            f0 + s_l * (u0 - rl),
            f1 + s_l * (u1 - rl * ul),
            f2 + s_l * (u2 - El),
        )
    f0 = rr * ur
    f1 = rr * ur * ur + pr
    f2 = ur * (Er + pr)
    fac = rr * (s_r - ur) / (s_r - s_star)
    u0 = fac
    u1 = fac * s_star
    u2 = fac * (Er / rr + (s_star - ur) * (s_star + pr / (rr * (s_r - ur))))
    return (
        f0 + s_r * (u0 - rr),
        f1 + s_r * (u1 - rr * ur),
        f2 + s_r * (u2 - Er),
    )


@nb.njit(cache=True)
def _face_fluxes(wg, gamma, eps):
    # wg: (3, nx + 2*NGHOST) primitives with ghost cells; returns (3, nx+1)
    # HLLC fluxes at the cell interfaces.
    n_face = wg.shape[1] - 2 * NGHOST + 1
    out = np.empty((3, n_face))
    for j in range(n_face):
        rl = _weno5_scalar(wg[0, j], wg[0, j + 1], wg[0, j + 2], wg[0, j + 3], wg[0, j + 4], eps)
        ul = _weno5_scalar(wg[1, j], wg[1, j + 1], wg[1, j + 2], wg[1, j + 3], wg[1, j + 4], eps)
        pl = _weno5_scalar(wg[2, j], wg[2, j + 1], wg[2, j + 2], wg[2, j + 3], wg[2, j + 4], eps)
        rr = _weno5_scalar(wg[0, j + 5], wg[0, j + 4], wg[0, j + 3], wg[0, j + 2], wg[0, j + 1], eps)
        ur = _weno5_scalar(wg[1, j + 5], wg[1, j + 4], wg[1, j + 3], wg[1, j + 2], wg[1, j + 1], eps)
        pr = _weno5_scalar(wg[2, j + 5], wg[2, j + 4], wg[2, j + 3], wg[2, j + 2], wg[2, j + 1], eps)
        # first-order fallback if componentwise reconstruction lost positivity
        if rl <= 0.0 or pl <= 0.0:
            rl, ul, pl = wg[0, j + 2], wg[1, j + 2], wg[2, j + 2]
        if rr <= 0.0 or pr <= 0.0:
            rr, ur, pr = wg[0, j + 3], wg[1, j + 3], wg[2, j + 3]
        out[0, j], out[1, j], out[2, j] = _hllc_scalar(rl, ul, pl, rr, ur, pr, gamma)
    return out


def weno5_reconstruct(stencil, eps: float = 1e-6) -> float:
    """Fifth-order WENO value at the right interface of the stencil's center cell."""
    v = np.asarray(stencil, dtype=np.float64)
    if v.shape != (5,):
        raise ValueError("stencil must hold exactly 5 values")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite value in WENO stencil")
    return float(_weno5_scalar(v[0], v[1], v[2], v[3], v[4], eps))


def hllc_flux(left, right, gas: GasModel) -> np.ndarray:
    """HLLC flux for a primitive left/right state pair."""
    rl, ul, pl = left
    rr, ur, pr = right
    if min(rl, pl, rr, pr) <= 0.0:
        raise InvalidStateError("hllc_flux needs positive rho and p on both sides")
    f = _hllc_scalar(rl, ul, pl, rr, ur, pr, gas.gamma)
    f = np.array(f)
    if not np.all(np.isfinite(f)):
        raise InvalidStateError("non-finite HLLC wave speeds (vacuum-adjacent states)")
    return f


# ---------------------------------------------------------------------------
# time marching


def compute_dt(field: PrimitiveField, grid: Grid, config: SolverConfig,
               remaining: float | None = None) -> float:
    """CFL time step, clipped so the final step lands exactly on t_final."""
    a = config.gas.sound_speed(field.rho, field.p)
    dt = config.cfl * grid.dx / float(np.max(np.abs(field.u) + a))
    if remaining is not None and remaining < dt:
        dt = remaining
    return dt


def _ghost_pad(w: np.ndarray) -> np.ndarray:
    # transmissive: zero-gradient extrapolation into NGHOST ghost cells per side
    return np.pad(w, ((0, 0), (NGHOST, NGHOST)), mode="edge")


def _rhs(u_arr: np.ndarray, grid: Grid, config: SolverConfig, where: str) -> np.ndarray:
    gamma = config.gas.gamma
    rho = u_arr[0]
    _check_positive(rho, f"rho ({where})")
    vel = u_arr[1] / rho
    p = (gamma - 1.0) * (u_arr[2] - 0.5 * u_arr[1] * vel)
    _check_positive(p, f"pressure ({where})")
    wg = _ghost_pad(np.stack([rho, vel, p]))
    f = _face_fluxes(wg, gamma, config.weno_eps)
    if not np.all(np.isfinite(f)):
        j = int(np.flatnonzero(~np.isfinite(f).all(axis=0))[0])
        raise InvalidStateError(f"non-finite interface flux at face {j} ({where})")
    return -(f[:, 1:] - f[:, :-1]) / grid.dx


def _rk3_arr(u_arr: np.ndarray, dt: float, grid: Grid, config: SolverConfig,
             where: str = "") -> np.ndarray:
    # Shu-Osher SSP-RK3
    u1 = u_arr + dt * _rhs(u_arr, grid, config, where + "stage 1")
    u2 = 0.75 * u_arr + 0.25 * (u1 + dt * _rhs(u1, grid, config, where + "stage 2"))
    return u_arr / 3.0 + (2.0 / 3.0) * (u2 + dt * _rhs(u2, grid, config, where + "stage 3"))


def rk3_step(field: ConservedField, dt: float, grid: Grid,
             config: SolverConfig) -> ConservedField:
    """One SSP-RK3 update of the WENO5/HLLC semi-discrete scheme."""
    if field.rho.shape[0] != grid.nx:
        raise ValueError("field length does not match grid")
    return ConservedField.from_array(_rk3_arr(field.as_array(), dt, grid, config))


def build_initial_condition(theta, grid: Grid) -> PrimitiveField:
    """Piecewise-constant state (rho_L, 0, p_L) | (rho_R, 0, p_R) split at x=0.5.

    theta is (rho_L, p_L, rho_R, p_R); each cell value equals exactly one
    component, so the map stays differentiable for the inversion chain.
    """
    t = np.asarray(getattr(theta, "as_array", lambda: theta)(), dtype=np.float64)
    if t.shape != (4,):
        raise ValueError("theta must provide 4 components (rho_L, p_L, rho_R, p_R)")
    if np.any(t <= 0.0):
        raise ValueError(f"theta components must be positive, got {t.tolist()}")
    left = grid.cell_centers <= 0.5
    rho = np.where(left, t[0], t[2])
    p = np.where(left, t[1], t[3])
    return PrimitiveField(rho, np.zeros(grid.nx), p)


def solve(ic, grid: Grid, config: SolverConfig) -> PrimitiveField:
    """March a theta vector or PrimitiveField to t_final; returns the final state."""
    if not isinstance(ic, PrimitiveField):
        ic = build_initial_condition(ic, grid)
    ic.validate()
    u_arr = primitive_to_conserved(ic, config.gas).as_array()
    t = 0.0
    for _ in range(_MAX_STEPS):
        if t >= config.t_final:
            break
        w = conserved_to_primitive(ConservedField.from_array(u_arr), config.gas)
        dt = compute_dt(w, grid, config, remaining=config.t_final - t)
        try:
            u_arr = _rk3_arr(u_arr, dt, grid, config)
        except InvalidStateError as err:
            raise InvalidStateError(f"solver failed at t={t:.6g}: {err}") from err
        t += dt
    else:
        raise RuntimeError(f"exceeded {_MAX_STEPS} steps before t_final")
    return conserved_to_primitive(ConservedField.from_array(u_arr), config.gas)


# ---------------------------------------------------------------------------
# exact Riemann solver (verification oracle)


def _fk(p, rho_k, p_k, a_k, gamma):
    # Toro's pressure function for one side, plus its derivative.
    if p > p_k:  # shock
        ak = 2.0 / ((gamma + 1.0) * rho_k)
        bk = (gamma - 1.0) / (gamma + 1.0) * p_k
        root = np.sqrt(ak / (p + bk))
        return (p - p_k) * root, root * (1.0 - 0.5 * (p - p_k) / (p + bk))
    # rarefaction
    power = (gamma - 1.0) / (2.0 * gamma)
    f = 2.0 * a_k / (gamma - 1.0) * ((p / p_k) ** power - 1.0)
    df = (p / p_k) ** (-(gamma + 1.0) / (2.0 * gamma)) / (rho_k * a_k)
    return f, df


def star_state(states: RiemannStates, gas: GasModel,
               tol: float = 1e-12, max_iter: int = 200) -> tuple:
    """Star-region (p*, u*) via safeguarded Newton on the exact pressure function."""
    rl, ul, pl = states.left
    rr, ur, pr = states.right
    g = gas.gamma
    al = gas.sound_speed(rl, pl)
    ar = gas.sound_speed(rr, pr)
    if 2.0 * (al + ar) / (g - 1.0) <= ur - ul:
        raise VacuumError("pressure positivity violated: states generate vacuum")

    def f(p):
        fl, dl = _fk(p, rl, pl, al, g)
        fr, dr = _fk(p, rr, pr, ar, g)
        return fl + fr + (ur - ul), dl + dr

    # two-rarefaction style initial guess, kept strictly positive
    p_pv = 0.5 * (pl + pr) - 0.125 * (ur - ul) * (rl + rr) * (al + ar)
    p = max(1e-10, p_pv)

    # f is monotone increasing in p, so a bisection bracket safeguards Newton
    lo, hi = 1e-14, max(pl, pr, p)
    while f(hi)[0] < 0.0:
        hi *= 4.0
    for _ in range(max_iter):
        val, dval = f(p)
        if abs(val) <= tol:
            break
        if val > 0.0:
            hi = p
        else:
            lo = p
        p_new = p - val / dval
        if not lo < p_new < hi:
            p_new = 0.5 * (lo + hi)
        p = p_new
    else:
        raise RuntimeError("star-state Newton iteration did not converge")
    fl, _ = _fk(p, rl, pl, al, g)
    fr, _ = _fk(p, rr, pr, ar, g)
    u = 0.5 * (ul + ur) + 0.5 * (fr - fl)
    return float(p), float(u)


def exact_riemann(states: RiemannStates, gas: GasModel, xi: float) -> tuple:
    """Sample the exact similarity solution (rho, u, p) at xi = x/t."""
    p_star, u_star = star_state(states, gas)
    g = gas.gamma
    beta = (g - 1.0) / (g + 1.0)
    rl, ul, pl = states.left
    rr, ur, pr = states.right
    al = gas.sound_speed(rl, pl)
    ar = gas.sound_speed(rr, pr)

    if xi <= u_star:  # left of the contact
        if p_star > pl:  # left shock
            s = ul - al * np.sqrt((g + 1.0) / (2.0 * g) * p_star / pl + (g - 1.0) / (2.0 * g))
            if xi <= s:
                return rl, ul, pl
            rho = rl * (p_star / pl + beta) / (beta * p_star / pl + 1.0)
            return float(rho), u_star, p_star
        head = ul - al
        a_star = al * (p_star / pl) ** ((g - 1.0) / (2.0 * g))
        tail = u_star - a_star
        if xi <= head:
            return rl, ul, pl
        if xi >= tail:
            return float(rl * (p_star / pl) ** (1.0 / g)), u_star, p_star
        u = 2.0 / (g + 1.0) * (al + 0.5 * (g - 1.0) * ul + xi)
        a = 2.0 / (g + 1.0) * (al + 0.5 * (g - 1.0) * (ul - xi))
        rho = rl * (a / al) ** (2.0 / (g - 1.0))
        p = pl * (a / al) ** (2.0 * g / (g - 1.0))
        return float(rho), float(u), float(p)

    if p_star > pr:  # right shock
        s = ur + ar * np.sqrt((g + 1.0) / (2.0 * g) * p_star / pr + (g - 1.0) / (2.0 * g))
        if xi >= s:
            return rr, ur, pr
        rho = rr * (p_star / pr + beta) / (beta * p_star / pr + 1.0)
        return float(rho), u_star, p_star
    head = ur + ar
    a_star = ar * (p_star / pr) ** ((g - 1.0) / (2.0 * g))
    tail = u_star + a_star
    if xi >= head:
        return rr, ur, pr
    if xi <= tail:
        return float(rr * (p_star / pr) ** (1.0 / g)), u_star, p_star
    u = 2.0 / (g + 1.0) * (-ar + 0.5 * (g - 1.0) * ur + xi)
    a = 2.0 / (g + 1.0) * (ar - 0.5 * (g - 1.0) * (ur - xi))
    rho = rr * (a / ar) ** (2.0 / (g - 1.0))
    p = pr * (a / ar) ** (2.0 * g / (g - 1.0))
    return float(rho), float(u), float(p)


def exact_profile(states: RiemannStates, gas: GasModel, x: np.ndarray, t: float,
                  diaphragm: float = 0.5) -> PrimitiveField:
    """Exact solution sampled on a set of positions at time t > 0."""
    if not t > 0.0:
        raise ValueError("t must be positive")
    xi = (np.asarray(x) - diaphragm) / t
    vals = np.array([exact_riemann(states, gas, s) for s in xi])
    return PrimitiveField(vals[:, 0], vals[:, 1], vals[:, 2])
