"""Option-pricing likelihood: softplus-linked local volatility surface,
Crank-Nicolson forward pricer in (maturity, strike), and synthetic market
data with a GBM underlying.

The pricer marches the call-price function forward in maturity from the
payoff (S - K)^+, solving one tridiagonal system per step. Observed quote
prices are then Gaussian readings of the model prices, which ties every
component of the latent block together through one PDE solve: the
likelihood does not factorize over the block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded

from .gp import KernelParams, conditional_prior


class PricerError(ArithmeticError):
    """Numerical breakdown inside the PDE solve."""


def softplus(f):
    """log(1 + exp(f)), overflow-safe for large |f|."""
    return np.logaddexp(0.0, np.asarray(f, dtype=float))


@dataclass(frozen=True)
class VolSurface:
    """Volatility values on a strike x maturity grid of latent nodes."""

    maturities: np.ndarray  # (n_mat,) years, strictly increasing
    strikes: np.ndarray     # (n_strike,) currency, strictly increasing
    values: np.ndarray      # (n_strike, n_mat), all positive

    def __post_init__(self):
        mats = np.atleast_1d(np.asarray(self.maturities, dtype=float))
        strikes = np.atleast_1d(np.asarray(self.strikes, dtype=float))
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "strikes", strikes)
        object.__setattr__(self, "values", values)
        if np.any(np.diff(mats) <= 0) or np.any(np.diff(strikes) <= 0):
            raise ValueError("surface axes must be strictly increasing")
        if values.shape != (strikes.size, mats.size):
            raise ValueError("surface values must be (n_strike, n_mat)")
        if np.any(values <= 0):
            raise ValueError("volatility must be positive everywhere")


@dataclass(frozen=True)
class PdeGrid:
    """Uniform discretization of the pricing PDE in strike and maturity."""

    strikes: np.ndarray  # (n_nodes,) from 0 to k_max, uniform
    times: np.ndarray    # (n_levels,) from 0 to the longest maturity, uniform
    spot: float
    rate: float = 0.0

    @property
    def dk(self) -> float:
        return float(self.strikes[1] - self.strikes[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def make_pde_grid(
    spot: float,
    max_strike: float,
    max_maturity: float,
    n_strike: int = 200,
    n_time: int = 200,
    k_max_mult: float = 2.0,
    rate: float = 0.0,
) -> PdeGrid:
    """Build a grid whose strike spacing puts the spot exactly on a node.

    The strike axis runs to at least k_max_mult * max_strike so the zero
    upper boundary sits far from the quoted region.
    """
    if spot <= 0 or max_strike <= 0 or max_maturity <= 0:
        raise ValueError("spot, max_strike and max_maturity must be positive")
    if n_strike < 50:
        raise ValueError("need at least 50 strike intervals")
    k_target = k_max_mult * max_strike
    dk0 = k_target / n_strike
    n_below = max(1, int(round(spot / dk0)))
    dk = spot / n_below
    n_nodes = int(np.ceil(k_target / dk - 1e-9)) + 1
    strikes = dk * np.arange(n_nodes)
    times = np.linspace(0.0, max_maturity, n_time + 1)
    return PdeGrid(strikes, times, float(spot), float(rate))


def interpolate_surface(surface: VolSurface, grid: PdeGrid) -> np.ndarray:
    """Volatility at every (time level, strike node) of the PDE grid.

    Bilinear inside the latent grid's hull; constant nearest-edge
    extrapolation outside (queries are clamped to the axes ranges).
    """
    interp = RegularGridInterpolator(
        (surface.maturities, surface.strikes), surface.values.T, method="linear"
    )
    tq = np.clip(grid.times, surface.maturities[0], surface.maturities[-1])
    kq = np.clip(grid.strikes, surface.strikes[0], surface.strikes[-1])
    tt, kk = np.meshgrid(tq, kq, indexing="ij")
    out = interp(np.column_stack([tt.ravel(), kk.ravel()])).reshape(
        grid.times.size, grid.strikes.size
    )
    return out


def _march(sigma_grid: np.ndarray, grid: PdeGrid) -> np.ndarray:
    """Crank-Nicolson march of the forward pricing PDE.

    dC/dT = -r K dC/dK + 0.5 sigma^2 K^2 d2C/dK2, C(0, K) = (S - K)^+,
    C(T, 0) = S, C(T, K_max) = 0. The first step is split into two implicit
    half-steps (Rannacher smoothing) to damp oscillations from the payoff
    kink; plain CN afterwards.
    """
    strikes, times = grid.strikes, grid.times
    n_nodes, n_levels = strikes.size, times.size
    dk, dt = grid.dk, grid.dt
    k_int = strikes[1:-1]
    beta_base = 0.5 * k_int**2 / dk**2
    gamma = grid.rate * k_int / (2.0 * dk)

    sol = np.empty((n_levels, n_nodes))
    sol[0] = np.maximum(grid.spot - strikes, 0.0)
    sol[:, 0] = grid.spot
    sol[:, -1] = 0.0

    def coeffs(sig_row):
        beta = beta_base * sig_row[1:-1] ** 2
        lower = beta + gamma
        diag = -2.0 * beta
        upper = beta - gamma
        return lower, diag, upper

    def solve_level(theta_dt, lo_new, di_new, up_new, rhs):
        ab = np.zeros((3, n_nodes - 2))
        ab[0, 1:] = -theta_dt * up_new[:-1]
        ab[1, :] = 1.0 - theta_dt * di_new
        ab[2, :-1] = -theta_dt * lo_new[1:]
        try:
            return solve_banded((1, 1), ab, rhs, check_finite=False)
        except np.linalg.LinAlgError as err:  # pragma: no cover - defensive
            raise PricerError(f"tridiagonal solve failed: {err}") from err

    # Rannacher startup: two implicit half-steps to reach level 1.
    half = 0.5 * dt
    c = sol[0].copy()
    for frac in (0.5, 1.0):
        sig_row = (1.0 - frac) * sigma_grid[0] + frac * sigma_grid[1]
        lo, di, up = coeffs(sig_row)
        rhs = c[1:-1].copy()
        rhs[0] += half * lo[0] * grid.spot
        c = sol[0].copy()
        c[1:-1] = solve_level(half, lo, di, up, rhs)
        c[0], c[-1] = grid.spot, 0.0
    sol[1, 1:-1] = c[1:-1]

    for lvl in range(1, n_levels - 1):
        lo_o, di_o, up_o = coeffs(sigma_grid[lvl])
        lo_n, di_n, up_n = coeffs(sigma_grid[lvl + 1])
        prev = sol[lvl]
        rhs = (
            prev[1:-1]
            + 0.5 * dt * (lo_o * prev[:-2] + di_o * prev[1:-1] + up_o * prev[2:])
        )
        rhs[0] += 0.5 * dt * lo_n[0] * grid.spot
        sol[lvl + 1, 1:-1] = solve_level(0.5 * dt, lo_n, di_n, up_n, rhs)

    if not np.all(np.isfinite(sol)):
        raise PricerError("non-finite values in the PDE solution")
    return sol


def crank_nicolson_price(sigma_grid, grid: PdeGrid, quote_coords) -> np.ndarray:
    """Call prices at quoted (maturity, strike) pairs.

    sigma_grid holds the local volatility at every (time level, strike node);
    quote_coords is (n, 2) with columns (maturity_years, strike). Prices come
    from bilinear interpolation in the marched solution array.
    """
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if sigma_grid.shape != (grid.times.size, grid.strikes.size):
        raise ValueError("sigma_grid shape must be (n_levels, n_nodes)")
    if np.any(sigma_grid <= 0):
        raise ValueError("volatility must be positive on the whole grid")
    coords = np.atleast_2d(np.asarray(quote_coords, dtype=float))
    if coords.shape[1] != 2:
        raise ValueError("quote_coords must have columns (maturity, strike)")
    if (
        np.any(coords[:, 0] < 0)
        or np.any(coords[:, 0] > grid.times[-1] + 1e-12)
        or np.any(coords[:, 1] < 0)
        or np.any(coords[:, 1] > grid.strikes[-1] + 1e-9)
    ):
        raise ValueError("quotes outside the PDE grid")
    sol = _march(sigma_grid, grid)
    interp = RegularGridInterpolator((grid.times, grid.strikes), sol, method="linear")
    return interp(coords)


@dataclass(frozen=True)
class StepQuotes:
    """One step's observed option market: spot plus quoted call prices."""

    spot: float
    coords: np.ndarray  # (N, 2): (maturity_years, strike)
    prices: np.ndarray  # (N,)

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        prices = np.atleast_1d(np.asarray(self.prices, dtype=float))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "prices", prices)
        if coords.shape[0] != prices.shape[0]:
            raise ValueError("coords and prices lengths differ")


@dataclass
class OptionPricingModel:
    """Likelihood p(c | f, alpha): price the softplus-linked surface and
    compare with quotes under iid Gaussian noise, alpha = (mu_f, sigma_c).

    The latent block is ordered strike-major: all maturities of the lowest
    strike first. GP inputs scale strikes by `strike_scale` so the kernel
    lengthscales act on order-one coordinates.
    """

    maturities: np.ndarray
    strikes: np.ndarray
    n_strike: int = 200
    n_time: int = 200
    k_max_mult: float = 2.0
    rate: float = 0.0
    strike_scale: float = 1000.0
    dim_alpha: int = 2
    _grids: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.maturities = np.atleast_1d(np.asarray(self.maturities, dtype=float))
        self.strikes = np.atleast_1d(np.asarray(self.strikes, dtype=float))

    @property
    def n_quotes(self) -> int:
        return self.maturities.size * self.strikes.size

    def quote_coords(self) -> np.ndarray:
        """(N, 2) quoted (maturity, strike) pairs, strike-major."""
        kk, tt = np.meshgrid(self.strikes, self.maturities, indexing="ij")
        return np.column_stack([tt.ravel(), kk.ravel()])

    def gp_inputs(self, t_value: float) -> np.ndarray:
        """(N, 3) GP inputs (maturity, scaled strike, time) for one step."""
        coords = self.quote_coords()
        return np.column_stack([
            coords[:, 0],
            coords[:, 1] / self.strike_scale,
            np.full(self.n_quotes, float(t_value)),
        ])

    def _grid_for(self, spot: float) -> PdeGrid:
        key = round(float(spot), 12)
        if key not in self._grids:
            self._grids[key] = make_pde_grid(
                spot,
                float(self.strikes[-1]),
                float(self.maturities[-1]),
                n_strike=self.n_strike,
                n_time=self.n_time,
                k_max_mult=self.k_max_mult,
                rate=self.rate,
            )
        return self._grids[key]

    def surface_from_latent(self, f_values, mu_f: float) -> VolSurface:
        sig = softplus(np.asarray(f_values, dtype=float) + mu_f)
        values = sig.reshape(self.strikes.size, self.maturities.size)
        return VolSurface(self.maturities, self.strikes, values)

    def price_latent(self, f_values, mu_f: float, spot: float) -> np.ndarray:
        """Model prices of the full quote grid for one latent block."""
        surface = self.surface_from_latent(f_values, mu_f)
        grid = self._grid_for(spot)
        sigma_grid = interpolate_surface(surface, grid)
        return crank_nicolson_price(sigma_grid, grid, self.quote_coords())

    def loglik(self, f_values, alpha, data: StepQuotes) -> float:
        return option_loglik(f_values, alpha, data, self)


def option_loglik(f_values, alpha, quotes: StepQuotes, model: OptionPricingModel) -> float:
    """Gaussian log-likelihood of observed prices around the PDE prices."""
    f_values = np.asarray(f_values, dtype=float)
    if f_values.shape[0] != model.n_quotes:
        raise ValueError("latent block size does not match the quote grid")
    mu_f, sigma_c = float(alpha[0]), float(alpha[1])
    if sigma_c <= 0:
        raise ValueError("sigma_c must be positive")
    model_prices = model.price_latent(f_values, mu_f, quotes.spot)
    resid = quotes.prices - model_prices
    n = resid.shape[0]
    return float(
        -0.5 * n * np.log(2.0 * np.pi * sigma_c**2) - 0.5 * resid @ resid / sigma_c**2
    )


def gbm_simulate(s0: float, mu: float, sigma: float, n_steps: int, dt: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Geometric Brownian motion path of length n_steps starting at s0."""
    if s0 <= 0:
        raise ValueError("s0 must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    increments = (mu - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * rng.standard_normal(
        n_steps - 1
    )
    return s0 * np.exp(np.concatenate([[0.0], np.cumsum(increments)]))


TRUE_OPTION_KERNEL = np.array([0.5, 0.3, 0.5, 0.75])  # (l_T, l_K, l_t, signal_sd)
TRUE_OPTION_ALPHA = np.array([-1.5, 0.05])            # (mu_f, sigma_c)


@dataclass
class OptionDataset:
    """Synthetic option-market sequence with its generating ground truth."""

    quotes: list[StepQuotes]
    f_true: list[np.ndarray]
    sigma_true: list[np.ndarray]
    t_values: np.ndarray
    spots: np.ndarray
    kernel_params: KernelParams
    alpha: np.ndarray
    model: OptionPricingModel

    @property
    def t_steps(self) -> int:
        return len(self.quotes)


def generate_option_dataset(
    t_steps: int = 12,
    n_maturities: int = 5,
    n_strikes: int = 15,
    seed: int = 0,
    s0: float = 1000.0,
    gbm_mu: float = 0.04,
    gbm_sigma: float = 0.2,
    kernel_vector: np.ndarray | None = None,
    alpha: np.ndarray | None = None,
    model: OptionPricingModel | None = None,
) -> OptionDataset:
    """Simulate the option-market sequence.

    The latent surface sequence is one joint GP draw over the
    (maturity, scaled strike, time) inputs of all steps; spots follow a GBM
    sampled at the step spacing; each step's quote grid is priced with the
    Crank-Nicolson solver and observed with iid Gaussian noise.
    """
    if t_steps < 1:
        raise ValueError("t_steps must be positive")
    rng = np.random.default_rng(seed)
    kv = TRUE_OPTION_KERNEL if kernel_vector is None else np.asarray(kernel_vector, float)
    alpha = TRUE_OPTION_ALPHA.copy() if alpha is None else np.asarray(alpha, dtype=float)
    mu_f, sigma_c = alpha
    if model is None:
        model = OptionPricingModel(
            maturities=np.linspace(0.25, 1.25, n_maturities),
            strikes=np.linspace(0.7 * s0, 1.3 * s0, n_strikes),
            strike_scale=s0,
        )
    params = KernelParams.from_vector(kv)
    t_values = np.linspace(0.0, 1.0, t_steps) if t_steps > 1 else np.zeros(1)
    dt = float(t_values[1] - t_values[0]) if t_steps > 1 else 1.0
    spots = gbm_simulate(s0, gbm_mu, gbm_sigma, t_steps, dt, rng)

    stacked = np.vstack([model.gp_inputs(tv) for tv in t_values])
    cond = conditional_prior([], stacked, params)
    f_all = cond.chol @ rng.standard_normal(stacked.shape[0]) + cond.mean
    n = model.n_quotes

    quotes, f_true, sigma_true = [], [], []
    for k in range(t_steps):
        f_k = f_all[k * n:(k + 1) * n]
        sig_k = softplus(f_k + mu_f)
        clean = model.price_latent(f_k, mu_f, float(spots[k]))
        prices = clean + sigma_c * rng.standard_normal(n)
        step = StepQuotes(float(spots[k]), model.quote_coords(), prices)
        _check_quote_bounds(step, sigma_c)
        quotes.append(step)
        f_true.append(f_k)
        sigma_true.append(sig_k)
    return OptionDataset(
        quotes, f_true, sigma_true, t_values, spots, params, alpha, model
    )


def _check_quote_bounds(step: StepQuotes, sigma_c: float) -> None:
    intrinsic = np.maximum(step.spot - step.coords[:, 1], 0.0)
    lo = intrinsic - 3.0 * sigma_c
    hi = step.spot + 3.0 * sigma_c
    if np.any(step.prices < lo) or np.any(step.prices > hi):
        raise ValueError("generated quotes violate no-arbitrage bounds")
