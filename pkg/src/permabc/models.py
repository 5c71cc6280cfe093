"""Generative models: plugin contract and the built-in simulators.

A model bundles a prior over one global parameter block and exchangeable
local blocks with a per-compartment simulator. All randomness flows through
caller-provided ``numpy.random.Generator`` streams, so simulators are pure
given their stream. Four models ship with the package:

``uniform-toy``
    No global block; each local mean is uniform on a box and each
    observation uniform in a window around its mean.
``gaussian-hierarchy``
    Inverse-gamma global variance, normal local means, normal observations.
``ridge-gaussian``
    Over-parameterized normal model whose likelihood depends on the global
    and local parameter only through their sum, giving a strong posterior
    ridge; its exact posterior is available by conjugacy.
``sir``
    Deterministic epidemic compartment model integrated with a fixed-step
    RK4 scheme; outputs daily incidence (the daily decrease of the
    susceptible count).
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ObservedData, SimulatedData
from .exceptions import ConfigurationError, NotAvailableError, SimulationFailure
from .validation import check_rng

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@dataclass(frozen=True)
class ParameterVector:
    """One global parameter block plus ``M`` exchangeable local blocks."""

    global_block: np.ndarray
    local_blocks: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.global_block, dtype=float))
        loc = np.asarray(self.local_blocks, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise ValueError(f"local blocks must form an (M, d_loc) array, got {loc.shape}")
        object.__setattr__(self, "global_block", g)
        object.__setattr__(self, "local_blocks", loc)

    @property
    def n_locals(self) -> int:
        return self.local_blocks.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.global_block, self.local_blocks.ravel()])


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a model: name, dimensions, hyperparameters."""

    name: str
    d_glob: int
    d_loc: int
    n_obs: int
    hyperparameters: dict = field(default_factory=dict)


class Model(abc.ABC):
    """Plugin contract for generative models.

    Subclasses provide prior sampling, per-compartment simulation, and log
    prior densities; batch variants have generic (slow) fallbacks that the
    built-ins override with vectorized code.
    """

    name: str = "model"
    d_glob: int = 0
    d_loc: int = 1
    n_obs: int = 1

    # -- prior ---------------------------------------------------------

    @abc.abstractmethod
    def sample_global(self, rng) -> np.ndarray:
        """One draw of the global block, shape (d_glob,)."""

    @abc.abstractmethod
    def sample_locals(self, m: int, rng) -> np.ndarray:
        """``m`` i.i.d. local blocks, shape (m, d_loc)."""

    def sample_prior(self, m: int, rng) -> ParameterVector:
        rng = check_rng(rng)
        if m < 1:
            raise ValueError("need at least one local block")
        return ParameterVector(self.sample_global(rng), self.sample_locals(m, rng))

    @abc.abstractmethod
    def log_prior_global(self, global_block) -> float:
        """Log prior density of the global block (``-inf`` off support)."""

    @abc.abstractmethod
    def log_prior_locals(self, local_blocks) -> np.ndarray:
        """Per-block log prior densities, shape (m,)."""

    def local_prior_ppf(self, q: float) -> np.ndarray:
        """Per-coordinate local prior quantiles (used to plant outliers)."""
        raise NotAvailableError(f"model {self.name} has no local prior quantile function")

    # -- simulation ----------------------------------------------------

    @abc.abstractmethod
    def simulate_compartments(self, global_block, local_blocks, rng) -> np.ndarray:
        """Simulate one dataset row per local block, shape (m, n_obs)."""

    def simulate(self, theta: ParameterVector, rng) -> SimulatedData:
        rng = check_rng(rng)
        return SimulatedData(
            self.simulate_compartments(theta.global_block, theta.local_blocks, rng)
        )

    # -- batch fallbacks (override for speed) ---------------------------

    def sample_prior_batch(self, size: int, m: int, rng):
        rng = check_rng(rng)
        globals_ = np.empty((size, self.d_glob))
        locals_ = np.empty((size, m, self.d_loc))
        for b in range(size):
            globals_[b] = self.sample_global(rng)
            locals_[b] = self.sample_locals(m, rng)
        return globals_, locals_

    def simulate_batch(self, globals_, locals_, rng) -> np.ndarray:
        rng = check_rng(rng)
        size, m = locals_.shape[0], locals_.shape[1]
        out = np.empty((size, m, self.n_obs))
        for b in range(size):
            out[b] = self.simulate_compartments(globals_[b], locals_[b], rng)
        return out

    # -- optional exact posterior ---------------------------------------

    def true_posterior(self, y: ObservedData):
        raise NotAvailableError(f"no exact posterior available for model {self.name}")

    @abc.abstractmethod
    def spec(self) -> ModelSpec:
        """Fully materialized declarative description of this model."""


class UniformToy(Model):
    """Local means uniform on a box, observations uniform around the mean."""

    name = "uniform-toy"
    d_glob = 0
    d_loc = 1

    def __init__(self, low=-2.0, high=2.0, half_width=1.0, n_obs=1):
        if not low < high:
            raise ConfigurationError("uniform-toy needs low < high")
        if half_width <= 0:
            raise ConfigurationError("uniform-toy needs a positive half_width")
        self.low = float(low)
        self.high = float(high)
        self.half_width = float(half_width)
        self.n_obs = int(n_obs)

    def sample_global(self, rng):
        return np.empty(0)

    def sample_locals(self, m, rng):
        return rng.uniform(self.low, self.high, size=(m, 1))

    def log_prior_global(self, global_block):
        return 0.0

    def log_prior_locals(self, local_blocks):
        mu = np.asarray(local_blocks)[:, 0]
        inside = (mu >= self.low) & (mu <= self.high)
        return np.where(inside, -math.log(self.high - self.low), -np.inf)

    def local_prior_ppf(self, q):
        return np.array([self.low + q * (self.high - self.low)])

    def simulate_compartments(self, global_block, local_blocks, rng):
        mu = np.asarray(local_blocks)[:, 0]
        return rng.uniform(
            mu[:, None] - self.half_width,
            mu[:, None] + self.half_width,
            size=(mu.size, self.n_obs),
        )

    def sample_prior_batch(self, size, m, rng):
        rng = check_rng(rng)
        return (
            np.empty((size, 0)),
            rng.uniform(self.low, self.high, size=(size, m, 1)),
        )

    def simulate_batch(self, globals_, locals_, rng):
        rng = check_rng(rng)
        mu = locals_[..., 0]
        shape = mu.shape + (self.n_obs,)
        return rng.uniform(
            mu[..., None] - self.half_width, mu[..., None] + self.half_width, size=shape
        )

    def true_posterior(self, y: ObservedData):
        lo = np.maximum(self.low, y.compartments.max(axis=1) - self.half_width)
        hi = np.minimum(self.high, y.compartments.min(axis=1) + self.half_width)
        if np.any(lo >= hi):
            raise NotAvailableError("a compartment's posterior box is empty")
        return UniformBoxPosterior(lower=lo, upper=hi)

    def spec(self):
        return ModelSpec(
            self.name,
            self.d_glob,
            self.d_loc,
            self.n_obs,
            {
                "low": self.low,
                "high": self.high,
                "half_width": self.half_width,
                "n_obs": self.n_obs,
            },
        )


class GaussianHierarchy(Model):
    """Inverse-gamma shared variance, normal local means, normal data."""

    name = "gaussian-hierarchy"
    d_glob = 1
    d_loc = 1

    def __init__(self, shape=2.0, scale=2.0, local_sd=2.0, n_obs=10):
        if shape <= 0 or scale <= 0:
            raise ConfigurationError("inverse-gamma shape and scale must be positive")
        if local_sd <= 0:
            raise ConfigurationError("local prior standard deviation must be positive")
        self.shape = float(shape)
        self.scale = float(scale)
        self.local_sd = float(local_sd)
        self.n_obs = int(n_obs)

    def sample_global(self, rng):
        # 1/Gamma(shape, rate=scale) is InverseGamma(shape, scale)
        return np.atleast_1d(1.0 / rng.gamma(self.shape, 1.0 / self.scale))

    def sample_locals(self, m, rng):
        return rng.normal(0.0, self.local_sd, size=(m, 1))

    def log_prior_global(self, global_block):
        beta = float(np.asarray(global_block).ravel()[0])
        if beta <= 0:
            return -np.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(beta) - b / beta

    def log_prior_locals(self, local_blocks):
        mu = np.asarray(local_blocks)[:, 0]
        s = self.local_sd
        return -0.5 * (mu / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)

    def local_prior_ppf(self, q):
        from scipy.stats import norm

        return np.array([self.local_sd * norm.ppf(q)])

    def global_prior_cdf(self, values):
        from scipy.stats import invgamma

        return invgamma.cdf(values, self.shape, scale=self.scale)

    def simulate_compartments(self, global_block, local_blocks, rng):
        beta = float(np.asarray(global_block).ravel()[0])
        if beta <= 0:
            raise SimulationFailure("non-positive variance in the Gaussian hierarchy")
        mu = np.asarray(local_blocks)[:, 0]
        return rng.normal(mu[:, None], math.sqrt(beta), size=(mu.size, self.n_obs))

    def sample_prior_batch(self, size, m, rng):
        rng = check_rng(rng)
        beta = 1.0 / rng.gamma(self.shape, 1.0 / self.scale, size=(size, 1))
        mu = rng.normal(0.0, self.local_sd, size=(size, m, 1))
        return beta, mu

    def simulate_batch(self, globals_, locals_, rng):
        rng = check_rng(rng)
        sd = np.sqrt(globals_[:, 0])[:, None, None]
        mu = locals_[..., 0][..., None]
        return rng.normal(0.0, 1.0, size=mu.shape[:2] + (self.n_obs,)) * sd + mu

    def spec(self):
        return ModelSpec(
            self.name,
            self.d_glob,
            self.d_loc,
            self.n_obs,
            {
                "shape": self.shape,
                "scale": self.scale,
                "local_sd": self.local_sd,
                "n_obs": self.n_obs,
            },
        )


class RidgeGaussian(Model):
    """Over-parameterized normal model: data depend on local + global only."""

    name = "ridge-gaussian"
    d_glob = 1
    d_loc = 1

    def __init__(self, prior_sd=10.0, noise_sd=1.0, n_obs=1):
        if prior_sd <= 0 or noise_sd <= 0:
            raise ConfigurationError("standard deviations must be positive")
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)
        self.n_obs = int(n_obs)

    def sample_global(self, rng):
        return np.atleast_1d(rng.normal(0.0, self.prior_sd))

    def sample_locals(self, m, rng):
        return rng.normal(0.0, self.prior_sd, size=(m, 1))

    def _normal_logpdf(self, x, sd):
        return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)

    def log_prior_global(self, global_block):
        beta = float(np.asarray(global_block).ravel()[0])
        return float(self._normal_logpdf(beta, self.prior_sd))

    def log_prior_locals(self, local_blocks):
        mu = np.asarray(local_blocks)[:, 0]
        return self._normal_logpdf(mu, self.prior_sd)

    def local_prior_ppf(self, q):
        from scipy.stats import norm

        return np.array([self.prior_sd * norm.ppf(q)])

    def simulate_compartments(self, global_block, local_blocks, rng):
        beta = float(np.asarray(global_block).ravel()[0])
        mu = np.asarray(local_blocks)[:, 0]
        mean = mu + beta
        return rng.normal(mean[:, None], self.noise_sd, size=(mu.size, self.n_obs))

    def sample_prior_batch(self, size, m, rng):
        rng = check_rng(rng)
        beta = rng.normal(0.0, self.prior_sd, size=(size, 1))
        mu = rng.normal(0.0, self.prior_sd, size=(size, m, 1))
        return beta, mu

    def simulate_batch(self, globals_, locals_, rng):
        rng = check_rng(rng)
        mean = locals_[..., 0] + globals_[:, 0][:, None]
        return (
            rng.normal(0.0, self.noise_sd, size=mean.shape + (self.n_obs,))
            + mean[..., None]
        )

    def true_posterior(self, y: ObservedData):
        k = y.n_compartments
        n = y.n_obs
        tau = 1.0 / self.prior_sd**2
        lam = 1.0 / self.noise_sd**2
        # parameter order: (global, local_1, ..., local_K)
        precision = np.zeros((k + 1, k + 1))
        precision[0, 0] = tau + k * n * lam
        rhs = np.zeros(k + 1)
        rhs[0] = lam * y.compartments.sum()
        for j in range(k):
            precision[j + 1, j + 1] = tau + n * lam
            precision[0, j + 1] = precision[j + 1, 0] = n * lam
            rhs[j + 1] = lam * y.compartments[j].sum()
        covariance = np.linalg.inv(precision)
        return GaussianPosterior(mean=covariance @ rhs, covariance=covariance)

    def spec(self):
        return ModelSpec(
            self.name,
            self.d_glob,
            self.d_loc,
            self.n_obs,
            {"prior_sd": self.prior_sd, "noise_sd": self.noise_sd, "n_obs": self.n_obs},
        )


# -- epidemic model -----------------------------------------------------


@_njit(cache=True)
def _integrate_sir(s, i, r, delta, nu, pop, horizon, steps_per_day):
    """Fixed-step RK4 over all compartments; returns daily incidence.

    States are advanced in place; incidence for a day is the exact decrease
    of the susceptible count over that day.
    """
    m = s.shape[0]
    incidence = np.empty((m, horizon))
    dt = 1.0 / steps_per_day
    for j in range(m):
        sj, ij, rj = s[j], i[j], r[j]
        nj, dj, vj = pop[j], delta[j], nu[j]
        for day in range(horizon):
            s_start = sj
            for _ in range(steps_per_day):
                f1 = dj * sj * ij / nj
                k1s, k1i, k1r = -f1, f1 - vj * ij, vj * ij
                s2, i2 = sj + 0.5 * dt * k1s, ij + 0.5 * dt * k1i
                f2 = dj * s2 * i2 / nj
                k2s, k2i, k2r = -f2, f2 - vj * i2, vj * i2
                s3, i3 = sj + 0.5 * dt * k2s, ij + 0.5 * dt * k2i
                f3 = dj * s3 * i3 / nj
                k3s, k3i, k3r = -f3, f3 - vj * i3, vj * i3
                s4, i4 = sj + dt * k3s, ij + dt * k3i
                f4 = dj * s4 * i4 / nj
                k4s, k4i, k4r = -f4, f4 - vj * i4, vj * i4
                sj += dt * (k1s + 2 * k2s + 2 * k3s + k4s) / 6.0
                ij += dt * (k1i + 2 * k2i + 2 * k3i + k4i) / 6.0
                rj += dt * (k1r + 2 * k2r + 2 * k3r + k4r) / 6.0
            incidence[j, day] = s_start - sj
        s[j], i[j], r[j] = sj, ij, rj
    return incidence


class SIRModel(Model):
    """Deterministic epidemic compartment model with a shared reproduction number.

    Local blocks hold (initial infectious count, initial recovered count,
    transmission rate); the single global parameter is the basic
    reproduction number, from which each compartment's recovery rate is
    derived as transmission rate / reproduction number. The simulator
    integrates the susceptible-infectious-recovered equations with RK4 at a
    fixed sub-daily step and reports daily new infections.
    """

    name = "sir"
    d_glob = 1
    d_loc = 3

    def __init__(
        self,
        population=1_000_000.0,
        horizon=60,
        steps_per_day=10,
        i0_range=(1.0, 500.0),
        r0init_range=(0.0, 1000.0),
        delta_range=(0.1, 8.0),
        reproduction_range=(0.5, 6.0),
        obs_noise_sd=0.0,
    ):
        self.population = population
        self.horizon = int(horizon)
        self.steps_per_day = int(steps_per_day)
        self.i0_range = tuple(map(float, i0_range))
        self.r0init_range = tuple(map(float, r0init_range))
        self.delta_range = tuple(map(float, delta_range))
        self.reproduction_range = tuple(map(float, reproduction_range))
        self.obs_noise_sd = float(obs_noise_sd)
        self.n_obs = self.horizon
        for name, (lo, hi) in (
            ("i0_range", self.i0_range),
            ("r0init_range", self.r0init_range),
            ("delta_range", self.delta_range),
            ("reproduction_range", self.reproduction_range),
        ):
            if not lo < hi:
                raise ConfigurationError(f"{name} must be an increasing pair")
        if self.delta_range[0] <= 0 or self.reproduction_range[0] <= 0:
            raise ConfigurationError("rates must be positive")
        if self.horizon < 1 or self.steps_per_day < 1:
            raise ConfigurationError("horizon and steps_per_day must be positive")

    def _populations(self, m: int) -> np.ndarray:
        pop = np.asarray(self.population, dtype=float)
        if pop.ndim == 0:
            return np.full(m, float(pop))
        if pop.shape != (m,):
            raise ConfigurationError(
                f"population must be a scalar or length-{m} sequence, got shape {pop.shape}"
            )
        return pop.copy()

    def sample_global(self, rng):
        return np.atleast_1d(rng.uniform(*self.reproduction_range))

    def sample_locals(self, m, rng):
        out = np.empty((m, 3))
        out[:, 0] = rng.uniform(*self.i0_range, size=m)
        out[:, 1] = rng.uniform(*self.r0init_range, size=m)
        out[:, 2] = rng.uniform(*self.delta_range, size=m)
        return out

    def log_prior_global(self, global_block):
        r = float(np.asarray(global_block).ravel()[0])
        lo, hi = self.reproduction_range
        return -math.log(hi - lo) if lo <= r <= hi else -np.inf

    def log_prior_locals(self, local_blocks):
        blocks = np.asarray(local_blocks)
        out = np.zeros(blocks.shape[0])
        for c, (lo, hi) in enumerate(
            (self.i0_range, self.r0init_range, self.delta_range)
        ):
            inside = (blocks[:, c] >= lo) & (blocks[:, c] <= hi)
            out += np.where(inside, -math.log(hi - lo), -np.inf)
        return out

    def local_prior_ppf(self, q):
        return np.array(
            [lo + q * (hi - lo) for lo, hi in (self.i0_range, self.r0init_range, self.delta_range)]
        )

    def simulate_compartments(self, global_block, local_blocks, rng):
        reproduction = float(np.asarray(global_block).ravel()[0])
        if reproduction <= 0:
            raise SimulationFailure("non-positive reproduction number")
        blocks = np.asarray(local_blocks, dtype=float)
        m = blocks.shape[0]
        pop = self._populations(m)
        i0 = blocks[:, 0].copy()
        r0 = blocks[:, 1].copy()
        delta = blocks[:, 2].copy()
        if np.any(delta <= 0):
            raise SimulationFailure("non-positive transmission rate")
        if np.any(i0 < 0) or np.any(r0 < 0) or np.any(i0 + r0 > pop):
            raise SimulationFailure("initial compartment counts out of range")
        s0 = pop - i0 - r0
        nu = delta / reproduction
        state_s, state_i, state_r = s0.copy(), i0.copy(), r0.copy()
        incidence = _integrate_sir(
            state_s, state_i, state_r, delta, nu, pop, self.horizon, self.steps_per_day
        )
        tol = 1e-6 * pop
        if (
            np.any(state_s < -tol)
            or np.any(state_i < -tol)
            or np.any(state_r < -tol)
            or not np.all(np.isfinite(incidence))
        ):
            raise SimulationFailure("epidemic integration produced an invalid state")
        if self.obs_noise_sd > 0:
            incidence = incidence + rng.normal(0.0, self.obs_noise_sd, incidence.shape)
        return incidence

    def final_states(self, global_block, local_blocks):
        """Terminal (S, I, R) per compartment, for conservation checks."""
        reproduction = float(np.asarray(global_block).ravel()[0])
        blocks = np.asarray(local_blocks, dtype=float)
        pop = self._populations(blocks.shape[0])
        s = pop - blocks[:, 0] - blocks[:, 1]
        i = blocks[:, 0].copy()
        r = blocks[:, 1].copy()
        _integrate_sir(
            s,
            i,
            r,
            blocks[:, 2].copy(),
            blocks[:, 2] / reproduction,
            pop,
            self.horizon,
            self.steps_per_day,
        )
        return s, i, r

    def simulate_batch(self, globals_, locals_, rng):
        rng = check_rng(rng)
        size, m = locals_.shape[0], locals_.shape[1]
        flat_locals = locals_.reshape(size * m, 3)
        reproduction = np.repeat(globals_[:, 0], m)
        pop = np.tile(self._populations(m), size)
        i0 = flat_locals[:, 0].copy()
        r0 = flat_locals[:, 1].copy()
        delta = flat_locals[:, 2].copy()
        s0 = pop - i0 - r0
        nu = delta / reproduction
        incidence = _integrate_sir(
            s0, i0, r0, delta, nu, pop, self.horizon, self.steps_per_day
        )
        if self.obs_noise_sd > 0:
            incidence = incidence + rng.normal(0.0, self.obs_noise_sd, incidence.shape)
        return incidence.reshape(size, m, self.horizon)

    def spec(self):
        pop = self.population
        if isinstance(pop, np.ndarray):
            pop = pop.tolist()
        return ModelSpec(
            self.name,
            self.d_glob,
            self.d_loc,
            self.n_obs,
            {
                "population": pop,
                "horizon": self.horizon,
                "steps_per_day": self.steps_per_day,
                "i0_range": list(self.i0_range),
                "r0init_range": list(self.r0init_range),
                "delta_range": list(self.delta_range),
                "reproduction_range": list(self.reproduction_range),
                "obs_noise_sd": self.obs_noise_sd,
            },
        )


# -- exact posterior descriptors -----------------------------------------


@dataclass(frozen=True)
class UniformBoxPosterior:
    """Independent uniform posteriors, one interval per compartment."""

    lower: np.ndarray
    upper: np.ndarray

    def cdf(self, k: int, x) -> np.ndarray:
        lo, hi = self.lower[k], self.upper[k]
        return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)

    def support(self, k: int):
        return float(self.lower[k]), float(self.upper[k])


@dataclass(frozen=True)
class GaussianPosterior:
    """Exact multivariate normal posterior with parameter order (global, locals)."""

    mean: np.ndarray
    covariance: np.ndarray

    def marginal(self, index: int):
        return float(self.mean[index]), float(math.sqrt(self.covariance[index, index]))

    def linear_combination(self, coefficients):
        """Mean and standard deviation of ``coefficients @ parameters``."""
        c = np.asarray(coefficients, dtype=float)
        return float(c @ self.mean), float(math.sqrt(c @ self.covariance @ c))


MODEL_REGISTRY = {
    UniformToy.name: UniformToy,
    GaussianHierarchy.name: GaussianHierarchy,
    RidgeGaussian.name: RidgeGaussian,
    SIRModel.name: SIRModel,
}


def build_model(name: str, hyperparameters: dict | None = None) -> Model:
    """Instantiate a registered model from its name and hyperparameters."""
    if name not in MODEL_REGISTRY:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ConfigurationError(f"unknown model {name!r}; known models: {known}")
    try:
        return MODEL_REGISTRY[name](**(hyperparameters or {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad hyperparameters for model {name!r}: {exc}") from exc
