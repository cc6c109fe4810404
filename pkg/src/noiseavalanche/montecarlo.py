"""Ensemble route: unitary evolution under sampled piecewise-constant couplings.

Each realization draws one coupling per link and per noise interval,
``v = v_mean + sigma * (x + i * nu * y)`` with ``x, y`` standard normal, and
propagates the single-particle evolution matrix ``S``. For an input made of
coherent amplitudes plus at most one single photon, the per-realization
quantum expectations are closed-form in ``beta = S @ alpha`` and
``s = S[:, m0]``:

    n_j  = |beta_j|^2 + |s_j|^2
    G2_j = |beta_j|^4 + 4 |beta_j|^2 |s_j|^2

Classical averages of ``n`` and ``G2`` are formed separately and g2 is their
ratio. Ensembles propagate ``beta`` and ``s`` directly with
:func:`propagator.taylor_apply`, which keeps the tiny amplitudes of far modes
accurate to round-off relative to their own size; :func:`run_realization`
builds ``S`` itself and serves as the reference.

Reproducibility: realization ``k`` owns the random stream
``SeedSequence(base_seed, spawn_key=(k,))`` and consumes it in
(interval, link, component) order. Realizations are grouped into chunks of a
fixed size that does not depend on the worker count, and chunk statistics
are merged in chunk order, so results are bitwise identical for any number
of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import propagator
from .analytics import avalanche_rate, gaussian_link_moments, general_short_time_g2
from .errors import DimensionMismatch, InsufficientRealizations, UnsupportedInitialState, ValidationError
from .model import ChainSpec, InitialState, TimeGrid, coupling_matrix
from .moments import g2_ratio

CHUNK_SIZE = 512
# products of amplitudes keep full relative precision, so only a true zero is undefined
G2_FLOOR = 1e-300
WORKERS_ENV = "NOISEAVALANCHE_WORKERS"


@dataclass(frozen=True)
class NoiseSpec:
    mean_couplings: np.ndarray
    sigma: float
    ellipticity: float
    dt: float

    def __init__(self, mean_couplings, sigma, ellipticity, dt):
        v = np.array(mean_couplings, dtype=complex).reshape(-1)
        v.setflags(write=False)
        if sigma < 0 or ellipticity < 0:
            raise ValidationError("sigma and ellipticity must be nonnegative")
        if not dt > 0:
            raise ValidationError(f"noise interval must be positive, got {dt}")
        object.__setattr__(self, "mean_couplings", v)
        object.__setattr__(self, "sigma", float(sigma))
        object.__setattr__(self, "ellipticity", float(ellipticity))
        object.__setattr__(self, "dt", float(dt))

    @property
    def n_modes(self) -> int:
        return self.mean_couplings.size + 1

    def to_dict(self) -> dict:
        return {
            "mean_couplings": [[c.real, c.imag] for c in self.mean_couplings],
            "sigma": self.sigma,
            "ellipticity": self.ellipticity,
            "dt": self.dt,
        }


def gamma_kappa_of_noise(noise: NoiseSpec, convention: str = "master") -> tuple:
    """White-noise rates ``(gamma, kappa)`` equivalent to ``noise``.

    ``"master"`` matches the rates of the master equation as written, whose
    population transfer between neighbours is ``2*gamma`` per unit time:
    ``gamma = sigma^2 (1 + nu^2) dt / 2`` and ``kappa = sigma^2 (1 - nu^2) dt / 2``.
    ``"sigma2dt"`` is the looser rule ``gamma = sigma^2 dt`` with the same
    ``kappa / gamma``; it sets the time scale only roughly and is kept for
    comparison.
    """
    s2, nu2, dt = noise.sigma**2, noise.ellipticity**2, noise.dt
    if convention == "master":
        return 0.5 * s2 * (1 + nu2) * dt, 0.5 * s2 * (1 - nu2) * dt
    if convention == "sigma2dt":
        gamma = s2 * dt
        return gamma, gamma * (1 - nu2) / (1 + nu2)
    raise ValueError(f"unknown convention {convention!r}")


def noise_for_rate(gamma, nu, dt, mean_couplings, convention="master") -> NoiseSpec:
    """Inverse of :func:`gamma_kappa_of_noise`: the ``sigma`` giving rate ``gamma``."""
    if convention == "master":
        sigma = math.sqrt(2.0 * gamma / ((1.0 + nu * nu) * dt))
    elif convention == "sigma2dt":
        sigma = math.sqrt(gamma / dt)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return NoiseSpec(mean_couplings, sigma, nu, dt)


def chain_spec_of_noise(noise: NoiseSpec, convention="master") -> ChainSpec:
    gamma, kappa = gamma_kappa_of_noise(noise, convention)
    links = noise.n_modes - 1
    return ChainSpec(noise.n_modes, noise.mean_couplings, [gamma] * links, [kappa] * links)


def realization_rng(base_seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed, spawn_key=(k,))))


def sample_couplings(noise: NoiseSpec, rng: np.random.Generator, n_intervals: int) -> np.ndarray:
    """Couplings of shape ``(n_intervals, n_links)`` drawn from one stream."""
    z = rng.standard_normal((n_intervals, noise.mean_couplings.size, 2))
    return noise.mean_couplings + noise.sigma * (z[..., 0] + 1j * noise.ellipticity * z[..., 1])


def _intervals(noise: NoiseSpec, grid: TimeGrid) -> tuple:
    """``(n_intervals, substeps)``: output grid steps per noise interval."""
    ratio = noise.dt / grid.dt
    sub = int(round(ratio))
    if sub < 1 or abs(ratio - sub) > 1e-9 * ratio:
        raise ValidationError(
            f"noise interval {noise.dt} must be an integer multiple of the grid step {grid.dt}"
        )
    if grid.n_steps % sub:
        raise ValidationError(f"grid of {grid.n_steps} steps is not a whole number of noise intervals")
    return grid.n_steps // sub, sub


def _check_init(noise: NoiseSpec, init: InitialState):
    if init.n_modes != noise.n_modes:
        raise DimensionMismatch(f"initial state has {init.n_modes} modes, noise {noise.n_modes}")


def run_realization(noise: NoiseSpec, init: InitialState, grid: TimeGrid, k: int, base_seed: int = 0):
    """Coherent and photon components ``(beta, s)`` at every grid time, shape ``(T+1, M)``.

    Builds the evolution matrix by composing exact per-interval steps.
    """
    _check_init(noise, init)
    n_int, sub = _intervals(noise, grid)
    couplings = sample_couplings(noise, realization_rng(base_seed, k), n_int)
    m = noise.n_modes
    alpha = init.coherent_amplitudes
    evo = propagator.identity(m)
    beta = np.empty((grid.n_steps + 1, m), dtype=complex)
    s = np.zeros((grid.n_steps + 1, m), dtype=complex)
    row = 0

    def record():
        beta[row] = propagator.apply(evo, alpha)
        if init.fock_mode is not None:
            s[row] = evo.matrix[:, init.fock_mode]

    record()
    for c in couplings:
        step = propagator.expm_unitary(coupling_matrix(c), grid.dt)
        for _ in range(sub):
            evo = propagator.compose(step, evo)
            row += 1
            record()
    return beta, s


def observables_of_realization(beta, s) -> tuple:
    """Per-mode ``(n, G2)`` for coherent part ``beta`` and photon amplitudes ``s``."""
    b2 = np.abs(beta) ** 2
    s2 = np.abs(s) ** 2
    return b2 + s2, b2 * b2 + 4.0 * b2 * s2


@dataclass
class EnsembleEstimate:
    """Classical means over ``K`` realizations with standard errors of the means."""

    times: np.ndarray
    n_mean: np.ndarray
    G_mean: np.ndarray
    n_se: np.ndarray
    G_se: np.ndarray
    nG_cov: np.ndarray
    K: int
    base_seed: int

    @property
    def g2(self) -> np.ndarray:
        return g2_ratio(self.G_mean, self.n_mean, floor=G2_FLOOR)

    @property
    def g2_se(self) -> np.ndarray:
        """Delta-method error of ``G_mean / n_mean**2`` including the n-G covariance."""
        n, G = self.n_mean, self.G_mean
        with np.errstate(divide="ignore", invalid="ignore"):
            dg_dG = 1.0 / n**2
            dg_dn = -2.0 * G / n**3
            var = dg_dG**2 * self.G_se**2 + dg_dn**2 * self.n_se**2 + 2 * dg_dG * dg_dn * self.nG_cov
            se = np.sqrt(np.maximum(var, 0.0))
        se[~np.isfinite(self.g2)] = np.nan
        return se


@dataclass
class _Moments:
    """Running count, means, centred second moments and n-G co-moment."""

    count: int
    n: np.ndarray
    G: np.ndarray
    m2n: np.ndarray
    m2G: np.ndarray
    cnG: np.ndarray

    @classmethod
    def of_samples(cls, n, G):
        # n, G: (k, T+1, M)
        mn, mG = n.mean(axis=0), G.mean(axis=0)
        dn, dG = n - mn, G - mG
        return cls(n.shape[0], mn, mG, (dn * dn).sum(0), (dG * dG).sum(0), (dn * dG).sum(0))

    def merge(self, other: "_Moments") -> "_Moments":
        na, nb = self.count, other.count
        tot = na + nb
        dn, dG = other.n - self.n, other.G - self.G
        w = na * nb / tot
        return _Moments(
            tot,
            self.n + dn * (nb / tot),
            self.G + dG * (nb / tot),
            self.m2n + other.m2n + dn * dn * w,
            self.m2G + other.m2G + dG * dG * w,
            self.cnG + other.cnG + dn * dG * w,
        )


def _propagate_chunk(noise, init, grid, base_seed, k0, k1):
    """Samples ``(n, G)`` of shape ``(k1 - k0, T+1, M)`` for realizations ``k0..k1-1``."""
    n_int, sub = _intervals(noise, grid)
    couplings = np.stack(
        [sample_couplings(noise, realization_rng(base_seed, k), n_int) for k in range(k0, k1)]
    )
    kk, m = k1 - k0, noise.n_modes
    vecs = np.zeros((kk, 2, m), dtype=complex)
    vecs[:, 0] = init.coherent_amplitudes
    has_photon = init.fock_mode is not None
    if has_photon:
        vecs[:, 1, init.fock_mode] = 1.0
    n = np.empty((kk, grid.n_steps + 1, m))
    G = np.empty_like(n)
    n[:, 0], G[:, 0] = observables_of_realization(vecs[:, 0], vecs[:, 1])
    width = 2 if has_photon else 1
    row = 0
    for i in range(n_int):
        # two modes: the closed-form rotation is already exact to relative precision
        steps = propagator.tridiagonal_steps(couplings[:, i], grid.dt)[:, None] if m == 2 else None
        for _ in range(sub):
            if steps is not None:
                vecs[:, :width] = propagator.batched_apply(steps, vecs[:, :width])
            else:
                vecs[:, :width] = propagator.taylor_apply(couplings[:, i], vecs[:, :width], grid.dt)
            row += 1
            n[:, row], G[:, row] = observables_of_realization(vecs[:, 0], vecs[:, 1])
    return n, G


def _chunk_moments(args) -> _Moments:
    n, G = _propagate_chunk(*args)
    return _Moments.of_samples(n, G)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def estimate(
    noise: NoiseSpec,
    init: InitialState,
    grid: TimeGrid,
    K: int,
    base_seed: int = 0,
    workers: int | None = None,
    progress=None,
    chunk_size: int = CHUNK_SIZE,
) -> EnsembleEstimate:
    """Ensemble means of ``n_j(t)`` and ``G2_j(t)`` over ``K`` realizations.

    ``progress(done)`` is called after each merged chunk with the number of
    realizations accumulated so far.
    """
    if K < 2:
        raise InsufficientRealizations(f"need at least 2 realizations, got {K}")
    _check_init(noise, init)
    _intervals(noise, grid)
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = [
        (noise, init, grid, base_seed, k0, min(k0 + chunk_size, K)) for k0 in range(0, K, chunk_size)
    ]
    total = None

    def fold(parts):
        nonlocal total
        for part in parts:
            total = part if total is None else total.merge(part)
            if progress is not None:
                progress(total.count)

    if workers == 1 or len(tasks) == 1:
        fold(map(_chunk_moments, tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fold(pool.map(_chunk_moments, tasks))

    var_n = total.m2n / (K - 1)
    var_G = total.m2G / (K - 1)
    cov = total.cnG / (K - 1)
    return EnsembleEstimate(
        times=grid.times.copy(),
        n_mean=total.n,
        G_mean=total.G,
        n_se=np.sqrt(var_n / K),
        G_se=np.sqrt(var_G / K),
        nG_cov=cov / K,
        K=K,
        base_seed=base_seed,
    )


def short_time_prediction(noise: NoiseSpec, j: int) -> float:
    """Predicted g2 of the mode ``j`` links downstream of a coherent source, at ``t ~ j dt``."""
    return avalanche_rate(noise.ellipticity) ** j


def short_time_prediction_general(noise: NoiseSpec, j: int) -> float:
    """Same estimate from exact Gaussian link moments, including nonzero mean couplings."""
    m2, m4 = zip(*(gaussian_link_moments(v, noise.sigma, noise.ellipticity) for v in noise.mean_couplings[:j]))
    return general_short_time_g2(m4, m2)


def sample_size_planner(j: int, nu: float, base_K: int = 1) -> int:
    """Realizations needed at mode ``j`` links from the source for the variance ``base_K`` gives at the source."""
    if j < 0:
        raise ValidationError("mode distance must be nonnegative")
    x = avalanche_rate(nu)
    return int(math.ceil(base_K * (j + 1) * x ** (2 * j)))
