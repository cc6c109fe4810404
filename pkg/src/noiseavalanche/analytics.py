"""Closed-form predictions for jumps, asymptotes and avalanche growth."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import OutOfValidity, SlowConvergenceWarning, WrongLayout, ZeroSecondMoment

SLOW_CONVERGENCE_BAND = 0.05


@dataclass(frozen=True)
class Prediction:
    name: str
    value: float
    validity: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"prediction {self.name} is not finite")
        if not self.validity:
            raise ValueError("validity domain must be described")


def jump_g2(kappa: float, gamma: float) -> float:
    """Short-time g2 of a mode that starts in vacuum next to a coherent one."""
    if isinstance(kappa, complex) or np.iscomplexobj(kappa):
        if np.imag(kappa) != 0:
            raise OutOfValidity("jump formula holds for real kappa only")
        kappa = float(np.real(kappa))
    if not gamma > 0:
        raise OutOfValidity(f"gamma must be positive, got {gamma}")
    if abs(kappa) > gamma:
        raise OutOfValidity(f"|kappa| = {abs(kappa)} exceeds gamma = {gamma}")
    return 2.0 + kappa**2 / gamma**2


def two_mode_asymptote(kappa, gamma: float) -> float:
    """Long-time g2 of both modes of a two-mode chain: 3/2 at kappa = gamma, else 4/3."""
    if not gamma > 0:
        raise OutOfValidity(f"gamma must be positive, got {gamma}")
    ratio = abs(kappa) / gamma
    if kappa == gamma:
        return 1.5
    if abs(ratio - 1.0) < SLOW_CONVERGENCE_BAND:
        warnings.warn(
            f"kappa/gamma = {ratio:.3f}: g2 relaxes toward 4/3 very slowly and "
            "stays near 3/2 over any practical time window",
            SlowConvergenceWarning,
            stacklevel=2,
        )
    return 4.0 / 3.0


def nmode_asymptote(n_modes: int) -> float:
    """Long-time g2 for circular noise on an ``n_modes`` chain: ``2M/(M+1)``.

    This is the photon-number-sector uniform mixture value; it gives 4/3 at
    ``M = 2`` and tends to the thermal 2 for long chains.
    """
    if n_modes < 2:
        raise OutOfValidity("need at least two modes")
    return 2.0 * n_modes / (n_modes + 1)


def avalanche_rate(nu: float) -> float:
    """Per-link growth factor of the short-time g2 for Gaussian coupling noise."""
    if nu < 0:
        raise OutOfValidity("ellipticity must be nonnegative")
    nu2 = nu * nu
    return 2.0 + (1.0 - nu2) ** 2 / (1.0 + nu2) ** 2


def general_short_time_g2(fourth_moments, second_moments) -> float:
    """``prod <|v_l|^4> / (prod <|v_l|^2>)^2`` over the links between source and mode."""
    m4 = np.asarray(fourth_moments, dtype=float)
    m2 = np.asarray(second_moments, dtype=float)
    if m4.shape != m2.shape:
        raise ValueError("moment lists differ in length")
    if np.any(m2 <= 0):
        raise ZeroSecondMoment("every link needs a positive second moment")
    return float(np.prod(m4 / m2**2))


def gaussian_link_moments(mean: complex, sigma: float, nu: float) -> tuple:
    """``(<|v|^2>, <|v|^4>)`` for ``v = mean + sigma (x + i nu y)``, x, y standard normal."""
    a, b = float(np.real(mean)), float(np.imag(mean))
    sx2, sy2 = sigma**2, (nu * sigma) ** 2
    # |v|^2 = X^2 + Y^2 with X ~ N(a, sx2), Y ~ N(b, sy2) independent
    ex2, ey2 = a * a + sx2, b * b + sy2
    ex4 = a**4 + 6 * a * a * sx2 + 3 * sx2 * sx2
    ey4 = b**4 + 6 * b * b * sy2 + 3 * sy2 * sy2
    return ex2 + ey2, ex4 + 2 * ex2 * ey2 + ey4


def conserved_P(phi) -> float:
    """``<n1(n1-1)> + <n2(n2-1)> + 2<n1 n2>`` from the nine-component two-mode vector."""
    phi = np.asarray(phi)
    if phi.shape[-1] != 9:
        raise WrongLayout(f"expected the 9-component two-mode layout, got {phi.shape[-1]}")
    return phi[..., 0] + phi[..., 1] + 2 * phi[..., 2]


def predictions(kappa: float, gamma: float, nu: float, n_modes: int) -> list:
    """Bundle of predictions reported alongside simulation output."""
    out = []
    if gamma > 0 and abs(kappa) <= gamma:
        out.append(Prediction("jump_g2", jump_g2(kappa, gamma), "real kappa, initially empty neighbour"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SlowConvergenceWarning)
            out.append(Prediction("two_mode_asymptote", two_mode_asymptote(kappa, gamma), "two modes, t -> infinity"))
    if n_modes >= 2:
        out.append(Prediction("nmode_asymptote", nmode_asymptote(n_modes), "circular noise, zero mean couplings, t -> infinity"))
    out.append(Prediction("avalanche_rate", avalanche_rate(nu), "Gaussian noise, zero mean couplings, t ~ j dt"))
    return out
