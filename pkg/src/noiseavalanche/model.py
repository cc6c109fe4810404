"""Chain description shared by every solver.

Modes are indexed from 0 internally; user-facing output (CLI headers,
reports) uses 1-based indices so that mode 1 is the excited end of the chain.
A chain of ``n_modes`` modes has ``n_modes - 1`` links; link ``j`` couples
modes ``j`` and ``j + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KappaExceedsGamma, LengthMismatch, UnsupportedInitialState, ValidationError


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChainSpec:
    """Tight-binding chain with white-noise dephasing on every link.

    ``gamma[j]`` and ``kappa[j]`` are the strengths of the conjugate and
    non-conjugate noise correlations on link ``j``.
    """

    n_modes: int
    mean_couplings: np.ndarray
    gamma: np.ndarray
    kappa: np.ndarray

    def __init__(self, n_modes, mean_couplings=None, gamma=None, kappa=None):
        links = int(n_modes) - 1
        if mean_couplings is None:
            mean_couplings = np.zeros(max(links, 0))
        if gamma is None:
            gamma = np.zeros(max(links, 0))
        if kappa is None:
            kappa = np.zeros(max(links, 0))
        object.__setattr__(self, "n_modes", int(n_modes))
        object.__setattr__(self, "mean_couplings", _frozen(mean_couplings, complex))
        object.__setattr__(self, "gamma", _frozen(gamma, float))
        object.__setattr__(self, "kappa", _frozen(kappa, complex))

    @classmethod
    def uniform(cls, n_modes, gamma=1.0, kappa=0.0, coupling=0.0):
        links = n_modes - 1
        return cls(n_modes, [coupling] * links, [gamma] * links, [kappa] * links)

    @property
    def n_links(self) -> int:
        return self.n_modes - 1

    def is_circular_zero_mean(self, atol=0.0) -> bool:
        return bool(
            np.all(np.abs(self.mean_couplings) <= atol) and np.all(np.abs(self.kappa) <= atol)
        )

    def to_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "mean_couplings": [[c.real, c.imag] for c in self.mean_couplings],
            "gamma": self.gamma.tolist(),
            "kappa": [[c.real, c.imag] for c in self.kappa],
        }


def validate(spec: ChainSpec) -> None:
    """Raise if ``spec`` violates a model invariant; return ``None`` otherwise."""
    if spec.n_modes < 1:
        raise ValidationError(f"need at least one mode, got {spec.n_modes}")
    links = spec.n_modes - 1
    for name in ("mean_couplings", "gamma", "kappa"):
        got = len(getattr(spec, name))
        if got != links:
            raise LengthMismatch(f"{name} has length {got}, expected {links}")
    if np.any(spec.gamma < 0):
        raise ValidationError("gamma must be nonnegative")
    # tolerate rounding when kappa is computed from gamma
    slack = 1e-12 * np.maximum(spec.gamma, 1.0)
    for j, (k, g) in enumerate(zip(spec.kappa, spec.gamma)):
        if abs(k) > g + slack[j]:
            raise KappaExceedsGamma(j + 1, k, g)


def coupling_matrix(couplings) -> np.ndarray:
    """Single-particle hopping matrix with ``H[j, j+1] = v_j``."""
    v = np.asarray(couplings, dtype=complex).reshape(-1)
    m = v.size + 1
    h = np.zeros((m, m), dtype=complex)
    idx = np.arange(v.size)
    h[idx, idx + 1] = v
    h[idx + 1, idx] = v.conj()
    return h


@dataclass(frozen=True)
class InitialState:
    """Product of coherent states plus at most one single-photon mode."""

    coherent_amplitudes: np.ndarray
    fock_mode: int | None = None

    def __init__(self, coherent_amplitudes, fock_mode=None):
        alpha = _frozen(coherent_amplitudes, complex)
        if fock_mode is not None:
            fock_mode = int(fock_mode)
            if not 0 <= fock_mode < alpha.size:
                raise UnsupportedInitialState(f"fock_mode {fock_mode} outside chain")
            if alpha[fock_mode] != 0:
                raise UnsupportedInitialState(
                    f"mode {fock_mode} cannot be both coherent and single-photon"
                )
        object.__setattr__(self, "coherent_amplitudes", alpha)
        object.__setattr__(self, "fock_mode", fock_mode)

    @classmethod
    def coherent(cls, n_modes, amplitudes: dict, fock_mode=None):
        """Build from a sparse ``{mode: alpha}`` mapping (0-based)."""
        alpha = np.zeros(n_modes, dtype=complex)
        for j, a in amplitudes.items():
            alpha[j] = a
        return cls(alpha, fock_mode)

    @property
    def n_modes(self) -> int:
        return self.coherent_amplitudes.size

    def photons(self) -> np.ndarray:
        n = np.abs(self.coherent_amplitudes) ** 2
        if self.fock_mode is not None:
            n[self.fock_mode] += 1.0
        return n

    def to_dict(self) -> dict:
        return {
            "coherent_amplitudes": [[a.real, a.imag] for a in self.coherent_amplitudes],
            "fock_mode": self.fock_mode,
        }


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_steps: int
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValidationError(f"t_max must be positive, got {self.t_max}")
        if int(self.n_steps) < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_max", float(self.t_max))
        times = np.arange(self.n_steps + 1) * self.dt
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps
