"""Exact single-particle steps ``exp(-i H dt)`` for Hermitian hopping matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotHermitian

HERMITIAN_ATOL = 1e-12
UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class UnitaryStep:
    matrix: np.ndarray
    dt: float
    tolerance: float = UNITARY_TOL

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def defect(self) -> float:
        """Largest entry of ``S^dagger S - I``."""
        s = self.matrix
        return float(np.max(np.abs(s.conj().T @ s - np.eye(self.dim))))

    @property
    def H(self) -> "UnitaryStep":
        return UnitaryStep(self.matrix.conj().T, -self.dt, self.tolerance)


def expm_unitary(h, dt: float) -> UnitaryStep:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {h.shape}")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > HERMITIAN_ATOL:
        raise NotHermitian("generator is not Hermitian within 1e-12")
    w, u = np.linalg.eigh(h)
    s = (u * np.exp(-1j * w * dt)) @ u.conj().T
    return UnitaryStep(s, float(dt))


def apply(step: UnitaryStep, vector) -> np.ndarray:
    vec = np.asarray(vector, dtype=complex)
    if vec.shape != (step.dim,):
        raise DimensionMismatch(f"vector of shape {vec.shape} for a {step.dim}-mode step")
    return step.matrix @ vec


def compose(a: UnitaryStep, b: UnitaryStep) -> UnitaryStep:
    """Return ``a @ b``: ``b`` acts first."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot compose {a.dim}x{a.dim} with {b.dim}x{b.dim}")
    return UnitaryStep(a.matrix @ b.matrix, a.dt + b.dt, max(a.tolerance, b.tolerance))


def identity(dim: int) -> UnitaryStep:
    return UnitaryStep(np.eye(dim, dtype=complex), 0.0)


def tridiagonal_steps(couplings, dt: float) -> np.ndarray:
    """Batched ``exp(-i H dt)`` for hopping matrices given by their links.

    ``couplings`` has shape ``(..., M - 1)``; the result has shape
    ``(..., M, M)``. A diagonal gauge ``H = P T P^dagger`` moves the link
    phases into ``P`` so only the real symmetric ``T`` (built from
    ``|v_j|``) is diagonalised. Each matrix in the batch is computed
    independently, so results do not depend on how a batch is split.
    """
    v = np.asarray(couplings, dtype=complex)
    batch = v.shape[:-1]
    m = v.shape[-1] + 1
    if m == 1:
        return np.ones(batch + (1, 1), dtype=complex)
    r = np.abs(v)
    theta = np.zeros(batch + (m,))
    # P T P^dagger has (j, j+1) entry exp(i(theta_j - theta_{j+1})) r_j
    theta[..., 1:] = -np.cumsum(np.angle(v), axis=-1)
    if m == 2:
        c = np.cos(r[..., 0] * dt)
        s = -1j * np.sin(r[..., 0] * dt)
        core = np.empty(batch + (2, 2), dtype=complex)
        core[..., 0, 0] = c
        core[..., 1, 1] = c
        core[..., 0, 1] = s
        core[..., 1, 0] = s
    else:
        t = np.zeros(batch + (m, m))
        idx = np.arange(m - 1)
        t[..., idx, idx + 1] = r
        t[..., idx + 1, idx] = r
        w, u = np.linalg.eigh(t)
        phase = np.exp(-1j * w * dt)
        # elementwise products keep the reduction order fixed per matrix
        core = np.sum(u[..., :, None, :] * phase[..., None, None, :] * u[..., None, :, :], axis=-1)
    p = np.exp(1j * theta)
    return p[..., :, None] * core * p.conj()[..., None, :]


def batched_apply(steps: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Row-wise matrix-vector products for stacks of steps and vectors."""
    return np.sum(steps * vectors[..., None, :], axis=-1)


def taylor_apply(couplings, vectors, dt: float, extra_terms: int = 20) -> np.ndarray:
    """Apply ``exp(-i H dt)`` to stacks of vectors without forming the matrix.

    ``couplings`` has shape ``(K, M - 1)`` and ``vectors`` shape ``(K, V, M)``.
    The Taylor series is summed with tridiagonal matrix-vector products; each
    realization is split into ``ceil(2 max|v| dt / 0.5)`` substeps. Unlike an
    eigendecomposition, whose error is absolute (about 1e-16 of the norm), the
    series keeps the relative precision of components far from the excitation,
    which are products of small hopping amplitudes. ``M - 1 + extra_terms``
    terms reach every mode plus a truncation margin below round-off.
    """
    v = np.asarray(couplings, dtype=complex)
    x = np.asarray(vectors, dtype=complex)
    m = x.shape[-1]
    if v.shape[-1] != m - 1 or v.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"couplings {v.shape} do not match vectors {x.shape}")
    nsub = np.maximum(1, np.ceil(2 * np.max(np.abs(v), axis=-1, initial=0.0) * dt / 0.5)).astype(int)
    h = (dt / nsub)[:, None, None]
    vv, vc = v[:, None, :], v.conj()[:, None, :]
    out = x.copy()
    for it in range(int(nsub.max(initial=1))):
        active = (nsub > it)[:, None, None]
        term, acc = out, out.copy()
        for k in range(1, m + extra_terms):
            hx = np.zeros_like(term)
            hx[..., :-1] += vv * term[..., 1:]
            hx[..., 1:] += vc * term[..., :-1]
            term = (-1j / k) * h * hx
            acc = acc + term
        # masked update keeps each realization independent of its batch
        out = np.where(active, acc, out)
    return out
