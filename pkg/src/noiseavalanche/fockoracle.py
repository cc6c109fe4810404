"""Exact reference dynamics on a truncated Fock space.

Two routes are provided for small chains: Schrödinger evolution of a pure
state under one realization of piecewise-constant couplings, and direct
integration of the dephasing master equation for the density matrix.
All chain operators conserve the total photon number, so in the
``total``-restricted basis (occupations with ``sum <= n_max``) the
number-conserving operators are exact, not truncated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CutoffTailTooLarge, DimensionMismatch, DimensionTooLarge, PositivityViolation, ValidationError
from .model import ChainSpec, TimeGrid
from .moments import g2_ratio, solve_linear_ode

MAX_LINDBLAD_DIM = 400
TAIL_ABORT = 1e-4


class FockBasis:
    """Ordered enumeration of occupation tuples with index lookup.

    ``total=True`` keeps tuples with ``sum(occ) <= n_max``; otherwise every
    mode is cut at ``n_max`` independently.
    """

    def __init__(self, n_modes: int, n_max: int, total: bool = True):
        self.n_modes = int(n_modes)
        self.n_max = int(n_max)
        self.total = bool(total)
        states = itertools.product(range(self.n_max + 1), repeat=self.n_modes)
        if self.total:
            states = (s for s in states if sum(s) <= self.n_max)
        self.states = list(states)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.occupations = np.array(self.states, dtype=float).reshape(len(self.states), self.n_modes)

    @property
    def dim(self) -> int:
        return len(self.states)

    def top_layer(self) -> np.ndarray:
        """Mask of basis states that sit on the cutoff."""
        occ = self.occupations
        if self.total:
            return occ.sum(axis=1) == self.n_max
        return np.any(occ == self.n_max, axis=1)


@dataclass
class Operators:
    a: list
    adag: list


def _hop(basis: FockBasis, i: int, j: int) -> sp.csr_matrix:
    """Exact ``a_i^dagger a_j`` on the basis (number conserving, no truncation)."""
    rows, cols, vals = [], [], []
    for col, occ in enumerate(basis.states):
        if occ[j] == 0:
            continue
        new = list(occ)
        amp = math.sqrt(new[j])
        new[j] -= 1
        new[i] += 1
        amp *= math.sqrt(new[i])
        row = basis.index.get(tuple(new))
        if row is not None:
            rows.append(row)
            cols.append(col)
            vals.append(amp)
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex)


def build_operators(basis: FockBasis) -> Operators:
    """Ladder operators ``a_j``, ``a_j^dagger`` as sparse matrices."""
    a = []
    for j in range(basis.n_modes):
        rows, cols, vals = [], [], []
        for col, occ in enumerate(basis.states):
            if occ[j] == 0:
                continue
            new = list(occ)
            new[j] -= 1
            rows.append(basis.index[tuple(new)])
            cols.append(col)
            vals.append(math.sqrt(occ[j]))
        a.append(sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex))
    return Operators(a, [x.conj().T.tocsr() for x in a])


def many_body_hamiltonian(basis: FockBasis, couplings) -> sp.csr_matrix:
    v = np.asarray(couplings, dtype=complex)
    if v.size != basis.n_modes - 1:
        raise DimensionMismatch(f"{v.size} couplings for {basis.n_modes} modes")
    h = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for j, c in enumerate(v):
        hop = _hop(basis, j, j + 1)
        h = h + c * hop + np.conj(c) * hop.conj().T
    return h.tocsr()


# --- states -------------------------------------------------------------------


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    mag = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * logfact) * np.abs(alpha) ** n if alpha != 0 else (n == 0).astype(float)
    return mag * np.exp(1j * np.angle(alpha) * n)


def product_state(basis: FockBasis, alphas, fock_modes=()) -> tuple:
    """Normalised truncated product of coherent states and single photons.

    Returns ``(psi, tail)`` where ``tail`` is the probability dropped by
    the truncation.
    """
    alphas = np.asarray(alphas, dtype=complex)
    per_mode = []
    for j in range(basis.n_modes):
        if j in fock_modes:
            amp = np.zeros(basis.n_max + 1, dtype=complex)
            amp[1] = 1.0
        else:
            amp = coherent_amplitudes(alphas[j], basis.n_max)
        per_mode.append(amp)
    psi = np.array([np.prod([per_mode[j][o] for j, o in enumerate(occ)]) for occ in basis.states])
    norm2 = float(np.vdot(psi, psi).real)
    tail = max(0.0, 1.0 - norm2)
    return psi / math.sqrt(norm2), tail


@dataclass
class DensityMatrix:
    rho: np.ndarray

    def check(self, herm_tol=1e-10, trace_tol=1e-8, pos_tol=1e-8):
        r = self.rho
        herm = float(np.max(np.abs(r - r.conj().T)))
        if herm > herm_tol:
            raise PositivityViolation(f"density matrix not Hermitian: {herm:.2e}")
        tr = np.trace(r).real
        if abs(tr - 1.0) > trace_tol:
            raise PositivityViolation(f"trace drifted to {tr!r}")
        low = float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0])
        if low < -pos_tol:
            raise PositivityViolation(f"negative eigenvalue {low:.3e} (integration error)")
        return self

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()))


# --- dynamics -------------------------------------------------------------------


def evolve_schrodinger(basis: FockBasis, couplings, psi0, grid: TimeGrid, substeps: int = 1) -> np.ndarray:
    """Pure-state trajectory, shape ``(T+1, D)``.

    ``couplings`` has one row per noise interval; each interval spans
    ``substeps`` grid steps. With a per-mode cutoff the run aborts once the
    population on the cutoff exceeds ``TAIL_ABORT``; the ``total`` basis is
    closed under the dynamics and needs no such check.
    """
    couplings = np.atleast_2d(np.asarray(couplings, dtype=complex))
    psi = np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-8:
        raise ValidationError("initial state is not normalised")
    if couplings.shape[0] * substeps != grid.n_steps:
        raise DimensionMismatch(
            f"{couplings.shape[0]} intervals x {substeps} substeps != {grid.n_steps} grid steps"
        )
    top = basis.top_layer() if not basis.total else np.zeros(basis.dim, bool)
    if np.sum(np.abs(psi[top]) ** 2) > TAIL_ABORT:
        raise CutoffTailTooLarge("initial state reaches the Fock cutoff")
    out = np.empty((grid.n_steps + 1, basis.dim), dtype=complex)
    out[0] = psi
    row = 0
    for c in couplings:
        h = many_body_hamiltonian(basis, c).toarray()
        w, u = np.linalg.eigh(h)
        step = (u * np.exp(-1j * w * grid.dt)) @ u.conj().T
        for _ in range(substeps):
            psi = step @ psi
            row += 1
            out[row] = psi
    leak = float(np.max(np.sum(np.abs(out[:, top]) ** 2, axis=1)))
    if leak > TAIL_ABORT:
        raise CutoffTailTooLarge(f"population {leak:.2e} on the Fock cutoff")
    return out


def lindblad_rhs(spec: ChainSpec, basis: FockBasis):
    """Right-hand side of the dephasing master equation on flattened ``rho``.

    ``d rho/dt = -i[H0, rho] - sum_j (D_j rho + rho D_j)
                 + 2 sum_j (k_j L rho L + k_j* L+ rho L+ + g_j (L rho L+ + L+ rho L))``
    with ``L_j = a_j+ a_{j+1}`` and ``D_j = k_j L^2 + k_j* L+^2 + g_j (L L+ + L+ L)``.
    """
    d = basis.dim
    h0 = many_body_hamiltonian(basis, spec.mean_couplings)
    terms = []
    dsum = sp.csr_matrix((d, d), dtype=complex)
    for j in range(spec.n_links):
        g, k = float(spec.gamma[j]), complex(spec.kappa[j])
        L = _hop(basis, j, j + 1)
        Ld = L.conj().T.tocsr()
        dsum = dsum + k * (L @ L) + np.conj(k) * (Ld @ Ld) + g * (L @ Ld + Ld @ L)
        terms.append((g, k, L, Ld))
    # -i H0 rho + i rho H0 - D rho - rho D = K rho + rho K^dagger with K = -iH0 - D
    kmat = (-1j * h0 - dsum).tocsr()
    kdag = kmat.conj().T.tocsr()

    def right(x, m):
        # x @ m for dense x and sparse m
        return (m.T @ x.T).T

    def rhs(_t, y):
        rho = y.reshape(d, d)
        out = kmat @ rho + right(rho, kdag)
        for g, k, L, Ld in terms:
            if k != 0:
                out += 2 * k * right(L @ rho, L) + 2 * np.conj(k) * right(Ld @ rho, Ld)
            if g != 0:
                out += 2 * g * (right(L @ rho, Ld) + right(Ld @ rho, L))
        return out.reshape(-1)

    return rhs


def evolve_lindblad(spec: ChainSpec, rho0: DensityMatrix, grid: TimeGrid, basis: FockBasis, check=True) -> np.ndarray:
    """Density-matrix trajectory, shape ``(T+1, D, D)``."""
    if basis.n_modes != spec.n_modes:
        raise DimensionMismatch(f"basis has {basis.n_modes} modes, chain has {spec.n_modes}")
    if spec.n_modes > 3 or basis.dim > MAX_LINDBLAD_DIM:
        raise DimensionTooLarge(
            f"Lindblad oracle is limited to 3 modes and dimension {MAX_LINDBLAD_DIM} (got {spec.n_modes}, {basis.dim})"
        )
    rho = np.asarray(rho0.rho, dtype=complex)
    if rho.shape != (basis.dim, basis.dim):
        raise DimensionMismatch(f"rho has shape {rho.shape}, basis dimension {basis.dim}")
    traj = solve_linear_ode(lindblad_rhs(spec, basis), rho.reshape(-1), grid.times, rtol=1e-10, atol=1e-14)
    traj = traj.reshape(-1, basis.dim, basis.dim)
    if check:
        for r in traj:
            DensityMatrix(r).check()
    return traj


# --- observables -------------------------------------------------------------------


def expectations(state, basis: FockBasis) -> tuple:
    """Per-mode ``(n, G2, g2)`` for a state vector or a :class:`DensityMatrix`.

    Both ``a+ a`` and ``a+ a+ a a`` are diagonal in the occupation basis, so
    only populations are needed. Trajectories go through
    :func:`state_expectations` / :func:`density_expectations`.
    """
    if isinstance(state, DensityMatrix):
        return density_expectations(state.rho, basis)
    psi = np.asarray(state)
    if psi.ndim != 1:
        raise DimensionMismatch("pass a state vector or a DensityMatrix")
    if psi.size != basis.dim:
        raise DimensionMismatch(f"state of size {psi.size} for basis of {basis.dim}")
    return state_expectations(psi, basis)


def density_expectations(rho, basis: FockBasis) -> tuple:
    probs = np.real(np.diagonal(np.asarray(rho), axis1=-2, axis2=-1))
    occ = basis.occupations
    n = probs @ occ
    G = probs @ (occ * (occ - 1))
    return n, G, g2_ratio(G, n)


def state_expectations(psi, basis: FockBasis) -> tuple:
    probs = np.abs(np.asarray(psi)) ** 2
    occ = basis.occupations
    n = probs @ occ
    G = probs @ (occ * (occ - 1))
    return n, G, g2_ratio(G, n)
