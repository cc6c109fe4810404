"""Closed linear systems for operator averages under the dephasing master equation.

Every label is a normal-ordered monomial ``a†_{c1} a†_{c2} ... a_{d1} a_{d2} ...``
stored as a pair of mode tuples, which is all :func:`init_moments` needs
to evaluate initial values in any product state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import DOP853

from .errors import (
    DegenerateWithoutInit,
    DimensionMismatch,
    RequiresCircularZeroMean,
    SlowConvergenceWarning,
    StiffnessFailure,
    UnsupportedInitialState,
    WrongLayout,
    WrongModeCount,
)
from .model import ChainSpec, InitialState, TimeGrid

RTOL = 1e-9
G2_FLOOR = 1e-30


def _monomial_label(cre, ann) -> str:
    ops = [f"a{j + 1}+" for j in cre] + [f"a{j + 1}" for j in ann]
    return "<" + " ".join(ops) + ">"


@dataclass(frozen=True)
class MomentSystem:
    """``d(phi)/dt = generator @ phi`` over the averages named by ``labels``."""

    labels: tuple
    monomials: tuple
    generator: np.ndarray
    hermitian_pairs: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if self.generator.shape != (n, n) or len(self.monomials) != n:
            raise DimensionMismatch(
                f"generator {self.generator.shape} does not match {n} labels"
            )

    @classmethod
    def from_monomials(cls, monomials, generator, labels=None):
        monomials = tuple((tuple(c), tuple(a)) for c, a in monomials)
        if labels is None:
            labels = tuple(_monomial_label(c, a) for c, a in monomials)
        pairs = {}
        for i, (c, a) in enumerate(monomials):
            conj = (tuple(sorted(a)), tuple(sorted(c)))
            for j, (c2, a2) in enumerate(monomials):
                if (tuple(sorted(c2)), tuple(sorted(a2))) == conj:
                    pairs[i] = j
                    break
        return cls(tuple(labels), monomials, np.asarray(generator), pairs)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index_of(self, cre, ann) -> int | None:
        key = (tuple(sorted(cre)), tuple(sorted(ann)))
        for i, (c, a) in enumerate(self.monomials):
            if (tuple(sorted(c)), tuple(sorted(a))) == key:
                return i
        return None

    def stack(self, other: "MomentSystem") -> "MomentSystem":
        """Block-diagonal union of two independent systems."""
        gen = sla.block_diag(self.generator, other.generator)
        return MomentSystem.from_monomials(
            self.monomials + other.monomials, gen, self.labels + other.labels
        )


@dataclass
class MomentSeries:
    times: np.ndarray
    values: np.ndarray
    system: MomentSystem

    def column(self, cre, ann) -> np.ndarray:
        i = self.system.index_of(cre, ann)
        if i is None:
            raise WrongLayout(f"series has no label {_monomial_label(cre, ann)}")
        return self.values[:, i]

    def photon_numbers(self, n_modes: int) -> np.ndarray:
        return np.stack([self.column((j,), (j,)).real for j in range(n_modes)], axis=1)

    def pair_correlators(self, n_modes: int) -> np.ndarray:
        return np.stack([self.column((j, j), (j, j)).real for j in range(n_modes)], axis=1)


# --- builders ---------------------------------------------------------------


def _require_two_modes(spec: ChainSpec):
    if spec.n_modes != 2:
        raise WrongModeCount(f"two-mode system needs n_modes=2, got {spec.n_modes}")
    return spec.mean_couplings[0], spec.gamma[0], spec.kappa[0]


def build_two_mode_first(spec: ChainSpec) -> MomentSystem:
    v, g, _ = _require_two_modes(spec)
    gen = -1j * np.array([[-1j * g, v], [np.conj(v), -1j * g]])
    return MomentSystem.from_monomials([((), (0,)), ((), (1,))], gen)


def build_two_mode_second(spec: ChainSpec) -> MomentSystem:
    v, g, k = _require_two_modes(spec)
    vc, kc = np.conj(v), np.conj(k)
    gen = np.array(
        [
            [-2 * g, 2 * g, -1j * v, 1j * vc],
            [2 * g, -2 * g, 1j * v, -1j * vc],
            [-1j * vc, 1j * vc, -2 * g, 2 * kc],
            [1j * v, -1j * v, 2 * k, -2 * g],
        ]
    )
    monos = [((0,), (0,)), ((1,), (1,)), ((0,), (1,)), ((1,), (0,))]
    return MomentSystem.from_monomials(monos, gen)


# four-operator layout: [n1(2), n2(2), n1n2, a1+a1+a2a2, a2+a2+a1a1,
#                        a1+a1+a1a2, a1+a2+a1a1, a2+a2+a1a2, a1+a2+a2a2]
FOURTH_MONOMIALS = (
    ((0, 0), (0, 0)),
    ((1, 1), (1, 1)),
    ((0, 1), (1, 0)),
    ((0, 0), (1, 1)),
    ((1, 1), (0, 0)),
    ((0, 0), (0, 1)),
    ((0, 1), (0, 0)),
    ((1, 1), (0, 1)),
    ((0, 1), (1, 1)),
)


def build_two_mode_fourth(spec: ChainSpec) -> MomentSystem:
    v, g, k = _require_two_modes(spec)
    vc, kc = np.conj(v), np.conj(k)
    a = np.array(
        [
            [-4 * g, 0, 8 * g, -2 * k, -2 * kc],
            [0, -4 * g, 8 * g, -2 * k, -2 * kc],
            [2 * g, 2 * g, -8 * g, 2 * k, 2 * kc],
            [-2 * kc, -2 * kc, 8 * kc, -4 * g, 0],
            [-2 * k, -2 * k, 8 * k, 0, -4 * g],
        ]
    )
    b = 1j * np.array(
        [
            [-2 * v, 2 * vc, 0, 0],
            [0, 0, -2 * vc, 2 * v],
            [v, -vc, vc, -v],
            [-2 * vc, 0, 0, 2 * vc],
            # conjugate partner of the row above; rows 4 and 5 swap under a <-> a+
            [0, 2 * v, -2 * v, 0],
        ]
    )
    c = 1j * np.array(
        [
            [-vc, 0, 2 * vc, -v, 0],
            [v, 0, -2 * v, 0, vc],
            [0, -v, 2 * v, 0, -vc],
            [0, vc, -2 * vc, v, 0],
        ]
    )
    d = np.array(
        [
            [-6 * g, 4 * kc, -2 * kc, 4 * g],
            [4 * k, -6 * g, 4 * g, -2 * k],
            [-2 * k, 4 * g, -6 * g, 4 * k],
            [4 * g, -2 * kc, 4 * kc, -6 * g],
        ]
    )
    gen = np.block([[a, b], [c, d]]).astype(complex)
    return MomentSystem.from_monomials(FOURTH_MONOMIALS, gen)


def _require_circular(spec: ChainSpec):
    if not spec.is_circular_zero_mean():
        raise RequiresCircularZeroMean(
            "N-mode closed systems need zero mean couplings and kappa = 0"
        )


def _link_rate(spec: ChainSpec, j: int) -> float:
    """Rate of link ``j`` (between modes j and j+1), zero off the chain."""
    return float(spec.gamma[j]) if 0 <= j < spec.n_links else 0.0


def build_nmode_photon(spec: ChainSpec) -> MomentSystem:
    _require_circular(spec)
    m = spec.n_modes
    gen = np.zeros((m, m))
    for j in range(m):
        left, right = _link_rate(spec, j - 1), _link_rate(spec, j)
        gen[j, j] = -2 * (left + right)
        if j > 0:
            gen[j, j - 1] = 2 * left
        if j < m - 1:
            gen[j, j + 1] = 2 * right
    return MomentSystem.from_monomials(
        [((j,), (j,)) for j in range(m)], gen, tuple(f"n_{j + 1}" for j in range(m))
    )


def nmode_fourth_labels(n_modes: int) -> list:
    """``(j, k)`` pairs for ``<a_j+ a_{j+k}+ a_{j+k} a_j>`` ordered by k, then j."""
    return [(j, k) for k in range(n_modes) for j in range(n_modes - k)]


def build_nmode_fourth(spec: ChainSpec) -> MomentSystem:
    _require_circular(spec)
    m = spec.n_modes
    labels = nmode_fourth_labels(m)
    index = {lab: i for i, lab in enumerate(labels)}
    gen = np.zeros((len(labels), len(labels)))
    g = lambda j: _link_rate(spec, j)  # noqa: E731

    for (j, k), row in index.items():

        def add(jj, kk, coeff):
            # off-chain labels always come with a zero rate
            if coeff and (jj, kk) in index:
                gen[row, index[(jj, kk)]] += coeff

        if k > 1:
            gen[row, row] -= 2 * (g(j - 1) + g(j) + g(j + k) + g(j + k - 1))
            add(j - 1, k + 1, 2 * g(j - 1))
            add(j + 1, k - 1, 2 * g(j))
            add(j, k + 1, 2 * g(j + k))
            add(j, k - 1, 2 * g(j + k - 1))
        elif k == 1:
            gen[row, row] -= 2 * (g(j - 1) + 4 * g(j) + g(j + 1))
            add(j, 0, 2 * g(j))
            add(j + 1, 0, 2 * g(j))
            add(j - 1, 2, 2 * g(j - 1))
            add(j, 2, 2 * g(j + 1))
        else:
            gen[row, row] -= 4 * (g(j - 1) + g(j))
            add(j - 1, 1, 8 * g(j - 1))
            add(j, 1, 8 * g(j))

    monos = [((j, j + k), (j + k, j)) for j, k in labels]
    names = tuple(f"n^({k})_{j + 1}" for j, k in labels)
    return MomentSystem.from_monomials(monos, gen, names)


def chain_system(spec: ChainSpec) -> MomentSystem:
    """Photon numbers plus pair correlators for ``spec``, whichever closure applies."""
    if spec.n_modes == 2:
        return build_two_mode_second(spec).stack(build_two_mode_fourth(spec))
    return build_nmode_photon(spec).stack(build_nmode_fourth(spec))


# --- initial values -----------------------------------------------------------


def _mode_moment(alpha: complex, photon: bool, p: int, q: int) -> complex:
    """``<(a+)^p a^q>`` in one mode (coherent ``alpha`` or a single photon)."""
    if photon:
        if p != q or p > 1:
            return 0.0
        return 1.0
    return np.conj(alpha) ** p * alpha**q


def init_moments(system: MomentSystem, init: InitialState) -> np.ndarray:
    m = init.n_modes
    phi = np.empty(system.dim, dtype=complex)
    for i, (cre, ann) in enumerate(system.monomials):
        if any(j >= m for j in cre + ann):
            raise UnsupportedInitialState(
                f"label {system.labels[i]} refers to a mode outside a {m}-mode state"
            )
        value = 1.0 + 0j
        for j in set(cre) | set(ann):
            value *= _mode_moment(
                init.coherent_amplitudes[j], j == init.fock_mode, cre.count(j), ann.count(j)
            )
        phi[i] = value
    return phi


# --- integration ----------------------------------------------------------------


def integrate(system: MomentSystem, phi0, grid: TimeGrid, method="expm") -> MomentSeries:
    """Propagate ``phi0`` over ``grid``.

    ``method="expm"`` steps with the exact propagator ``expm(A dt)``;
    ``method="dop853"`` uses an adaptive embedded Runge-Kutta pair at
    ``rtol=1e-9``.
    """
    phi0 = np.asarray(phi0, dtype=complex)
    if phi0.shape != (system.dim,):
        raise DimensionMismatch(f"phi0 has shape {phi0.shape}, system has {system.dim} labels")
    times = grid.times
    if method == "expm":
        step = sla.expm(system.generator * grid.dt)
        out = np.empty((times.size, system.dim), dtype=complex)
        out[0] = phi0
        for m in range(1, times.size):
            out[m] = step @ out[m - 1]
        return MomentSeries(times.copy(), out, system)
    if method == "dop853":
        gen = system.generator
        out = solve_linear_ode(lambda t, y: gen @ y, phi0, times)
        return MomentSeries(times.copy(), out, system)
    raise ValueError(f"unknown integration method {method!r}")


def solve_linear_ode(rhs, y0, times, rtol=RTOL, atol=1e-14) -> np.ndarray:
    """Adaptive DOP853 integration sampled at ``times``; shared with the Fock oracle.

    Raises :class:`StiffnessFailure` when the accepted step drops below
    ``1e-12 * t_max``.
    """
    times = np.asarray(times, dtype=float)
    y0 = np.asarray(y0, dtype=complex)
    out = np.empty((times.size, y0.size), dtype=complex)
    out[0] = y0
    if times.size == 1:
        return out
    t_max = float(times[-1])
    dt_min = 1e-12 * t_max
    solver = DOP853(rhs, float(times[0]), y0, t_max, rtol=rtol, atol=atol)
    nxt = 1
    while nxt < times.size:
        message = solver.step()
        if solver.status == "failed":
            raise StiffnessFailure(f"integration failed: {message}")
        if solver.status == "running" and solver.step_size < dt_min:
            raise StiffnessFailure(
                f"step size {solver.step_size:.3e} fell below {dt_min:.3e} at t={solver.t:.6g}"
            )
        dense = solver.dense_output()
        while nxt < times.size and times[nxt] <= solver.t:
            out[nxt] = solver.y if times[nxt] == solver.t else dense(times[nxt])
            nxt += 1
        if solver.status == "finished":
            out[nxt:] = solver.y
            break
    return out


# --- steady states ----------------------------------------------------------------


def _null_basis(a: np.ndarray, rel_tol: float):
    u, s, vh = np.linalg.svd(a)
    scale = max(s[0], 1.0) if s.size else 1.0
    k = int(np.sum(s <= rel_tol * scale))
    return vh[a.shape[0] - k :].conj().T, s, scale


def steady_state(
    system: MomentSystem, phi0=None, conserved=None, targets=None, rel_tol=1e-10
) -> np.ndarray:
    """Stationary vector of ``system``.

    With ``phi0`` the result is the long-time limit reached from ``phi0``:
    the projection onto the kernel along the other generalised eigenspaces,
    built from the left and right kernels. That also resolves degenerate
    kernels. Without ``phi0`` the kernel must be one-dimensional and the
    vector is scaled so that ``conserved @ phi == targets``.
    """
    a = np.asarray(system.generator, dtype=complex)
    right, s, scale = _null_basis(a, rel_tol)
    nullity = right.shape[1]
    if nullity == 0:
        return np.zeros(system.dim, dtype=complex)
    gap = s[-nullity - 1] / scale if nullity < s.size else 1.0
    if gap < 1e-3:
        warnings.warn(
            f"smallest nonzero relaxation rate is {gap:.2e} of the generator scale; "
            "finite-time runs approach this steady state very slowly",
            SlowConvergenceWarning,
            stacklevel=2,
        )
    if phi0 is not None:
        left, _, _ = _null_basis(a.conj().T, rel_tol)
        left = left.conj().T  # rows are left null vectors
        phi0 = np.asarray(phi0, dtype=complex)
        coeffs = np.linalg.solve(left @ right, left @ phi0)
        return right @ coeffs
    if nullity > 1:
        raise DegenerateWithoutInit(
            f"kernel has dimension {nullity}; pass phi0 to select the limit"
        )
    vec = right[:, 0]
    if conserved is not None:
        w = np.atleast_2d(np.asarray(conserved, dtype=complex))
        t = np.atleast_1d(np.asarray(targets, dtype=complex))
        c, *_ = np.linalg.lstsq((w @ vec)[:, None], t, rcond=None)
        return vec * c[0]
    return vec / np.linalg.norm(vec)


# --- observables --------------------------------------------------------------


def g2_ratio(pair, photons, floor=G2_FLOOR) -> np.ndarray:
    """``pair / photons**2`` with NaN where ``photons**2 < floor``."""
    pair = np.asarray(pair, dtype=float)
    n2 = np.asarray(photons, dtype=float) ** 2
    out = np.full(np.broadcast(pair, n2).shape, np.nan)
    ok = n2 >= floor
    np.divide(pair, n2, out=out, where=ok)
    return out


def fill_initial_limit(g2: np.ndarray) -> np.ndarray:
    """Replace an undefined ``t = 0`` entry by the first positive-time value."""
    g2 = np.array(g2, dtype=float)
    if g2.shape[0] > 1:
        first = g2[0]
        mask = np.isnan(first)
        first[mask] = g2[1][mask]
    return g2


def initial_g2_limit(system: MomentSystem, phi0, n_modes: int, max_order: int = 60) -> np.ndarray:
    """Exact ``t -> 0+`` limit of g2 for each mode from Taylor coefficients ``A^m phi0 / m!``.

    An initially empty mode has ``n ~ c_k t^k`` and ``G2 ~ d_2k t^2k``, so the
    limit is ``d_2k / c_k^2``. Occupied modes return their ``t = 0`` value.
    """
    phi = np.asarray(phi0, dtype=complex)
    n_idx = [system.index_of((j,), (j,)) for j in range(n_modes)]
    g_idx = [system.index_of((j, j), (j, j)) for j in range(n_modes)]
    scale = max(float(np.max(np.abs(phi))), 1e-300)
    # the ratio is invariant under rescaling time, so work in units of 1/|A|
    gen = system.generator / max(float(np.linalg.norm(system.generator, 1)), 1e-300)
    coeffs = [phi]
    term = phi
    for m in range(1, max_order + 1):
        term = gen @ term / m
        coeffs.append(term)
    coeffs = np.array(coeffs)
    out = np.full(n_modes, np.nan)
    for j, (ni, gi) in enumerate(zip(n_idx, g_idx)):
        if ni is None or gi is None:
            continue
        cn, cg = coeffs[:, ni].real, coeffs[:, gi].real
        nonzero = np.flatnonzero(np.abs(cn) > 1e-13 * scale)
        if nonzero.size == 0 or 2 * nonzero[0] > max_order:
            continue
        k = nonzero[0]
        out[j] = cg[2 * k] / cn[k] ** 2
    return out


def g2_from_moments(series: MomentSeries, mode: int) -> np.ndarray:
    """Normalised second-order correlation of one mode.

    Points with ``n^2 < 1e-30`` are NaN, except at ``t = 0`` where the value
    is taken from the first positive grid time (0/0 for initially empty modes).
    """
    n = series.column((mode,), (mode,)).real
    pair = series.column((mode, mode), (mode, mode)).real
    return fill_initial_limit(g2_ratio(pair, n)[:, None])[:, 0]


def conserved_weights(system: MomentSystem, quantity: str) -> np.ndarray:
    """Linear functional of ``phi`` for total photons (``"N"``) or ``"P"``."""
    w = np.zeros(system.dim)
    if quantity == "N":
        for i, (c, a) in enumerate(system.monomials):
            if len(c) == 1 and c == a:
                w[i] = 1.0
    elif quantity == "P":
        # sum over modes of <a_i+ a_j+ a_j a_i> counted over ordered pairs
        for i, (c, a) in enumerate(system.monomials):
            if len(c) == 2 and tuple(sorted(c)) == tuple(sorted(a)):
                w[i] = 1.0 if c[0] == c[1] else 2.0
    else:
        raise ValueError(f"unknown conserved quantity {quantity!r}")
    if not w.any():
        raise WrongLayout(f"system has no labels contributing to {quantity}")
    return w
