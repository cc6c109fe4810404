"""Run configurations, presets for the standard experiments, and the run driver."""

from __future__ import annotations

import dataclasses
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analytics, fockoracle, moments, montecarlo
from .errors import RequiresCircularZeroMean, SlowConvergenceWarning, ValidationError
from .model import ChainSpec, InitialState, TimeGrid, validate
from .series import ObservableSeries, emit_series

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("two_mode", "avalanche", "quench", "custom")
METHODS = ("moments", "montecarlo", "fock", "all")
TAIL_WARN = 1e-8


@dataclass
class Scenario:
    """Physical parameters plus run controls.

    Mode indices in ``coherent`` and ``fock_mode`` are 1-based. ``gamma`` is
    the white-noise rate of every link; the Monte-Carlo noise strength is
    derived from it and the noise interval ``t_max / n_steps``.
    """

    kind: str = "custom"
    method: str = "all"
    n_modes: int = 2
    gamma: float = 1.0
    nu: float = 1.0
    mean_coupling: complex = 0.0
    coherent: dict = field(default_factory=lambda: {1: 1.0})
    fock_mode: int | None = None
    t_max: float = 5.0
    n_steps: int = 300
    realizations: int = 5000
    seed: int = 1
    workers: int | None = None
    out: str = "runs"
    convention: str = "master"
    n_max: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown scenario {self.kind!r}; choose from {KINDS}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.n_modes < 2:
            raise ValidationError("a chain needs at least two modes")
        self.coherent = {int(k): complex(v) for k, v in self.coherent.items()}
        for j in list(self.coherent) + ([self.fock_mode] if self.fock_mode else []):
            if not 1 <= j <= self.n_modes:
                raise ValidationError(f"mode {j} outside a {self.n_modes}-mode chain")
        if self.nu < 0 or self.gamma < 0:
            raise ValidationError("gamma and nu must be nonnegative")

    # derived objects
    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t_max, self.n_steps)

    @property
    def initial_state(self) -> InitialState:
        alpha = {j - 1: a for j, a in self.coherent.items()}
        fock = None if self.fock_mode is None else self.fock_mode - 1
        return InitialState.coherent(self.n_modes, alpha, fock)

    @property
    def noise(self) -> montecarlo.NoiseSpec:
        means = [self.mean_coupling] * (self.n_modes - 1)
        return montecarlo.noise_for_rate(self.gamma, self.nu, self.grid.dt, means, self.convention)

    @property
    def chain(self) -> ChainSpec:
        return montecarlo.chain_spec_of_noise(self.noise, self.convention)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mean_coupling"] = [self.mean_coupling.real, self.mean_coupling.imag] if isinstance(
            self.mean_coupling, complex
        ) else self.mean_coupling
        d["coherent"] = {str(k): [v.real, v.imag] for k, v in self.coherent.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if isinstance(d.get("mean_coupling"), (list, tuple)):
            re, im = d["mean_coupling"]
            d["mean_coupling"] = complex(re, im)
        if "coherent" in d:
            d["coherent"] = {int(k): _as_complex(v) for k, v in d["coherent"].items()}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


def _as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


PRESETS = {
    # two modes, real noise (kappa = gamma), unit coherent amplitude in mode 1
    "two_mode": dict(
        n_modes=2, gamma=1.0, nu=0.0, mean_coupling=0.0, coherent={1: 1.0},
        t_max=10.0, n_steps=300, realizations=5000,
    ),
    # 15 modes, nu = 0.5, mean coupling 5 gamma, alpha_1 = 10
    "avalanche": dict(
        n_modes=15, gamma=1.0, nu=0.5, mean_coupling=5.0, coherent={1: 10.0},
        t_max=1.0, n_steps=300, realizations=300_000,
    ),
    # circular noise, alpha_1 = 10 and one photon in mode 5
    "quench": dict(
        n_modes=15, gamma=1.0, nu=1.0, mean_coupling=0.0, coherent={1: 10.0}, fock_mode=5,
        t_max=1.0, n_steps=300, realizations=300_000,
    ),
    "custom": {},
}

# config sections map onto flat Scenario fields
_SECTIONS = {
    "chain": ("n_modes", "gamma", "nu", "mean_coupling", "convention"),
    "initial": ("coherent", "fock_mode"),
    "time": ("t_max", "n_steps"),
    "montecarlo": ("realizations", "seed", "workers"),
    "fock": ("n_max",),
    "output": ("out",),
}


def load_config(path) -> dict:
    """Flat scenario overrides from a TOML config or a run manifest (JSON)."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return dict(data.get("scenario", data))
    data = tomllib.loads(path.read_text())
    flat = {}
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            for sub, v in value.items():
                if sub not in _SECTIONS[key]:
                    raise ValidationError(f"unknown key {key}.{sub}")
                flat[sub] = v
        elif key == "scenario":
            flat["kind"] = value
        else:
            flat[key] = value
    return flat


def build_scenario(kind=None, config=None, **overrides) -> Scenario:
    """Preset, then config values, then explicit overrides (``None`` means unset)."""
    cfg = dict(config or {})
    kind = kind or cfg.get("kind", "custom")
    params = {"kind": kind, **PRESETS.get(kind, {})}
    if kind not in PRESETS:
        raise ValidationError(f"unknown scenario {kind!r}; choose from {KINDS}")
    params.update({k: v for k, v in cfg.items() if k != "kind"})
    params.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario.from_dict(params)


# --- running -----------------------------------------------------------------


def moments_supported(sc: Scenario) -> str | None:
    """Reason the moment closure cannot handle ``sc``, or ``None``."""
    if sc.n_modes > 2 and not sc.chain.is_circular_zero_mean(atol=1e-15):
        return "chains longer than two modes need nu = 1 and zero mean coupling"
    return None


def fock_supported(sc: Scenario) -> str | None:
    basis_dim = math.comb(sc.n_max + sc.n_modes, sc.n_modes)
    if sc.n_modes > 3 or basis_dim > fockoracle.MAX_LINDBLAD_DIM:
        return f"Fock oracle limited to 3 modes and dimension {fockoracle.MAX_LINDBLAD_DIM}"
    return None


def run_moments(sc: Scenario) -> ObservableSeries:
    spec = sc.chain
    system = moments.chain_system(spec)
    phi0 = moments.init_moments(system, sc.initial_state)
    series = moments.integrate(system, phi0, sc.grid)
    limit = moments.initial_g2_limit(system, phi0, spec.n_modes)
    return ObservableSeries.from_counts(
        series.times, series.photon_numbers(spec.n_modes), series.pair_correlators(spec.n_modes), "moments",
        initial=limit,
    )


def run_montecarlo(sc: Scenario, progress=None) -> ObservableSeries:
    est = montecarlo.estimate(
        sc.noise, sc.initial_state, sc.grid, sc.realizations, sc.seed, sc.workers, progress=progress
    )
    return ObservableSeries.from_estimate(est, {"K": est.K, "seed": est.base_seed})


def run_fock(sc: Scenario, warn) -> ObservableSeries:
    spec = sc.chain
    init = sc.initial_state
    basis = fockoracle.FockBasis(sc.n_modes, sc.n_max)
    fock = () if init.fock_mode is None else (init.fock_mode,)
    psi, tail = fockoracle.product_state(basis, init.coherent_amplitudes, fock)
    if tail > TAIL_WARN:
        warn(f"fock: truncation at n_max={sc.n_max} drops probability {tail:.2e}")
    traj = fockoracle.evolve_lindblad(spec, fockoracle.DensityMatrix.pure(psi), sc.grid, basis)
    n, G, _ = fockoracle.density_expectations(traj, basis)
    return ObservableSeries.from_counts(sc.grid.times, n, G, "fock")


def _heartbeat(total, stream):
    last = [0]

    def report(done):
        if done // 1000 > last[0] // 1000 or done == total:
            print(f"montecarlo: {done}/{total} realizations", file=stream, flush=True)
        last[0] = done

    return report


def run(sc: Scenario, quiet=False, stream=None) -> dict:
    """Execute ``sc``, write one table per method plus ``manifest.json``; return the manifest."""
    stream = stream or sys.stderr
    validate(sc.chain)
    out = Path(sc.out)
    warns: list = []
    warn = warns.append

    methods = ["moments", "montecarlo", "fock"] if sc.method == "all" else [sc.method]
    reasons = {"moments": moments_supported(sc), "fock": fock_supported(sc), "montecarlo": None}
    selected = []
    for m in methods:
        if reasons[m] is None:
            selected.append(m)
        elif sc.method == "all":
            warn(f"{m}: skipped ({reasons[m]})")
        elif m == "moments":
            raise RequiresCircularZeroMean(reasons[m])
        else:
            raise ValidationError(reasons[m])

    kappa = float(np.real(sc.chain.kappa[0]))
    gamma = float(sc.chain.gamma[0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SlowConvergenceWarning)
        preds = analytics.predictions(kappa, gamma, sc.nu, sc.n_modes)
        if sc.n_modes == 2 and gamma > 0 and kappa != gamma:
            analytics.two_mode_asymptote(kappa, gamma)
    warns.extend(f"analytics: {w.message}" for w in caught)

    if "montecarlo" in selected:
        src = min(j - 1 for j in sc.coherent) if sc.coherent else 0
        far = sc.n_modes - 1 - src
        need = montecarlo.sample_size_planner(far, sc.nu, 1)
        if need > 1:
            warn(
                f"montecarlo: mode {sc.n_modes} sits {far} link(s) from the source; matching the "
                f"source-mode variance needs about {need}x the realizations (K={sc.realizations})"
            )

    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outputs = []
    for m in selected:
        if m == "moments":
            series = run_moments(sc)
        elif m == "montecarlo":
            progress = None if quiet else _heartbeat(sc.realizations, stream)
            series = run_montecarlo(sc, progress)
        else:
            series = run_fock(sc, warn)
        path = emit_series(series, out / f"{m}.csv")
        outputs.append(path.name)
    wall = time.perf_counter() - start

    manifest = {
        "tool": "noiseavalanche",
        "version": __version__,
        "scenario": sc.to_dict(),
        "derived": {
            "noise": sc.noise.to_dict(),
            "chain": sc.chain.to_dict(),
            "grid": {"t_max": sc.grid.t_max, "n_steps": sc.grid.n_steps, "dt": sc.grid.dt},
        },
        "seed": sc.seed,
        "realizations": sc.realizations,
        "wall_time_s": wall,
        "outputs": outputs,
        "predictions": [dataclasses.asdict(p) for p in preds],
        "warnings": warns,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return manifest


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
