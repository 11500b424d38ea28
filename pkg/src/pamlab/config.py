"""Run configuration: YAML text with fixed sections, strict keys, resolved defaults.

Schema (every key optional unless marked)::

    model:           d (3), kappa (required), alpha (derived; accepted only if it matches)
    discretization:  epsilon, n_per_side, box_length, dt (null = default), t_end
    init:            kind (lebesgue | uniform_ball | atom_cloud | density), delta,
                     intensity, center, radius, mass, atoms ([[x..., w], ...]), density (test function)
    observables:     times, balls ([[x..., r], ...]), tests (list of test functions), track_qv
    run:             seed, n_ensemble, workers
    chaos:           order, paired
    paths:           n_paths, m, clip, block, bin_halfwidth
    experiment:      name plus the keys listed in EXPERIMENT_KEYS[name]

A test function is a mapping ``{type: gaussian, center, width, height}`` or
``{type: smooth_ball, center, radius, softness}``.
"""

from __future__ import annotations

import copy
import datetime
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import yaml

from . import __version__
from .functions import GaussianBump, SmoothBall
from .lattice import LatticeSpec
from .paths import DEFAULT_BLOCK, DEFAULT_CLIP
from .special import DomainError, ModelParams, alpha_of_eta
from .spde import MeasureSpec, ObservableConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunManifest",
    "parse_config",
    "render_config",
    "test_function",
    "EXPERIMENT_KEYS",
    "sha256_file",
]


class ConfigError(ValueError):
    """Unknown key, wrong type or violated constraint in a run configuration."""


_REQUIRED = object()

SCHEMA = {
    "model": {"d": 3, "kappa": _REQUIRED, "alpha": None},
    "discretization": {"epsilon": 0.1, "n_per_side": 32, "box_length": 3.0, "dt": None, "t_end": 0.5},
    "init": {
        "kind": "lebesgue", "delta": 0.0, "intensity": 1.0, "center": None, "radius": 0.5, "mass": 1.0,
        "atoms": [], "density": None,
    },
    "observables": {"times": None, "balls": [], "tests": [], "track_qv": False},
    "run": {"seed": 0, "n_ensemble": 1, "workers": 1},
    "chaos": {"order": 4, "paired": True},
    "paths": {"n_paths": 100000, "m": 1024, "clip": DEFAULT_CLIP, "block": DEFAULT_BLOCK, "bin_halfwidth": 0.025},
    "experiment": {"name": None},
}

EXPERIMENT_KEYS = {
    "duality": {"f": None, "g": None, "t": 0.5, "bias_budget": 0.0, "null_repetitions": 20,
                "null_ensemble": 100, "level": 0.01},
    "scaling": {"t": 0.5, "c": 0.5, "intensity": 1.0, "bias_budget": 0.0, "null_repetitions": 20,
                "null_ensemble": 100, "level": 0.01},
    "total-mass": {"n_times": 5, "qv_tolerance": 0.10},
    "death": {"t_grid": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0], "level": 0.99},
    "singularity": {"t": 0.5, "epsilons": None, "radii": [0.125, 0.25, 0.5], "intensity": 1.0,
                    "slope_tolerance": 0.3, "level": 0.95, "n_boot": 1000},
    "supermartingale": {"rho": 0.4, "tilt": 0.01, "n_times": 5, "level": 0.95},
    "local-extinction": {"t_grid": [1.0, 2.0, 4.0, 8.0, 16.0], "radius": 0.5, "intensity": 1.0,
                         "theta_fraction": 0.5, "level": 0.95},
}

_INIT_KINDS = ("lebesgue", "uniform_ball", "atom_cloud", "density")


def _num(section, key, value, kind=float, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{section}.{key} must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{section}.{key} must be positive, got {value!r}")
    return value


def _vector(section, key, value, d):
    if not isinstance(value, (list, tuple)) or len(value) != d:
        raise ConfigError(f"{section}.{key} must be a list of {d} numbers")
    return [_num(section, key, v) for v in value]


def _test_spec(section, key, spec, d):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{section}.{key}: a test function is a mapping with a 'type'")
    allowed = {"gaussian": {"type", "center", "width", "height"},
               "smooth_ball": {"type", "center", "radius", "softness"}}
    kind = spec["type"]
    if kind not in allowed:
        raise ConfigError(f"{section}.{key}: unknown test function type {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ConfigError(f"{section}.{key}: unknown key(s) {sorted(extra)} for {kind}")
    out = {"type": kind, "center": _vector(section, key, spec.get("center", [0.0] * d), d)}
    if kind == "gaussian":
        out["width"] = _num(section, key, spec.get("width", 0.5), positive=True)
        out["height"] = _num(section, key, spec.get("height", 1.0))
    else:
        out["radius"] = _num(section, key, spec.get("radius", 0.5), positive=True)
        out["softness"] = _num(section, key, spec.get("softness", 0.25), positive=True)
        if out["softness"] > out["radius"]:
            raise ConfigError(f"{section}.{key}: softness must not exceed radius")
    return out


def test_function(spec: dict):
    """Build the test function described by a resolved spec mapping."""
    if spec["type"] == "gaussian":
        return GaussianBump(spec["center"], spec["width"], spec["height"])
    return SmoothBall(spec["center"], spec["radius"], spec["softness"])


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration; equality is equality of the resolved sections."""

    sections: dict = field(compare=True)

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def model(self) -> ModelParams:
        m = self.sections["model"]
        return ModelParams.unchecked(m["d"], m["kappa"])

    @property
    def epsilon(self) -> float:
        return self.sections["discretization"]["epsilon"]

    @property
    def lattice(self) -> LatticeSpec:
        disc = self.sections["discretization"]
        return LatticeSpec(self.sections["model"]["d"], disc["n_per_side"], disc["box_length"])

    @property
    def t_end(self) -> float:
        return self.sections["discretization"]["t_end"]

    @property
    def dt(self):
        return self.sections["discretization"]["dt"]

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    @property
    def measure(self) -> MeasureSpec:
        ini = self.sections["init"]
        kind = ini["kind"]
        if kind == "lebesgue":
            return MeasureSpec.lebesgue(ini["intensity"], ini["delta"])
        if kind == "uniform_ball":
            return MeasureSpec.uniform_ball(ini["center"], ini["radius"], ini["mass"], ini["delta"])
        if kind == "atom_cloud":
            return MeasureSpec.atom_cloud([(a[:-1], a[-1]) for a in ini["atoms"]], ini["delta"])
        return MeasureSpec.from_density(test_function(ini["density"]), ini["delta"])

    @property
    def observables(self) -> ObservableConfig:
        from .functions import BallIndicator

        obs = self.sections["observables"]
        return ObservableConfig(
            times=tuple(obs["times"]),
            balls=tuple(BallIndicator(b[:-1], b[-1]) for b in obs["balls"]),
            tests=tuple(test_function(t) for t in obs["tests"]),
            track_qv=obs["track_qv"],
        )

    def digest(self) -> str:
        text = json.dumps(self.sections, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate; ``overrides`` maps ``"section.key"`` to values applied after parsing."""
    try:
        raw = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    raw = copy.deepcopy(raw)
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})
        if not isinstance(raw[sec], dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        raw[sec][key] = value
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    out = {}
    for sec, defaults in SCHEMA.items():
        given = raw.get(sec) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        allowed = set(defaults)
        if sec == "experiment":
            name = given.get("name")
            if name is not None:
                if name not in EXPERIMENT_KEYS:
                    raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENT_KEYS)}")
                defaults = {"name": None, **EXPERIMENT_KEYS[name]}
                allowed = set(defaults)
        bad = set(given) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in section {sec!r}: {sorted(bad)}")
        resolved = {}
        for key, default in defaults.items():
            if key in given:
                resolved[key] = given[key]
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {sec}.{key}")
            else:
                resolved[key] = copy.deepcopy(default)
        out[sec] = resolved
    _validate(out)
    return RunConfig(out)


def _validate(c: dict) -> None:
    m = c["model"]
    d = _num("model", "d", m["d"], int)
    kappa = _num("model", "kappa", m["kappa"])
    m["d"], m["kappa"] = d, kappa
    if kappa != 0.0:
        try:
            params = ModelParams(d, kappa)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        alpha = params.alpha
    else:
        if d < 3:
            raise ConfigError(f"d={d}: the model needs an integer dimension d >= 3")
        alpha = 0.0
    if m["alpha"] is not None:
        given = _num("model", "alpha", m["alpha"])
        if not math.isclose(given, alpha, rel_tol=1e-12, abs_tol=1e-15):
            raise ConfigError(f"model.alpha={given} is derived from (d, kappa) and must equal {alpha!r}")
    m["alpha"] = alpha
    # consistency of the derived exponent with the pair-functional coefficient
    if kappa != 0.0 and not math.isclose(alpha_of_eta(d, kappa**2 / 2.0), alpha, rel_tol=1e-12):
        raise ConfigError("internal: alpha(eta=kappa^2/2) disagrees with alpha(kappa)")

    disc = c["discretization"]
    disc["epsilon"] = _num("discretization", "epsilon", disc["epsilon"], positive=True)
    disc["n_per_side"] = _num("discretization", "n_per_side", disc["n_per_side"], int, positive=True)
    disc["box_length"] = _num("discretization", "box_length", disc["box_length"], positive=True)
    disc["dt"] = _num("discretization", "dt", disc["dt"], positive=True, allow_none=True)
    disc["t_end"] = _num("discretization", "t_end", disc["t_end"], positive=True)
    n = disc["n_per_side"]
    if n < 8 or n & (n - 1):
        raise ConfigError(f"discretization.n_per_side={n} must be a power of two >= 8")

    ini = c["init"]
    if ini["kind"] not in _INIT_KINDS:
        raise ConfigError(f"init.kind must be one of {_INIT_KINDS}, got {ini['kind']!r}")
    ini["delta"] = _num("init", "delta", ini["delta"])
    if ini["delta"] < 0:
        raise ConfigError("init.delta must be nonnegative")
    ini["intensity"] = _num("init", "intensity", ini["intensity"], positive=True)
    ini["radius"] = _num("init", "radius", ini["radius"], positive=True)
    ini["mass"] = _num("init", "mass", ini["mass"], positive=True)
    ini["center"] = _vector("init", "center", ini["center"] if ini["center"] is not None else [0.0] * d, d)
    if not isinstance(ini["atoms"], list):
        raise ConfigError("init.atoms must be a list of [x..., weight]")
    ini["atoms"] = [_vector("init", "atoms", a, d + 1) for a in ini["atoms"]]
    if any(a[-1] <= 0 for a in ini["atoms"]):
        raise ConfigError("init.atoms weights must be positive")
    if ini["density"] is not None:
        ini["density"] = _test_spec("init", "density", ini["density"], d)
    if ini["kind"] == "atom_cloud" and not ini["atoms"]:
        raise ConfigError("init.kind=atom_cloud needs init.atoms")
    if ini["kind"] == "density" and ini["density"] is None:
        raise ConfigError("init.kind=density needs init.density")
    if ini["kind"] in ("uniform_ball", "atom_cloud") and ini["delta"] <= 0:
        raise ConfigError(f"init.kind={ini['kind']} needs init.delta > 0 (mollified initial measure)")

    obs = c["observables"]
    times = obs["times"] if obs["times"] is not None else [disc["t_end"]]
    if not isinstance(times, list) or not times:
        raise ConfigError("observables.times must be a nonempty list")
    obs["times"] = [_num("observables", "times", t) for t in times]
    if any(t < 0 or t > disc["t_end"] * (1 + 1e-12) for t in obs["times"]):
        raise ConfigError("observables.times must lie in [0, t_end]")
    obs["balls"] = [_vector("observables", "balls", b, d + 1) for b in obs["balls"]]
    obs["tests"] = [_test_spec("observables", "tests", t, d) for t in obs["tests"]]
    if not isinstance(obs["track_qv"], bool):
        raise ConfigError("observables.track_qv must be true or false")

    run = c["run"]
    run["seed"] = _num("run", "seed", run["seed"], int)
    if not 0 <= run["seed"] < 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    run["n_ensemble"] = _num("run", "n_ensemble", run["n_ensemble"], int, positive=True)
    run["workers"] = _num("run", "workers", run["workers"], int, positive=True)

    ch = c["chaos"]
    ch["order"] = _num("chaos", "order", ch["order"], int)
    if not 0 <= ch["order"] <= 6:
        raise ConfigError("chaos.order must lie in 0..6")
    if not isinstance(ch["paired"], bool):
        raise ConfigError("chaos.paired must be true or false")

    p = c["paths"]
    p["n_paths"] = _num("paths", "n_paths", p["n_paths"], int, positive=True)
    p["m"] = _num("paths", "m", p["m"], int, positive=True)
    p["clip"] = _num("paths", "clip", p["clip"], positive=True)
    p["block"] = _num("paths", "block", p["block"], int, positive=True)
    p["bin_halfwidth"] = _num("paths", "bin_halfwidth", p["bin_halfwidth"], positive=True)

    ex = c["experiment"]
    for key in ("f", "g"):
        if ex.get(key) is not None:
            ex[key] = _test_spec("experiment", key, ex[key], d)
    for key, value in list(ex.items()):
        if key in ("name", "f", "g") or value is None:
            continue
        if isinstance(value, list):
            ex[key] = [_num("experiment", key, v) for v in value]
        else:
            ex[key] = _num("experiment", key, value, int if isinstance(value, int) and not isinstance(value, bool) else float)


def render_config(config: RunConfig) -> str:
    """Resolved configuration as YAML; ``parse_config(render_config(c)) == c``."""
    return yaml.safe_dump(config.sections, sort_keys=False, default_flow_style=None)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Config hash, tool version, timestamps and a checksum for every output file."""

    config_hash: str
    tool_version: str = __version__
    command: str = ""
    started: str = ""
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    @classmethod
    def start(cls, config: RunConfig, command: str) -> "RunManifest":
        now = datetime.datetime.now(datetime.timezone.utc).isoformat()
        return cls(config.digest(), __version__, command, now)

    def record(self, out_dir, name: str) -> None:
        self.outputs[name] = sha256_file(os.path.join(out_dir, name))

    def write(self, out_dir, name: str = "manifest.json") -> str:
        self.finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "config_hash": self.config_hash,
                    "tool_version": self.tool_version,
                    "command": self.command,
                    "started": self.started,
                    "finished": self.finished,
                    "outputs": dict(sorted(self.outputs.items())),
                },
                fh,
                indent=2,
            )
            fh.write("\n")
        return path
