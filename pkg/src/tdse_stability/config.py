"""Scenario configuration: YAML file -> fully resolved, validated dataclasses.

Unknown keys are hard errors (with a nearest-key suggestion); every value
that was filled from a default is listed in ``ScenarioConfig.defaults_applied``
so the emitted report carries full provenance.
"""
from __future__ import annotations

import copy
import dataclasses
import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    dim: int = 1
    points_per_dim: int = 1024
    box_length: float = 80.0


@dataclass
class DynamicsConfig:
    theta: float = 1.0
    mass: float = 0.5
    s: float = 0.0
    T: float = 50.0
    dt: float = 1e-3
    sample_stride: int = 10


@dataclass
class BandConfig:
    a: float = 0.5
    R: float = 3.0


@dataclass
class InitialStateConfig:
    kind: str = "gaussian"
    center: list = field(default_factory=lambda: [-10.0])
    width: float = 2.0
    momentum: list = field(default_factory=lambda: [1.5])
    modes: list = field(default_factory=list)
    seed: int = 0
    band: BandConfig = field(default_factory=BandConfig)


@dataclass
class VerificationConfig:
    gamma_p_pairs: list = field(default_factory=lambda: [[0.0, 2.0]])
    slack_tolerance: float = 1e-8
    eig_tolerance: float = 1e-10
    hardy_flow_tolerance: float = 1e-9
    sandwich_tolerance: float = 1e-9
    unitarity_tolerance: float = 1e-11
    identity_tolerance: float | None = None
    integrability_horizon: float | None = None
    certify_samples: int = 21
    refine_tolerance: float = 1e-3
    eig_method: str = "auto"
    gn_trials: int = 500
    gn_widths: int = 10
    hardy_box_ladder: list = field(default_factory=list)
    seed: int = 0


@dataclass
class ConvergenceConfig:
    dt_ladder: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    residual_tolerance: float = 1e-5


@dataclass
class SweepConfig:
    axes: dict = field(default_factory=dict)


@dataclass
class OutputConfig:
    directory: str = "out"
    timeseries: str = "timeseries.csv"
    report: str = "report.json"


POTENTIAL_KEYS = {
    "moving_bump": {"amplitude": 0.1, "shape_power": 1.0, "drift": None},
    "inverse_power_regularized": {"amplitude": 0.1, "power": 0.5, "smoothing": 1.0, "center": None},
    "decaying_envelope": {"rate": 0.1, "base": None},
    "static": {"level": 0.0},
}
DRIFT_KEYS = {"kind": "arctan_drift", "velocity": None, "offset": None, "omega": 1.0}
INITIAL_KINDS = ("gaussian", "mode_sum", "random_band")
EIG_METHODS = ("auto", "dense", "iterative")


@dataclass
class ScenarioConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    potential: dict = field(default_factory=dict)
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    defaults_applied: list = field(default_factory=list)
    source: str | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("defaults_applied")
        d.pop("source")
        return d

    @property
    def gamma_p_pairs(self) -> list[tuple[float, float]]:
        return [(float(g), float(p)) for g, p in self.verification.gamma_p_pairs]


def _unknown(key, valid, path):
    hint = difflib.get_close_matches(str(key), list(valid), n=1)
    near = f"; did you mean {hint[0]!r}?" if hint else ""
    return ConfigError(f"unknown key {'.'.join(path + [str(key)])!r}{near} (valid: {', '.join(sorted(valid))})")


def _coerce(value, kind, path):
    name = ".".join(path)
    try:
        if kind is float:
            out = float(value)
            if math.isnan(out):
                raise ValueError
            return out
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind is str:
            if not isinstance(value, str):
                raise ValueError
            return value
        if kind is list:
            return list(value) if isinstance(value, (list, tuple)) else [value]
        if kind is dict:
            if not isinstance(value, dict):
                raise ValueError
            return dict(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {name!r}: cannot interpret {value!r} as {kind.__name__}") from None
    return value


_TYPE_NAMES = {"int": int, "float": float, "str": str, "list": list, "dict": dict,
               "float | None": float}


def _build(cls, data, path, defaults_applied):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {'.'.join(path)!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise _unknown(key, fields, path)
    kwargs = {}
    for name, f in fields.items():
        sub = path + [name]
        if dataclasses.is_dataclass(f.type if not isinstance(f.type, str) else globals().get(f.type)):
            sub_cls = f.type if not isinstance(f.type, str) else globals()[f.type]
            kwargs[name] = _build(sub_cls, data.get(name), sub, defaults_applied)
            continue
        if name not in data:
            defaults_applied.append(".".join(sub))
            continue
        value = data[name]
        if value is None and "None" in str(f.type):
            kwargs[name] = None
            continue
        kwargs[name] = _coerce(value, _TYPE_NAMES.get(str(f.type), object), sub)
    return cls(**kwargs)


def _resolve_drift(raw, dim, path, defaults_applied):
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"field {'.'.join(path)!r} must be a mapping")
    for key in raw:
        if key not in DRIFT_KEYS:
            raise _unknown(key, DRIFT_KEYS, path)
    out = {}
    for key, default in DRIFT_KEYS.items():
        if key in raw and raw[key] is not None:
            out[key] = raw[key]
        else:
            defaults_applied.append(".".join(path + [key]))
            out[key] = default
    if out["kind"] not in ("arctan_drift", "constant", "periodic"):
        raise ConfigError(f"field {'.'.join(path + ['kind'])!r}: unknown drift kind {out['kind']!r}")
    for key in ("velocity", "offset"):
        if out[key] is None:
            out[key] = [1.0 if key == "velocity" else 0.0] + [0.0] * (dim - 1)
        vec = [_coerce(v, float, path + [key]) for v in _coerce(out[key], list, path + [key])]
        if len(vec) != dim:
            raise ConfigError(f"field {'.'.join(path + [key])!r} needs {dim} components, got {len(vec)}")
        out[key] = vec
    out["omega"] = _coerce(out["omega"], float, path + ["omega"])
    return out


def _resolve_potential(raw, dim, path, defaults_applied):
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"section {'.'.join(path)!r} must be a mapping")
    kind = raw.get("kind")
    if kind is None:
        kind = "moving_bump"
        defaults_applied.append(".".join(path + ["kind"]))
    if kind not in POTENTIAL_KEYS:
        hint = difflib.get_close_matches(str(kind), list(POTENTIAL_KEYS), n=1)
        near = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(f"field {'.'.join(path + ['kind'])!r}: unknown potential kind {kind!r}{near}")
    valid = POTENTIAL_KEYS[kind]
    for key in raw:
        if key != "kind" and key not in valid:
            raise _unknown(key, ["kind", *valid], path)
    out = {"kind": kind}
    for key, default in valid.items():
        sub = path + [key]
        given = key in raw and raw[key] is not None
        if key == "drift":
            if not given:
                defaults_applied.append(".".join(sub))
            out[key] = _resolve_drift(raw.get(key), dim, sub, defaults_applied)
        elif key == "base":
            if not given:
                raise ConfigError(f"field {'.'.join(sub)!r} is required for decaying_envelope")
            out[key] = _resolve_potential(raw[key], dim, sub, defaults_applied)
        elif key == "center":
            vec = raw.get(key) if given else [0.0] * dim
            if not given:
                defaults_applied.append(".".join(sub))
            vec = [_coerce(v, float, sub) for v in _coerce(vec, list, sub)]
            if len(vec) != dim:
                raise ConfigError(f"field {'.'.join(sub)!r} needs {dim} components")
            out[key] = vec
        else:
            if not given:
                defaults_applied.append(".".join(sub))
            out[key] = _coerce(raw[key] if given else default, float, sub)
    return out


def _vector(values, dim, name):
    vec = [float(v) for v in values]
    if len(vec) == 1 and dim > 1:
        vec = vec * dim
    if len(vec) != dim:
        raise ConfigError(f"field {name!r} needs {dim} components, got {len(vec)}")
    return vec


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    g, d, ini, ver = cfg.grid, cfg.dynamics, cfg.initial_state, cfg.verification
    if g.dim not in (1, 2):
        raise ConfigError(f"field 'grid.dim': must be 1 or 2, got {g.dim}")
    n = g.points_per_dim
    if n < 8 or n & (n - 1):
        raise ConfigError(f"field 'grid.points_per_dim': must be a power of two >= 8, got {n}")
    if not g.box_length > 0:
        raise ConfigError("field 'grid.box_length': must be positive")
    if not d.theta >= 0.5:
        raise ConfigError(f"field 'dynamics.theta': must be >= 1/2, got {d.theta}")
    if not d.mass > 0:
        raise ConfigError("field 'dynamics.mass': must be positive")
    if not d.dt > 0:
        raise ConfigError("field 'dynamics.dt': must be positive")
    if not d.T > d.s:
        raise ConfigError("field 'dynamics.T': must exceed dynamics.s")
    steps = (d.T - d.s) / d.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("field 'dynamics.dt': must divide T - s")
    if d.sample_stride < 1:
        raise ConfigError("field 'dynamics.sample_stride': must be >= 1")
    b = ini.band
    if not (0 < b.a < b.R):
        raise ConfigError(f"field 'band': need 0 < a < R, got a={b.a}, R={b.R}")
    max_freq = math.pi * n / g.box_length * math.sqrt(g.dim)
    if b.R > max_freq * (1 + 1e-12):
        raise ConfigError(f"field 'band': R={b.R} exceeds the largest lattice frequency {max_freq:.6g}")
    if ini.kind not in INITIAL_KINDS:
        raise ConfigError(f"field 'initial_state.kind': expected one of {INITIAL_KINDS}, got {ini.kind!r}")
    ini.center = _vector(ini.center, g.dim, "initial_state.center")
    ini.momentum = _vector(ini.momentum, g.dim, "initial_state.momentum")
    if not ini.width > 0:
        raise ConfigError("field 'initial_state.width': must be positive")
    if ini.kind == "mode_sum" and not ini.modes:
        raise ConfigError("field 'initial_state.modes': mode_sum needs at least one mode")
    pairs = []
    for entry in ver.gamma_p_pairs:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ConfigError("field 'verification.gamma_p_pairs': entries must be [gamma, p]")
        gamma, p = float(entry[0]), float(entry[1])
        if gamma < 0 or gamma > d.theta:
            raise ConfigError(f"field 'verification.gamma_p_pairs': gamma={gamma} outside [0, theta]")
        if gamma >= g.dim / 2:
            raise ConfigError(
                f"field 'verification.gamma_p_pairs': gamma={gamma} >= n/2 has no finite partner p"
            )
        expected = 1.0 / (0.5 - gamma / g.dim)
        if abs(p - expected) > 1e-9 * expected:
            raise ConfigError(
                f"field 'verification.gamma_p_pairs': p={p} does not satisfy 1/p + gamma/n = 1/2 "
                f"(expected {expected:g})"
            )
        pairs.append([gamma, expected])
    ver.gamma_p_pairs = pairs
    if ver.eig_method not in EIG_METHODS:
        raise ConfigError(f"field 'verification.eig_method': expected one of {EIG_METHODS}")
    if ver.certify_samples < 1:
        raise ConfigError("field 'verification.certify_samples': must be >= 1")
    ladder = [float(x) for x in cfg.convergence.dt_ladder]
    if any(x <= 0 for x in ladder):
        raise ConfigError("field 'convergence.dt_ladder': entries must be positive")
    cfg.convergence.dt_ladder = ladder
    for key, values in cfg.sweep.axes.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"field 'sweep.axes.{key}': must be a nonempty list")
    return cfg


def config_from_dict(data: dict | None, source: str | None = None) -> ScenarioConfig:
    data = copy.deepcopy(data) if data else {}
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    sections = {f.name for f in dataclasses.fields(ScenarioConfig)} - {"defaults_applied", "source"}
    for key in data:
        if key not in sections:
            raise _unknown(key, sections, [])
    applied: list[str] = []
    grid_raw = data.get("grid") or {}
    grid = _build(GridConfig, grid_raw, ["grid"], applied)
    if grid.dim == 2:
        # 2-D desk-scale defaults
        if "points_per_dim" not in grid_raw:
            grid.points_per_dim = 256
        if "box_length" not in grid_raw:
            grid.box_length = 40.0
    cfg = ScenarioConfig(
        grid=grid,
        dynamics=_build(DynamicsConfig, data.get("dynamics"), ["dynamics"], applied),
        potential=_resolve_potential(data.get("potential"), grid.dim, ["potential"], applied),
        initial_state=_build(InitialStateConfig, data.get("initial_state"), ["initial_state"], applied),
        verification=_build(VerificationConfig, data.get("verification"), ["verification"], applied),
        convergence=_build(ConvergenceConfig, data.get("convergence"), ["convergence"], applied),
        sweep=_build(SweepConfig, data.get("sweep"), ["sweep"], applied),
        output=_build(OutputConfig, data.get("output"), ["output"], applied),
        defaults_applied=applied,
        source=source,
    )
    return validate(cfg)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"parse error in {path}{where}: {problem}") from None
    return config_from_dict(data, source=str(path))


def set_path(data: dict, dotted: str, value) -> dict:
    """Return a copy of ``data`` with ``dotted`` (e.g. ``potential.drift.velocity``) set."""
    out = copy.deepcopy(data)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"sweep axis {dotted!r} does not address a mapping")
    node[keys[-1]] = value
    return out
