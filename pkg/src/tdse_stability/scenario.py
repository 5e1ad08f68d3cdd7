"""Scenario orchestration: certify, derive constants, evolve, verify, emit."""
from __future__ import annotations

import datetime as _dt
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assumptions import (
    AssumptionReport,
    BandSubspace,
    check_assumptions,
    estimate_hardy_uniform,
    hardy_box_ladder,
    UnsupportedPotential,
)
from .bounds import (
    FAIL,
    PASS,
    CheckResult,
    EvolutionRecord,
    derive_constants,
    estimate_gn_constant,
    observables,
    verify_energy_bounds,
    verify_h_theta_bounds,
    verify_hardy_along_flow,
    verify_kinetic_bounds,
    verify_sobolev,
)
from .config import ScenarioConfig, config_from_dict, set_path
from .potentials import (
    DriftProfile,
    PotentialModel,
    ConstantPotential,
    boundary_ratio,
    decaying_envelope,
    inverse_power_regularized,
    moving_bump,
)
from .propagator import EvolutionError, evolve, step_count
from .spectral import (
    BandWindow,
    KineticOperator,
    SpectralGrid,
    WaveFunction,
    band_project,
    gaussian,
    make_grid,
    norm_l2,
    norm_lp,
    norm_sobolev,
    normalized,
    plane_wave,
)

log = logging.getLogger(__name__)

SCHEMA = "tdse-stability-report"
SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_UNCERTIFIED, EXIT_VIOLATED = 0, 1, 2, 3
CSV_BASE_COLUMNS = ("t", "F", "G", "E", "l2", "residual")
BOUNDARY_WARN = 1e-6

# certificates each check needs before it may report "pass"
REQUIRED_CERTIFICATES = {
    "kinetic_lower": ("hardy", "integrability", "initial_positivity"),
    "kinetic_upper": ("hardy", "integrability", "strict_positivity"),
    "energy_bounds": ("hardy", "integrability", "initial_positivity", "strict_positivity"),
    "energy_sandwich": ("hardy", "integrability", "initial_positivity", "strict_positivity"),
    "h_theta_lower": ("hardy", "integrability", "initial_positivity"),
    "h_theta_upper": ("hardy", "integrability", "strict_positivity"),
    "hardy_along_flow": ("hardy",),
    "sobolev": ("hardy", "integrability", "strict_positivity"),
}


def build_potential(spec: dict, dim: int, s: float = 0.0) -> PotentialModel:
    kind = spec["kind"]
    if kind == "moving_bump":
        d = spec["drift"]
        drift = DriftProfile(d["kind"], tuple(d["velocity"]), tuple(d["offset"]), d["omega"])
        return moving_bump(spec["amplitude"], spec["shape_power"], drift)
    if kind == "inverse_power_regularized":
        return inverse_power_regularized(spec["amplitude"], spec["power"], spec["smoothing"], dim,
                                         tuple(spec["center"]))
    if kind == "decaying_envelope":
        return decaying_envelope(build_potential(spec["base"], dim, s), spec["rate"], s)
    if kind == "static":
        return ConstantPotential(spec["level"])
    raise ValueError(f"unknown potential kind {kind!r}")


def build_initial_state(cfg: ScenarioConfig, grid: SpectralGrid, band: BandWindow) -> WaveFunction:
    ini = cfg.initial_state
    if ini.kind == "gaussian":
        psi = gaussian(grid, tuple(ini.center), ini.width, tuple(ini.momentum))
    elif ini.kind == "mode_sum":
        psi = WaveFunction(grid, np.zeros(grid.shape, complex))
        for mode in ini.modes:
            idx = mode["index"] if isinstance(mode, dict) else mode
            amp = mode.get("amplitude", 1.0) if isinstance(mode, dict) else 1.0
            amp = complex(*amp) if isinstance(amp, (list, tuple)) else complex(amp)
            psi = WaveFunction(grid, psi.amplitudes + amp * plane_wave(grid, idx).amplitudes)
    else:
        sub = BandSubspace(grid, band)
        rng = np.random.default_rng(ini.seed)
        psi = sub.to_wavefunction(sub.random_coefficients(rng)).in_position()
    psi = band_project(psi, band)
    if norm_l2(psi) < 1e-12:
        raise ValueError("initial state has no weight in the band")
    return normalized(psi)


@dataclass
class Setup:
    grid: SpectralGrid
    K: KineticOperator
    V: PotentialModel
    band: BandWindow
    phi: WaveFunction


def build_setup(cfg: ScenarioConfig) -> Setup:
    g = make_grid(cfg.grid.dim, cfg.grid.points_per_dim, cfg.grid.box_length)
    K = KineticOperator(g, cfg.dynamics.theta, cfg.dynamics.mass)
    V = build_potential(cfg.potential, g.dim, cfg.dynamics.s)
    band = BandWindow(cfg.initial_state.band.a, cfg.initial_state.band.R)
    return Setup(g, K, V, band, build_initial_state(cfg, g, band))


def sample_times(cfg: ScenarioConfig) -> np.ndarray:
    d = cfg.dynamics
    n = step_count(d.s, d.T, d.dt)
    idx = list(range(0, n + 1, d.sample_stride))
    if idx[-1] != n:
        idx.append(n)
    return d.s + np.asarray(idx) * d.dt


def certify_times(cfg: ScenarioConfig) -> np.ndarray:
    d = cfg.dynamics
    return np.linspace(d.s, d.T, cfg.verification.certify_samples)


def potential_regime(cfg: ScenarioConfig) -> str | None:
    spec = cfg.potential
    while spec["kind"] == "decaying_envelope":
        spec = spec["base"]
    q = spec.get("shape_power", spec.get("power"))
    if q is None:
        return None
    theta = cfg.dynamics.theta
    if q < theta:
        return "decay exponent below theta (Coulomb-type family)"
    if q > theta:
        return "decay exponent above theta (moving-potential family)"
    return "decay exponent equal to theta"


def run_assumptions(cfg: ScenarioConfig, setup: Setup | None = None) -> AssumptionReport:
    setup = setup or build_setup(cfg)
    ver = cfg.verification
    return check_assumptions(
        setup.K, setup.V, cfg.dynamics.s, cfg.dynamics.T, setup.band,
        certify_times(cfg), integral_times=list(sample_times(cfg)),
        horizon=ver.integrability_horizon, method=ver.eig_method,
        tolerance=ver.eig_tolerance, refine_tol=ver.refine_tolerance,
    )


def record_evolution(setup: Setup, cfg: ScenarioConfig, C_H: float | None, dt: float | None = None,
                     sample_stride: int | None = None, workers: int | None = None):
    d = cfg.dynamics
    p_list = sorted({p for _, p in cfg.gamma_p_pairs})
    traj = evolve(
        setup.phi, setup.K, setup.V, d.s, d.T, dt or d.dt, sample_stride or d.sample_stride,
        observer=lambda t, u: observables(u, t, setup.K, setup.V, C_H, p_list), workers=workers,
    )
    record = EvolutionRecord.from_rows(traj.rows, C_H, d.mass, d.theta)
    return record, traj


def _unitarity_check(record: EvolutionRecord, tol: float) -> CheckResult:
    drift = np.abs(record.l2 / record.l2[0] - 1.0)
    j = int(np.argmax(drift))
    return CheckResult("unitarity", PASS if drift[j] <= tol else FAIL, float(tol - drift[j]),
                       float(record.t[j]), {"max_relative_drift": float(drift[j])})


def _identity_check(record: EvolutionRecord, tol: float | None) -> CheckResult | None:
    if tol is None or record.residual is None:
        return None
    r = np.abs(record.residual)
    j = int(np.argmax(r))
    return CheckResult("energy_identity", PASS if r[j] <= tol else FAIL, float(tol - r[j]),
                       float(record.t[j]), {"max_residual": float(r[j])})


def _required(name: str):
    return REQUIRED_CERTIFICATES["sobolev" if name.startswith("sobolev") else name] \
        if (name in REQUIRED_CERTIFICATES or name.startswith("sobolev")) else ()


def assert_gating(checks, certified: dict) -> None:
    for c in checks:
        if c.status == PASS and not all(certified.get(k) for k in _required(c.name)):
            raise AssertionError(f"check {c.name} passed without its certificates")


def exit_code_for(checks, certified: dict) -> int:
    if any(c.status == FAIL for c in checks):
        return EXIT_VIOLATED
    if not all(certified.values()):
        return EXIT_UNCERTIFIED
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def versions() -> dict:
    return {"tdse_stability": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class ScenarioResult:
    exit_code: int
    report: dict
    record: EvolutionRecord | None = None
    checks: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def csv_columns(record: EvolutionRecord) -> list[str]:
    return list(CSV_BASE_COLUMNS) + [f"lp_{p:g}" for p in sorted(record.lp)]


def write_timeseries(record: EvolutionRecord, path: Path) -> None:
    cols = [record.t, record.F, record.G, record.E, record.l2,
            record.residual if record.residual is not None else np.full(len(record.t), np.nan)]
    cols += [record.lp[p] for p in sorted(record.lp)]
    lines = [",".join(csv_columns(record))]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_report(report: dict, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=False) + "\n")


def _base_report(cfg: ScenarioConfig, command: str) -> dict:
    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "config_source": cfg.source,
        "defaults_applied": list(cfg.defaults_applied),
        "seeds": {"initial_state": cfg.initial_state.seed, "verification": cfg.verification.seed},
        "versions": versions(),
    }


def _warnings(cfg: ScenarioConfig, setup: Setup) -> list[str]:
    out = []
    ratio = max(boundary_ratio(setup.V, t, setup.grid) for t in (cfg.dynamics.s, cfg.dynamics.T))
    if ratio > BOUNDARY_WARN:
        msg = (f"potential on the box boundary reaches {ratio:.3e} of its maximum "
               f"(> {BOUNDARY_WARN:g}); the torus may be too small")
        log.warning(msg)
        out.append(msg)
    return out


def check_scenario(cfg: ScenarioConfig, out_dir=None) -> ScenarioResult:
    """Assumption certificates only."""
    t0 = time.perf_counter()
    report = _base_report(cfg, "check")
    try:
        setup = build_setup(cfg)
        report["warnings"] = _warnings(cfg, setup)
        assumptions = run_assumptions(cfg, setup)
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        return _error_result(report, exc, out_dir, cfg, t0)
    report["assumptions"] = assumptions.to_dict()
    report["potential_regime"] = potential_regime(cfg)
    if cfg.verification.hardy_box_ladder:
        report["hardy_box_ladder"] = _box_ladder(cfg, setup)
    code = EXIT_OK if all(assumptions.certified.values()) else EXIT_UNCERTIFIED
    report["exit_code"] = code
    return _finish(ScenarioResult(code, report), out_dir, cfg, t0)


def _box_ladder(cfg, setup):
    h = setup.grid.spacing

    def factory(L):
        n = 2 ** max(3, int(round(math.log2(L / h))))
        return KineticOperator(make_grid(cfg.grid.dim, n, n * h), cfg.dynamics.theta, cfg.dynamics.mass)

    return hardy_box_ladder(factory, setup.V, cfg.dynamics.s, setup.band, cfg.verification.hardy_box_ladder)


def _error_result(report, exc, out_dir, cfg, t0):
    log.error("%s", exc)
    report["error"] = f"{type(exc).__name__}: {exc}"
    report["exit_code"] = EXIT_ERROR
    return _finish(ScenarioResult(EXIT_ERROR, report), out_dir, cfg, t0)


def _finish(result: ScenarioResult, out_dir, cfg: ScenarioConfig, t0: float) -> ScenarioResult:
    result.report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    result.report["wall_time_s"] = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if result.record is not None:
            p = out / cfg.output.timeseries
            write_timeseries(result.record, p)
            result.paths["timeseries"] = str(p)
        p = out / cfg.output.report
        write_report(result.report, p)
        result.paths["report"] = str(p)
    return result


def run_scenario(cfg: ScenarioConfig, out_dir=None, workers: int | None = None) -> ScenarioResult:
    """Full pipeline; exit code 0 ok, 1 operational error, 2 uncertified, 3 bound violated."""
    t0 = time.perf_counter()
    report = _base_report(cfg, "run")
    ver = cfg.verification
    try:
        setup = build_setup(cfg)
        report["warnings"] = _warnings(cfg, setup)
        assumptions = run_assumptions(cfg, setup)
        C_H = assumptions.hardy_constant
        record, traj = record_evolution(setup, cfg, C_H, workers=workers)
    except (ValueError, RuntimeError, FloatingPointError, EvolutionError) as exc:
        return _error_result(report, exc, out_dir, cfg, t0)

    cert = dict(assumptions.certified)
    n2 = record.norm_sq
    a1 = float(record.E[0] / n2)
    consts = derive_constants(
        C_H, assumptions.integrability_constant, assumptions.delta, cfg.dynamics.mass,
        cfg.dynamics.theta, setup.band, a1, a1,
        lower_certified=cert["initial_positivity"], upper_certified=cert["strict_positivity"],
    )

    checks = [_unitarity_check(record, ver.unitarity_tolerance)]
    idc = _identity_check(record, ver.identity_tolerance)
    if idc is not None:
        checks.append(idc)
    checks.append(verify_hardy_along_flow(record, cert, ver.hardy_flow_tolerance))
    checks += verify_kinetic_bounds(record, consts, cert, ver.slack_tolerance)
    checks += verify_energy_bounds(record, consts, cert, ver.slack_tolerance, ver.sandwich_tolerance)
    checks += verify_h_theta_bounds(record, consts, cert, ver.slack_tolerance)
    sobolev_info = []
    for gamma, p in cfg.gamma_p_pairs:
        if gamma == 0:
            gn = 1.0
        else:
            gn = estimate_gn_constant(setup.grid, gamma, p, setup.band, ver.gn_trials, ver.gn_widths, ver.seed)
            gn = max(gn, norm_lp(setup.phi, p) / norm_sobolev(setup.phi, gamma))
        phi_hg = norm_sobolev(setup.phi, gamma)
        checks.append(verify_sobolev(record, gamma, p, consts, cert, phi_hg, gn, setup.grid.dim,
                                     ver.slack_tolerance))
        sobolev_info.append({"gamma": gamma, "p": p, "gn_constant_estimate": gn,
                             "gn_label": "trial-maximization estimate of a supremum",
                             "phi_h_gamma": phi_hg})
    assert_gating(checks, cert)
    code = exit_code_for(checks, cert)

    report["assumptions"] = assumptions.to_dict()
    report["potential_regime"] = potential_regime(cfg)
    report["constants"] = consts.to_dict()
    report["constants"]["sobolev"] = sobolev_info
    report["checks"] = [c.to_dict() for c in checks]
    report["evolution"] = {
        "steps": traj.steps,
        "samples": len(record.t),
        "initial_norm": record.initial_norm,
        "F_initial": float(record.F[0]),
        "E_initial": float(record.E[0]),
        "F_range": [float(record.F.min()), float(record.F.max())],
        "E_range": [float(record.E.min()), float(record.E.max())],
        "identity_residual_max": None if record.residual is None else float(np.abs(record.residual).max()),
        "h_theta_bracket_ratio_max": float(
            norm_sobolev(traj.final, cfg.dynamics.theta) ** 2 / record.h_theta_split[-1]
        ),
    }
    report["summary"] = {
        "exit_code": code,
        "certified": cert,
        "passed": [c.name for c in checks if c.status == PASS],
        "failed": [c.name for c in checks if c.status == FAIL],
        "not_certified": [c.name for c in checks if c.status not in (PASS, FAIL)],
    }
    report["exit_code"] = code
    return _finish(ScenarioResult(code, report, record, checks), out_dir, cfg, t0)


@dataclass
class ConvergenceTable:
    dt: list
    terminal_difference: list
    observed_orders: list
    fitted_order: float | None
    residual_max: list
    residual_ratios: list
    recommended_dt: float | None
    warnings: list

    def to_dict(self):
        return dict(self.__dict__)


def convergence_study(cfg: ScenarioConfig, dt_ladder=None, workers: int | None = None) -> ConvergenceTable:
    ladder = [float(x) for x in (dt_ladder or cfg.convergence.dt_ladder)]
    if len(ladder) < 3:
        raise ValueError("convergence study needs at least three step sizes")
    for big, small in zip(ladder, ladder[1:]):
        if abs(big / small - 2.0) > 1e-9:
            raise ValueError("each dt in the ladder must halve the previous one")
    setup = build_setup(cfg)
    try:
        C_H = estimate_hardy_uniform(setup.K, setup.V, certify_times(cfg), setup.band,
                                     cfg.verification.eig_method, cfg.verification.refine_tolerance).value
    except UnsupportedPotential:
        C_H = None
    warnings = []
    finals, residuals = [], []
    base_stride = cfg.dynamics.sample_stride
    for k, dt in enumerate(ladder):
        # fixed sample spacing in steps keeps the trapezoid error on the same dt^2 footing
        record, traj = record_evolution(setup, cfg, C_H if C_H else 1.0, dt=dt,
                                        sample_stride=base_stride, workers=workers)
        finals.append(traj.final)
        residuals.append(float(np.abs(record.residual).max()))
    diffs = [norm_l2(WaveFunction(setup.grid, a.amplitudes - b.amplitudes)) for a, b in zip(finals, finals[1:])]
    floor = 1e-12 * norm_l2(setup.phi)
    orders, fitted = [], None
    if all(d > floor for d in diffs):
        orders = [math.log2(d0 / d1) for d0, d1 in zip(diffs, diffs[1:])]
        fitted = float(np.polyfit(np.log(ladder[:-1]), np.log(diffs), 1)[0])
        if any(d1 >= d0 for d0, d1 in zip(diffs, diffs[1:])):
            warnings.append("terminal differences are not monotone: outside asymptotic regime")
    else:
        warnings.append("terminal differences at roundoff level: integrator exact for this scenario")
    ratios = [r0 / r1 if r1 > 0 else math.inf for r0, r1 in zip(residuals, residuals[1:])]
    tol = cfg.convergence.residual_tolerance
    ok = [dt for dt, r in zip(ladder, residuals) if r <= tol]
    for w in warnings:
        log.warning(w)
    return ConvergenceTable(ladder, diffs, orders, fitted, residuals, ratios, max(ok) if ok else None, warnings)


def converge_scenario(cfg: ScenarioConfig, out_dir=None, dt_ladder=None, workers=None) -> ScenarioResult:
    t0 = time.perf_counter()
    report = _base_report(cfg, "converge")
    try:
        table = convergence_study(cfg, dt_ladder, workers)
    except (ValueError, RuntimeError, FloatingPointError, EvolutionError) as exc:
        return _error_result(report, exc, out_dir, cfg, t0)
    report["convergence"] = table.to_dict()
    report["exit_code"] = EXIT_OK
    result = _finish(ScenarioResult(EXIT_OK, report), out_dir, cfg, t0)
    if out_dir is not None:
        lines = ["dt,terminal_difference,residual_max"]
        for i, dt in enumerate(table.dt):
            diff = table.terminal_difference[i] if i < len(table.terminal_difference) else math.nan
            lines.append(f"{_fmt(dt)},{_fmt(diff)},{_fmt(table.residual_max[i])}")
        p = Path(out_dir) / "convergence.csv"
        p.write_text("\n".join(lines) + "\n")
        result.paths["convergence"] = str(p)
    return result


def _sweep_row(base: dict, axes: list[str], values: tuple) -> dict:
    row = {"axes": dict(zip(axes, values))}
    try:
        data = base
        for key, value in zip(axes, values):
            data = set_path(data, key, value)
        res = run_scenario(config_from_dict(data), out_dir=None, workers=1)
    except Exception as exc:  # per-row failures are recorded, never fatal
        row.update(status=f"error: {type(exc).__name__}: {exc}", exit_code=EXIT_ERROR)
        return row
    rep = res.report
    row["status"] = "ok" if "error" not in rep else f"error: {rep['error']}"
    row["exit_code"] = res.exit_code
    a = rep.get("assumptions", {})
    c = rep.get("constants", {})
    row.update(
        certified=a.get("certified", {}),
        hardy_constant=a.get("hardy_constant"),
        delta=a.get("delta"),
        integral=a.get("integrability_constant"),
        a_tilde=c.get("a_tilde"),
        R_tilde=c.get("R_tilde"),
        min_slack={ch["name"]: ch["min_slack"] for ch in rep.get("checks", [])},
    )
    return row


def sweep(base_cfg: ScenarioConfig, axes: dict | None = None, threads: int = 1) -> list[dict]:
    """Cartesian product over ``axes`` (dotted config path -> values); rows keep product order."""
    axes = axes or base_cfg.sweep.axes
    if not axes:
        raise ValueError("sweep needs at least one axis")
    base = base_cfg.to_dict()
    base.pop("sweep", None)
    names = list(axes)
    points = list(itertools.product(*(axes[k] for k in names)))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda v: _sweep_row(base, names, v), points))


def sweep_scenario(cfg: ScenarioConfig, out_dir=None, axes=None, threads: int = 1) -> ScenarioResult:
    t0 = time.perf_counter()
    report = _base_report(cfg, "sweep")
    try:
        rows = sweep(cfg, axes, threads)
    except ValueError as exc:
        return _error_result(report, exc, out_dir, cfg, t0)
    report["sweep"] = rows
    report["exit_code"] = EXIT_OK
    result = _finish(ScenarioResult(EXIT_OK, report), out_dir, cfg, t0)
    if out_dir is not None:
        names = list(rows[0]["axes"]) if rows else []
        header = names + ["status", "exit_code", "hardy_constant", "delta", "integral", "a_tilde", "R_tilde"]
        lines = [",".join(header)]
        for r in rows:
            vals = [json.dumps(_jsonable(r["axes"][n])).replace(",", ";") for n in names]
            vals += [r["status"].replace(",", ";"), str(r["exit_code"])]
            vals += ["" if r.get(k) is None else _fmt(r[k]) for k in header[len(names) + 2:]]
            lines.append(",".join(vals))
        p = Path(out_dir) / "sweep.csv"
        p.write_text("\n".join(lines) + "\n")
        result.paths["sweep"] = str(p)
    return result
