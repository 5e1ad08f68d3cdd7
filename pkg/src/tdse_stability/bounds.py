"""Observables along the flow, stability constants, and the bound checks.

Notation used throughout:

* ``F(t) = (p^{2 theta} u, u)`` -- kinetic form,
* ``G(t) = C_H (V(t) u, u)`` -- scaled potential form,
* ``E(t) = F/(2m) + (V(t) u, u)`` -- energy,

with ``u(t) = U(t, s) phi``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .potentials import PotentialModel, dt_eval_on_grid, eval_on_grid
from .spectral import (
    BandWindow,
    KineticOperator,
    SpectralGrid,
    WaveFunction,
    gaussian,
    kinetic_expectation,
    norm_l2,
    norm_lp,
    norm_sobolev,
)

PASS, FAIL, NOT_CERTIFIED = "pass", "fail", "not certified"
DEFAULT_SLACK = 1e-8


def _form(field: np.ndarray, u: WaveFunction) -> float:
    return float(np.sum(field * np.abs(u.amplitudes) ** 2) * u.grid.cell_volume)


def observables(u: WaveFunction, t: float, K: KineticOperator, V: PotentialModel,
                C_H: float | None, p_list=()) -> dict:
    u = u.in_position()
    F = kinetic_expectation(K, u)
    pot = _form(eval_on_grid(V, t, u.grid), u)
    dpot = _form(dt_eval_on_grid(V, t, u.grid), u)
    l2 = norm_l2(u)
    return {
        "t": float(t),
        "F": F,
        "G": math.nan if C_H is None else C_H * pot,
        "E": F / (2.0 * K.mass) + pot,
        "l2": l2,
        "potential": pot,
        "dpotential": dpot,
        "h_theta_split": l2 * l2 + F,
        "lp": {float(p): norm_lp(u, p) for p in p_list},
    }


@dataclass
class EvolutionRecord:
    t: np.ndarray
    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    l2: np.ndarray
    potential: np.ndarray
    dpotential: np.ndarray
    h_theta_split: np.ndarray
    lp: dict
    residual: np.ndarray | None = None
    C_H: float | None = None
    mass: float = 0.5
    theta: float = 1.0
    initial_norm: float = 1.0
    bracket_ratio_max: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows, C_H, mass, theta) -> "EvolutionRecord":
        col = lambda k: np.array([r[k] for r in rows], dtype=float)
        ps = sorted(rows[0]["lp"]) if rows else []
        rec = cls(
            t=col("t"), F=col("F"), G=col("G"), E=col("E"), l2=col("l2"),
            potential=col("potential"), dpotential=col("dpotential"),
            h_theta_split=col("h_theta_split"),
            lp={p: np.array([r["lp"][p] for r in rows]) for p in ps},
            C_H=C_H, mass=mass, theta=theta,
        )
        rec.initial_norm = float(rec.l2[0])
        if C_H is not None:
            rec.residual = identity_residual(rec, C_H, mass)
        return rec

    @property
    def norm_sq(self) -> float:
        return self.initial_norm**2


def identity_residual(record: EvolutionRecord, C_H: float, m: float) -> np.ndarray:
    """G(t) - [G(s) - (C_H/2m)(F(t) - F(s)) + C_H * trapezoid of (dV/dt u, u)]."""
    if record.dpotential is None or len(record.dpotential) != len(record.t):
        raise ValueError("record lacks samples of (dV/dt u, u)")
    t, integrand = record.t, record.dpotential
    quad = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (integrand[1:] + integrand[:-1]))])
    G = C_H * record.potential
    predicted = G[0] - C_H / (2.0 * m) * (record.F - record.F[0]) + C_H * quad
    res = G - predicted
    res[0] = 0.0
    return res


@dataclass
class StabilityConstants:
    C_H: float | None
    integral: float
    delta: float | None
    mass: float
    theta: float
    a: float
    R: float
    a1: float | None = None
    R1: float | None = None
    kappa: float | None = None
    a_tilde: float | None = None
    R_tilde: float | None = None
    a1_tilde: float | None = None
    R1_tilde: float | None = None
    c_m: float | None = None
    c_M: float | None = None
    energy_upper_factor: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def derive_constants(C_H, I_inf, delta, m, theta, band: BandWindow, a1=None, R1=None,
                     lower_certified=True, upper_certified=True) -> StabilityConstants:
    """Explicit constants from the two proof chains.

    Lower chain: F(t) >= kappa F(s) with kappa = C_H / (2 (2m + C_H)), and
    F(s) >= a^{2 theta} |phi|^2 for band data.
    Upper chain: F(t) <= [G(s) + (C_H/2m) F(s) + C_H I |phi|^2] / (delta C_H)
    with G(s) <= F(s) <= R^{2 theta} |phi|^2.
    """
    a2t, R2t = band.a ** (2 * theta), band.R ** (2 * theta)
    k = StabilityConstants(C_H, I_inf, delta, m, theta, band.a, band.R, a1, R1)
    have_hardy = C_H is not None and C_H > 0 and np.isfinite(I_inf)
    if not have_hardy:
        k.notes.append("Hardy constant or time integral unavailable: no constants derived")
        return k
    k.energy_upper_factor = 1.0 / (2 * m) + 1.0 / C_H
    if lower_certified:
        k.kappa = C_H / (2.0 * (2.0 * m + C_H))
        k.a_tilde = k.kappa * a2t
        k.c_m = min(1.0, k.kappa)
    else:
        k.notes.append("lower constants withheld: initial positivity not certified")
    if upper_certified and delta is not None and delta > 0:
        k.R_tilde = ((1.0 + C_H / (2 * m)) * R2t + C_H * I_inf) / (delta * C_H)
        k.R1_tilde = k.energy_upper_factor * k.R_tilde
        k.c_M = max(1.0, k.R_tilde / a2t)
    else:
        k.notes.append("upper constants withheld: strict positivity not certified")
    if k.a_tilde is not None and k.R_tilde is not None:
        k.a1_tilde = delta * k.a_tilde
    return k


@dataclass
class CheckResult:
    name: str
    status: str
    min_slack: float | None = None
    argmin_t: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return asdict(self)


def _slacks(values, lower=None, upper=None):
    """Relative slack per sample: (v - lower)/|lower| and (upper - v)/|upper|."""
    parts = []
    if lower is not None:
        parts.append((values - lower) / max(abs(lower), 1e-300))
    if upper is not None:
        parts.append((upper - values) / max(abs(upper), 1e-300))
    return np.minimum.reduce(parts) if parts else None


def _bounded_check(name, t, values, lower, upper, tol, details):
    sl = _slacks(values, lower, upper)
    j = int(np.argmin(sl))
    status = PASS if sl[j] >= -tol else FAIL
    return CheckResult(name, status, float(sl[j]), float(t[j]), details)


def _skip(name, reason):
    return CheckResult(name, NOT_CERTIFIED, details={"reason": reason})


def verify_kinetic_bounds(record: EvolutionRecord, k: StabilityConstants, certified: dict,
                          tol: float = DEFAULT_SLACK) -> list[CheckResult]:
    """a_tilde |phi|^2 <= F(t) <= R_tilde |phi|^2, each side gated by its certificates."""
    out = []
    base = certified.get("hardy") and certified.get("integrability")
    n2 = record.norm_sq
    if base and certified.get("initial_positivity") and k.a_tilde is not None:
        out.append(_bounded_check("kinetic_lower", record.t, record.F, k.a_tilde * n2, None, tol,
                                  {"bound": k.a_tilde * n2, "a_tilde": k.a_tilde}))
    else:
        out.append(_skip("kinetic_lower", "needs hardy, integrability, initial_positivity"))
    if base and certified.get("strict_positivity") and k.R_tilde is not None:
        out.append(_bounded_check("kinetic_upper", record.t, record.F, None, k.R_tilde * n2, tol,
                                  {"bound": k.R_tilde * n2, "R_tilde": k.R_tilde}))
    else:
        out.append(_skip("kinetic_upper", "needs hardy, integrability, strict_positivity"))
    return out


def verify_energy_bounds(record: EvolutionRecord, k: StabilityConstants, certified: dict,
                         tol: float = DEFAULT_SLACK, sandwich_tol: float = 1e-9) -> list[CheckResult]:
    """a1_tilde |phi|^2 <= E(t) <= R1_tilde |phi|^2 and delta F <= E <= (1/2m + 1/C_H) F."""
    needed = ("hardy", "integrability", "initial_positivity", "strict_positivity")
    if not all(certified.get(c) for c in needed) or k.a1_tilde is None or k.R1_tilde is None:
        reason = "needs " + ", ".join(needed)
        return [_skip("energy_bounds", reason), _skip("energy_sandwich", reason)]
    n2 = record.norm_sq
    bounds = _bounded_check("energy_bounds", record.t, record.E, k.a1_tilde * n2, k.R1_tilde * n2, tol,
                            {"a1_tilde": k.a1_tilde, "R1_tilde": k.R1_tilde, "a1": k.a1, "R1": k.R1})
    lo = k.delta * record.F
    hi = k.energy_upper_factor * record.F
    scale = np.maximum(np.abs(record.E), 1e-300)
    sl = np.minimum(record.E - lo, hi - record.E) / scale
    j = int(np.argmin(sl))
    sandwich = CheckResult("energy_sandwich", PASS if sl[j] >= -sandwich_tol else FAIL,
                           float(sl[j]), float(record.t[j]),
                           {"delta": k.delta, "upper_factor": k.energy_upper_factor})
    return [bounds, sandwich]


def verify_h_theta_bounds(record: EvolutionRecord, k: StabilityConstants, certified: dict,
                          tol: float = DEFAULT_SLACK) -> list[CheckResult]:
    """c_m N(s) <= |phi|^2 + F(t) <= c_M N(s) with the split norm N(s) = |phi|^2 + F(s)."""
    out = []
    base = certified.get("hardy") and certified.get("integrability")
    n2 = record.norm_sq
    split = n2 + record.F
    ref = n2 + record.F[0]
    if base and certified.get("initial_positivity") and k.c_m is not None:
        out.append(_bounded_check("h_theta_lower", record.t, split, k.c_m * ref, None, tol, {"c_m": k.c_m}))
    else:
        out.append(_skip("h_theta_lower", "needs hardy, integrability, initial_positivity"))
    if base and certified.get("strict_positivity") and k.c_M is not None:
        out.append(_bounded_check("h_theta_upper", record.t, split, None, k.c_M * ref, tol, {"c_M": k.c_M}))
    else:
        out.append(_skip("h_theta_upper", "needs hardy, integrability, strict_positivity"))
    return out


def verify_hardy_along_flow(record: EvolutionRecord, certified: dict, tol: float = 1e-9) -> CheckResult:
    """F(t) >= G(t) - tol * max F at every sample."""
    if not certified.get("hardy"):
        return _skip("hardy_along_flow", "needs hardy")
    scale = float(np.max(record.F))
    sl = (record.F - record.G) / scale
    j = int(np.argmin(sl))
    return CheckResult("hardy_along_flow", PASS if sl[j] >= -tol else FAIL, float(sl[j]), float(record.t[j]))


def sobolev_exponent(gamma: float, n: int) -> float:
    """p with 1/p + gamma/n = 1/2."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma >= n / 2:
        raise ValueError(f"gamma={gamma} >= n/2={n / 2}: the paired exponent p is infinite")
    return 1.0 / (0.5 - gamma / n)


def split_to_bracket_factor(theta: float) -> float:
    """e with (1 + x)^theta <= e (1 + x^theta) for x >= 0."""
    return max(1.0, 2.0 ** (theta - 1.0))


def gaussian_widths(grid: SpectralGrid, count: int = 10) -> np.ndarray:
    return np.geomspace(grid.spacing, grid.box_length / 8, count)


@lru_cache(maxsize=64)
def estimate_gn_constant(grid: SpectralGrid, gamma: float, p: float, band: BandWindow,
                         trials: int = 500, widths: int = 10, seed: int = 0) -> float:
    """Trial maximization of |v|_{L^p} / |v|_{H^gamma} on the grid.

    The family is ``trials`` random band states plus centred Gaussians of
    ``widths`` geometrically spaced widths.  This is an estimate of a
    supremum from below.
    """
    from .assumptions import BandSubspace

    sub = BandSubspace(grid, band)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        v = sub.to_wavefunction(sub.random_coefficients(rng))
        best = max(best, norm_lp(v, p) / norm_sobolev(v, gamma))
    for w in gaussian_widths(grid, widths):
        v = gaussian(grid, 0.0, float(w))
        best = max(best, norm_lp(v, p) / norm_sobolev(v, gamma))
    return best


def sobolev_constant(k: StabilityConstants, gamma: float, gn_constant: float) -> float | None:
    """c = c_GN * [e_theta c_M (1 + R^{2 theta})]^{gamma/(2 theta)}.

    The bracket H^gamma norm of u(t) is interpolated between L^2 (conserved)
    and the split H^theta norm (bounded by c_M), then converted to the
    initial H^gamma norm using band-limitedness of phi.
    """
    if gamma == 0:
        return gn_constant
    if k.c_M is None:
        return None
    lam = split_to_bracket_factor(k.theta) * k.c_M * (1.0 + k.R ** (2 * k.theta))
    return gn_constant * lam ** (gamma / (2.0 * k.theta))


def verify_sobolev(record: EvolutionRecord, gamma: float, p: float, k: StabilityConstants,
                   certified: dict, phi_h_gamma: float, gn_constant: float, dim: int,
                   tol: float = DEFAULT_SLACK) -> CheckResult:
    name = f"sobolev_gamma{gamma:g}_p{p:g}"
    expected_p = sobolev_exponent(gamma, dim)
    if abs(expected_p - p) > 1e-12 * expected_p:
        raise ValueError(f"p={p} does not satisfy 1/p + gamma/n = 1/2 (expected {expected_p})")
    if gamma > k.theta:
        raise ValueError(f"gamma={gamma} exceeds theta={k.theta}")
    if p not in record.lp:
        raise ValueError(f"record has no L^{p} samples")
    ratio = record.lp[p] / phi_h_gamma
    details = {"gn_constant_estimate": gn_constant, "ratio_max": float(ratio.max()),
               "ratio_first": float(ratio[0]), "ratio_last": float(ratio[-1])}
    needed = ("hardy", "integrability", "strict_positivity")
    if not all(certified.get(c) for c in needed):
        res = _skip(name, "needs " + ", ".join(needed))
        res.details.update(details)
        return res
    c = sobolev_constant(k, gamma, gn_constant)
    if c is None:
        return _skip(name, "upper constants unavailable")
    details["c"] = c
    res = _bounded_check(name, record.t, ratio, None, c, tol, details)
    return res
