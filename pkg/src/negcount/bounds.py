"""Upper bounds for N0(V) and Lieb-Thirring sums.

Every bound returns a :class:`BoundReport` with per-site contributions. Bounds
whose constants are only known to exist take them from the caller (usually the
output of :func:`calibrate_constant`) and mark them ``calibrated``.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .core import (
    DEFAULT_TOL,
    DivergenceError,
    Family,
    ModelSpec,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
    hier_distance_raw,
    lattice_norm,
    sorted_sites,
)
from .kernels import (
    heat_diagonal,
    Killing,
    c_sigma,
    regularized_resolvent,
    tail_time_integral,
    weighted_tail_integral,
)
from .spectra import n0_count


@dataclasses.dataclass
class BoundReport:
    """An evaluated bound: ``value = n0_term + sum(contributions)``.

    ``constants`` maps a name to ``(value, "exact" | "calibrated" | "user")``.
    """

    bound_id: str
    value: float
    sigma: float
    n0_term: float
    contributions: dict
    constants: dict = dataclasses.field(default_factory=dict)
    notes: str = ""
    method: str = "exact"
    alternative: "BoundReport | None" = None  # exact-constant counterpart, authoritative when present

    @classmethod
    def build(cls, bound_id: str, n0_term: float, contributions: Mapping, sigma: float = 0.0, **kw) -> "BoundReport":
        contributions = dict(contributions)
        value = n0_term + math.fsum(contributions.values()) if contributions else float(n0_term)
        return cls(bound_id, float(value), float(sigma), n0_term, contributions, **kw)

    def __post_init__(self):
        if not self.value >= self.n0_term:
            raise NumericalError(f"{self.bound_id}: value {self.value} below its n0 term {self.n0_term}")

    def to_dict(self) -> dict:
        return {
            "bound_id": self.bound_id,
            "value": self.value,
            "sigma": self.sigma,
            "n0_term": self.n0_term,
            "constants": {k: {"value": v, "source": s} for k, (v, s) in self.constants.items()},
            "method": self.method,
            "notes": self.notes,
            **({"exact_alternative": dict(self.alternative.to_dict(), authoritative=True)} if self.alternative else {}),
        }

    def contributions_csv(self) -> str:
        rows = []
        for site in sorted_sites(self.contributions):
            coords = site if isinstance(site, tuple) else (site,)
            rows.append(" ".join(str(c) for c in coords) + f" {float(self.contributions[site])!r}")
        return "\n".join(rows) + ("\n" if rows else "")


# --------------------------------------------------------------------------
# Bargmann-type bounds


def bargmann_general(
    model: ModelSpec,
    v: Potential,
    x0=None,
    tol: ToleranceConfig = DEFAULT_TOL,
    allow_transient: bool = False,
) -> BoundReport:
    """1 + sum_x min(1, V(x) R~(x, x0)) for a recurrent walk.

    On general graphs R~ is the killed Green function at x, so the bound is
    evaluated whether or not the table carries a defect.
    """
    x0 = model.origin() if x0 is None else model.normalize_site(x0)
    if model.family is not Family.GENERAL and not model.is_recurrent() and not allow_transient:
        raise DivergenceError(f"{model.family.value} walk is transient: R~ is not defined")
    v = v.normalized(model)
    contrib = {}
    for x, val in v.items():
        contrib[x] = min(1.0, val * regularized_resolvent(model, x, x0, tol))
    return BoundReport.build("bargmann_general", 1, contrib, notes=f"x0={x0!r}")


def _grid_arrays(v) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(v, "nodes") and hasattr(v, "values"):
        return np.asarray(v.nodes, float), np.asarray(v.values, float)
    nodes, values = v
    return np.asarray(nodes, float), np.asarray(values, float)


def bargmann_1d(v, lattice: bool = True) -> BoundReport:
    """1 + sum_Z |x| V(x) (lattice) or 1 + int |x| V dx (grid, trapezoid rule).

    ``v`` is a :class:`Potential` on Z1 when ``lattice`` is set, otherwise a
    grid potential or a ``(nodes, values)`` pair.
    """
    if lattice:
        if not isinstance(v, Potential):
            raise ValidationError("lattice Bargmann bound needs a Potential")
        contrib = {x: abs(x) * val for x, val in v.normalized(ModelSpec.z1()).items()}
        return BoundReport.build("bargmann_1d_lattice", 1, contrib)
    nodes, values = _grid_arrays(v)
    integral = float(integrate.trapezoid(np.abs(nodes) * values, nodes)) if nodes.size > 1 else 0.0
    return BoundReport.build("bargmann_1d_continuum", 1, {"integral": integral})


def refined_bargmann_1d_continuum(v, sigma: float = 1.0) -> BoundReport:
    """1 + [(sigma pi)^{-1/2} int_{x^2V<=sigma} x^2 V^{3/2} + int_{x^2V>sigma} |x| V] / c(sigma).

    ``v`` is a grid potential (trapezoid rule on the region-masked integrands).
    """
    if not sigma > 0:
        raise ValidationError("sigma must be > 0")
    nodes, values = _grid_arrays(v)
    if nodes.size < 2:
        return BoundReport.build("refined_bargmann_1d", 1, {}, sigma=sigma)
    small_region = nodes**2 * values <= sigma
    f_small = np.where(small_region, nodes**2 * values**1.5, 0.0) / math.sqrt(sigma * math.pi)
    f_large = np.where(small_region, 0.0, np.abs(nodes) * values)
    c = c_sigma(sigma)
    contrib = {
        "small": float(integrate.trapezoid(f_small, nodes)) / c,
        "large": float(integrate.trapezoid(f_large, nodes)) / c,
    }
    return BoundReport.build("refined_bargmann_1d", 1, contrib, sigma=sigma, constants={"c_sigma": (c, "exact")})


def refined_bargmann_1d_functional(vfunc: Callable[[float], float], a: float, b: float, sigma: float = 1.0) -> BoundReport:
    """Same bound for a callable V supported in [a, b] (adaptive quadrature;
    b may be infinite)."""
    if not sigma > 0:
        raise ValidationError("sigma must be > 0")

    def piece(which):
        def f(x):
            vx = vfunc(x)
            if vx <= 0:
                return 0.0
            small = x * x * vx <= sigma
            if which == "small":
                return x * x * vx**1.5 / math.sqrt(sigma * math.pi) if small else 0.0
            return 0.0 if small else abs(x) * vx

        val, _ = integrate.quad(f, a, b, limit=500)
        return val

    c = c_sigma(sigma)
    contrib = {"small": piece("small") / c, "large": piece("large") / c}
    if not all(math.isfinite(t) for t in contrib.values()):
        raise NumericalError("refined Bargmann integral did not converge")
    return BoundReport.build("refined_bargmann_1d", 1, contrib, sigma=sigma, constants={"c_sigma": (c, "exact")})


# --------------------------------------------------------------------------
# CLR-type bounds


def clr_estimate(
    model: ModelSpec,
    v: Potential,
    sigma: float = 1.0,
    killed=None,
    tol: ToleranceConfig = DEFAULT_TOL,
    box=None,
) -> BoundReport:
    """CLR-type bound from heat-kernel tails.

    * unkilled (transient walks only): (1/c(sigma)) sum V(x) int_{sigma/V}^inf p0
    * Dirichlet point x0: 1 + (1/c(sigma)) sum V(x) int_{sigma/V}^inf p1
    * killing potential q: N0(q) + (2/c(2 sigma)) sum V(x) int_{sigma/V}^inf p1

    ``sigma = 0`` is accepted for the killed forms (c(0) = 1).
    """
    sigma = float(sigma)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    v = v.normalized(model)
    if killed is None:
        if model.is_recurrent():
            raise DivergenceError(
                f"CLR bound is infinite: the {model.family.value} walk is recurrent"
            )
        c = c_sigma(sigma, tol)
        contrib = {x: val * tail_time_integral(model, "p0", x, sigma / val, tol) / c for x, val in v.items()}
        return BoundReport.build("clr", 0, contrib, sigma=sigma, constants={"c_sigma": (c, "exact")})
    killing = killed if isinstance(killed, Killing) else (
        Killing.potential(killed) if isinstance(killed, Potential) else Killing.point(killed)
    )
    killing = killing.normalized(model)
    if killing.x0 is not None:
        n0, factor, c = 1, 1.0, c_sigma(sigma, tol)
        bound_id = "clr_dirichlet"
    else:
        n0 = n0_count(model, killing.as_potential(), tol, eigenvalues=False).n0
        factor, c = 2.0, c_sigma(2 * sigma, tol)
        bound_id = "clr_killed"
    contrib = {}
    for x, val in v.items():
        contrib[x] = factor * val * tail_time_integral(model, killing, x, sigma / val, tol, box) / c
    name = "c_sigma" if killing.x0 is not None else "c_2sigma"
    return BoundReport.build(bound_id, n0, contrib, sigma=sigma, constants={name: (c, "exact")})


# --------------------------------------------------------------------------
# closed-form family bounds

FAMILY_BOUNDS = ("z2_log", "z2_refined", "frac_transient", "frac_recurrent", "hier_1z1")
_PRIMARY_CONSTANT = {
    "z2_log": "C",
    "z2_refined": "C",
    "frac_transient": "C",
    "frac_recurrent": "C",
    "hier_1z1": "C1",
}


def bound_model(bound_id: str, params: Mapping) -> ModelSpec:
    if bound_id in ("z2_log", "z2_refined"):
        return ModelSpec.z2()
    if bound_id in ("frac_transient", "frac_recurrent"):
        return ModelSpec.fractional(float(params["alpha"]))
    if bound_id == "hier_1z1":
        return ModelSpec.hierarchical(int(params["nu"]), float(params["p"]), int(params.get("levels", 1)))
    raise ValidationError(f"unknown family bound {bound_id!r}")


def _z2_bracket(x) -> float:
    return 2.0 + lattice_norm(x)


def _hier_weight(rho: float, s_h: float, p: float) -> float:
    if rho <= 0:
        return 0.0
    if abs(s_h - 2.0) < 1e-12:
        w = math.log(rho) / math.log(1.0 / math.sqrt(p))
    else:
        e = 2.0 - s_h
        w = (rho**e - 1.0) / ((1.0 / math.sqrt(p)) ** e - 1.0)
    # near x0 the functional goes negative (rho < 1); a bound term cannot help
    return max(0.0, w)


def family_closed_bound(bound_id: str, v: Potential, params: Mapping) -> BoundReport:
    """Closed-form family bounds with caller-supplied constants.

    ``z2_log``: 1 + C sum ln(2+|x|) V.
    ``z2_refined``: 1 [+ #{V>=h}] + C1 sum_{V<sigma/<x>} V ln^2<x>/ln(sigma/V)
    + C2 sum_{sigma/<x> <= V [< h]} V ln<x>, with <x> = 2+|x|; ``C`` scales both.
    ``frac_transient`` (alpha < 1/2): sum min(1, C V^{1/(2 alpha)}).
    ``frac_recurrent`` (1/2 <= alpha <= 1): 1 + sum min(1, C V w(x)),
    w = ((1+|x|)^{2alpha-1}-1)/(2alpha-1), or ln(1+|x|) at alpha = 1/2.
    ``hier_1z1``: 1 + #{V>=1} + C1 sum_{V<1} V g(rho(x0,x)) with the
    spectral-dimension dependent profile g.

    ``params["source"]`` tags the constants (default ``calibrated``).
    """
    if bound_id not in FAMILY_BOUNDS:
        raise ValidationError(f"unknown family bound {bound_id!r}; choose from {FAMILY_BOUNDS}")
    model = bound_model(bound_id, params)
    v = v.normalized(model)
    source = params.get("source", "calibrated")
    key = _PRIMARY_CONSTANT[bound_id]
    if key not in params and not (bound_id == "z2_refined" and "C1" in params):
        raise ValidationError(f"{bound_id} needs the constant {key!r} (supply it or calibrate)")

    if bound_id == "z2_log":
        c = float(params["C"])
        contrib = {x: c * math.log(_z2_bracket(x)) * val for x, val in v.items()}
        return BoundReport.build(bound_id, 1, contrib, constants={"C": (c, source)}, method=source)

    if bound_id == "z2_refined":
        sigma = float(params.get("sigma", 1.0))
        c1 = float(params.get("C1", params.get("C")))
        c2 = float(params.get("C2", params.get("C")))
        h = params.get("h")
        n0 = 1
        contrib = {}
        for x, val in v.items():
            br = _z2_bracket(x)
            if h is not None and val >= float(h):
                n0 += 1
            elif val < sigma / br:
                contrib[x] = c1 * val * math.log(br) ** 2 / math.log(sigma / val)
            else:
                contrib[x] = c2 * val * math.log(br)
        consts = {"C1": (c1, source), "C2": (c2, source)}
        return BoundReport.build(bound_id, n0, contrib, sigma=sigma, constants=consts, method=source)

    if bound_id == "frac_transient":
        alpha = model.alpha
        if not alpha < 0.5:
            raise ValidationError("frac_transient needs alpha < 1/2")
        c = float(params["C"])
        contrib = {x: min(1.0, c * val ** (1 / (2 * alpha))) for x, val in v.items()}
        return BoundReport.build(bound_id, 0, contrib, constants={"C": (c, source)}, method=source)

    if bound_id == "frac_recurrent":
        alpha = model.alpha
        c = float(params["C"])

        def w(x):
            r = 1.0 + abs(x)
            if abs(alpha - 0.5) < 1e-14:
                return math.log(r)
            return (r ** (2 * alpha - 1) - 1) / (2 * alpha - 1)

        contrib = {x: min(1.0, c * val * w(x)) for x, val in v.items()}
        return BoundReport.build(bound_id, 1, contrib, constants={"C": (c, source)}, method=source)

    # hier_1z1
    nu, p = model.nu, model.p
    x0 = int(params.get("x0", 0))
    s_h = model.spectral_dimension()
    c1 = float(params["C1"])
    n0 = 1
    contrib = {}
    for x, val in v.items():
        if val >= 1.0:
            n0 += 1
            continue
        d = hier_distance_raw(x0, x, nu)
        rho = p ** (-d / 2.0) - 1.0
        contrib[x] = c1 * val * _hier_weight(rho, s_h, p)
    return BoundReport.build(bound_id, n0, contrib, constants={"C1": (c1, source)}, method=source)


def attach_exact_alternative(report: BoundReport, v: Potential, params: Mapping, tol: ToleranceConfig = DEFAULT_TOL) -> BoundReport:
    """Evaluate the exact-constant Bargmann bound next to a calibrated family
    bound when the family's walk is recurrent (so R~ exists)."""
    model = bound_model(report.bound_id, params)
    if model.is_recurrent():
        x0 = params.get("x0")
        x0 = tuple(x0) if isinstance(x0, list) else x0
        report.alternative = bargmann_general(model, v, x0=x0, tol=tol)
    return report


@dataclasses.dataclass
class CalibrationResult:
    bound_id: str
    constant: float
    per_potential: list  # minimal constant making each potential's bound hold
    counts: list

    def to_dict(self) -> dict:
        return {"bound_id": self.bound_id, "constant": self.constant, "per_potential": self.per_potential, "counts": self.counts}


def _minimal_constant(bound_id: str, v: Potential, params: Mapping, n0: int, rel_tol: float = 1e-10) -> float:
    key = _PRIMARY_CONSTANT[bound_id]

    def value(c):
        q = dict(params)
        q[key] = c
        if bound_id == "z2_refined":
            q.pop("C1", None), q.pop("C2", None)
        return family_closed_bound(bound_id, v, q).value

    if value(0.0) >= n0:
        return 0.0
    hi = 1.0
    while value(hi) < n0:
        hi *= 2.0
        if hi > 1e15:
            raise NumericalError(f"{bound_id}: no constant makes the bound reach N0 = {n0}")
    lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if value(mid) >= n0:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_constant(
    bound_id: str,
    corpus: Sequence[Potential],
    params: Mapping,
    counts: Sequence[int] | None = None,
    tol: ToleranceConfig = DEFAULT_TOL,
    model: ModelSpec | None = None,
) -> CalibrationResult:
    """Smallest constant making the bound dominate N0 on every corpus potential.

    For the linear functionals this is max (N0 - base)/functional; the
    saturating ones (``min(1, .)``) are solved by bisection, which covers both.
    ``counts`` may carry precomputed N0 values; otherwise they are computed with
    ``n0_count`` on ``model`` (default: the bound's family model).
    """
    if bound_id not in FAMILY_BOUNDS:
        raise ValidationError(f"unknown family bound {bound_id!r}")
    if not corpus:
        raise ValidationError("calibration corpus is empty")
    model = model or bound_model(bound_id, params)
    if counts is None:
        counts = [n0_count(model, v, tol, eigenvalues=False).n0 for v in corpus]
    mins = [_minimal_constant(bound_id, v, params, n) for v, n in zip(corpus, counts)]
    return CalibrationResult(bound_id, max(mins), mins, list(counts))


# --------------------------------------------------------------------------
# Lieb-Thirring bounds

LT_VARIANTS = ("lit", "lithi", "lit9", "lithi9", "lit9a", "lithi9a")


def lieb_thirring_bound(
    variant: str,
    model: ModelSpec,
    v: Potential,
    gamma: float,
    Lambda: float | None = None,
    sigma: float = 0.0,
    x0=None,
    tol: ToleranceConfig = DEFAULT_TOL,
) -> BoundReport:
    """Bounds on S_gamma = sum |lambda_j|^gamma.

    Killed variants (the walk is stopped at ``x0``; they need V <= Lambda):

    * ``lit9``: Lambda^g + (1/c(s)) sum V^{1+g} int_{s/V}^inf p1
    * ``lithi9``: Lambda^g + (2 g Gamma(g)/c(s)) sum V int_{s/V}^inf t^{-g} p1
    * ``lit9a`` / ``lithi9a``: the sigma = 0 cases; lit9a uses R~(x, x0).

    Unkilled variants ``lit`` and ``lithi`` drop the Lambda^g term and use p0;
    they require a transient walk.
    """
    if variant not in LT_VARIANTS:
        raise ValidationError(f"unknown Lieb-Thirring variant {variant!r}; choose from {LT_VARIANTS}")
    if not gamma > 0:
        raise ValidationError("gamma must be > 0")
    v = v.normalized(model)
    if variant in ("lit9a", "lithi9a"):
        sigma = 0.0
    sigma = float(sigma)
    c = c_sigma(sigma, tol)
    g2 = 2.0 * gamma * gamma_fn(gamma)
    consts = {"c_sigma": (c, "exact")}
    if variant in ("lit", "lithi"):
        if model.is_recurrent():
            raise DivergenceError(f"{variant} is infinite: the {model.family.value} walk is recurrent")
        contrib = {}
        for x, val in v.items():
            lower = sigma / val
            if variant == "lit":
                contrib[x] = val ** (1 + gamma) * tail_time_integral(model, "p0", x, lower, tol) / c
            else:
                contrib[x] = g2 * val * _p0_weighted_tail(model, x, lower, gamma) / c
        return BoundReport.build(variant, 0.0, contrib, sigma=sigma, constants=consts)

    lam = v.max() if Lambda is None else float(Lambda)
    if v.max() > lam * (1 + 1e-15):
        raise ValidationError(f"V exceeds Lambda = {lam} (max V = {v.max()})")
    x0 = model.origin() if x0 is None else model.normalize_site(x0)
    killing = Killing.point(x0)
    contrib = {}
    for x, val in v.items():
        lower = sigma / val
        if variant == "lit9a":
            contrib[x] = val ** (1 + gamma) * regularized_resolvent(model, x, x0, tol)
        elif variant == "lit9":
            contrib[x] = val ** (1 + gamma) * tail_time_integral(model, killing, x, lower, tol) / c
        else:
            inner = weighted_tail_integral(model, killing, x, lower, gamma, tol)
            contrib[x] = g2 * val * inner / c if inner > 0 else 0.0
    consts["Gamma"] = (gamma_fn(gamma), "exact")
    return BoundReport.build(variant, lam**gamma, contrib, sigma=sigma, constants=consts)


def _p0_weighted_tail(model: ModelSpec, x, lower: float, gamma: float) -> float:
    f = lambda t: t**-gamma * heat_diagonal(model, t, x)
    edges = [lower] + [e for e in (1.0, 10.0, 100.0, 1e3, 1e4) if e > lower]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, a, b, limit=200)[0]
    total += integrate.quad(f, edges[-1], math.inf, limit=400)[0]
    return total


def bargmann_1d_functional(vfunc: Callable[[float], float], a: float, b: float) -> BoundReport:
    """1 + int_a^b |x| V(x) dx for a callable V (adaptive quadrature)."""
    val, _ = integrate.quad(lambda x: abs(x) * vfunc(x), a, b, limit=500)
    return BoundReport.build("bargmann_1d_continuum", 1, {"integral": val})
