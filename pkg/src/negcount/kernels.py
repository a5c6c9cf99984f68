"""Resolvents, regularized resolvents, heat kernels and their time integrals.

Conventions: H0 = -Laplacian >= 0, p0(t, x, y) = exp(-t H0)(x, y) and
R_lambda(x, y) = -int_0^inf exp(-lambda t) p0(t, x, y) dt < 0.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy import integrate
from scipy.special import exp1, gammaincc, ive
from scipy.special import gamma as gamma_fn

from .core import (
    DEFAULT_TOL,
    BoxSpec,
    DivergenceError,
    Family,
    ModelSpec,
    NonConvergenceError,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
    hier_distance_raw,
    lattice_norm,
    lattice_norm_inf,
    require_family,
)
from .operators import add_killing, assemble_h0, dirichlet_at

PI = math.pi
# absolute accuracy requested from individual quadratures
QUAD_EPS = 1e-13


@dataclasses.dataclass(frozen=True)
class ResolventValue:
    lam: float
    x: object
    y: object
    value: float
    method: str


@dataclasses.dataclass
class RegularizedResolvent:
    x0: object
    table: dict
    method: str = ""

    def __post_init__(self):
        if self.table.get(self.x0, 0.0) != 0.0:
            raise NumericalError("regularized resolvent must vanish at x0")
        bad = [x for x, v in self.table.items() if not (math.isfinite(v) and v >= 0)]
        if bad:
            raise NumericalError(f"regularized resolvent negative or infinite at {bad[:3]}")

    def to_csv(self) -> str:
        rows = []
        for site, value in self.table.items():
            coords = site if isinstance(site, tuple) else (site,)
            rows.append(" ".join(str(c) for c in coords) + f" {float(value)!r}")
        return "\n".join(rows) + "\n"


@dataclasses.dataclass
class HeatDiagonal:
    model: str
    x: object
    samples: dict


@dataclasses.dataclass
class Green2DExpansion:
    u: dict
    alpha_const: float
    v: dict

    def to_csv(self) -> str:
        rows = [f"{x[0]} {x[1]} {float(self.u[x])!r} {float(self.v[x])!r}" for x in self.u]
        return "\n".join(rows) + "\n"


@dataclasses.dataclass
class LogPeriodicProfile:
    s_h: float
    phases: np.ndarray
    profiles: np.ndarray  # one row per complete period
    correlations: np.ndarray  # between consecutive rows

    @property
    def min_correlation(self) -> float:
        return float(self.correlations.min()) if self.correlations.size else float("nan")


@dataclasses.dataclass(frozen=True)
class Killing:
    """How the walk is killed: a Dirichlet point ``x0`` or a potential ``q``.

    ``q`` is stored as a sorted tuple of (site, rate) pairs so the object is
    hashable and can key caches.
    """

    x0: object = None
    q: tuple | None = None

    def __post_init__(self):
        if (self.x0 is None) == (self.q is None):
            raise ValidationError("killing needs exactly one of x0 or q")

    @classmethod
    def point(cls, x0) -> "Killing":
        return cls(x0=x0)

    @classmethod
    def potential(cls, q: Potential) -> "Killing":
        return cls(q=tuple(sorted(q.items(), key=lambda kv: repr(kv[0]))))

    def as_potential(self) -> Potential:
        return Potential({self.x0: math.inf}) if self.q is None else Potential(dict(self.q))

    def normalized(self, model: ModelSpec) -> "Killing":
        if self.x0 is not None:
            return Killing(x0=model.normalize_site(self.x0))
        return Killing.potential(Potential(dict(self.q)).normalized(model))


# --------------------------------------------------------------------------
# quadrature helpers


def _panel_edges(scale: float, upper: float = PI, factor: float = 4.0) -> list:
    edges = [0.0]
    s = max(scale, 1e-30)
    while s < upper:
        edges.append(s)
        s *= factor
    edges.append(upper)
    return edges


def _panel_quad(f: Callable, edges: Sequence[float], wvar: float = 0.0, eps: float = QUAD_EPS) -> float:
    """Sum of adaptive quadratures over panels, optionally with a cos(wvar*phi) weight."""
    total, err_total = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        if wvar * (hi - lo) > 1.0:
            val, err = integrate.quad(f, lo, hi, weight="cos", wvar=wvar, epsabs=eps, epsrel=1e-12, limit=400)
        else:
            # less than one oscillation: QAWO gains nothing and mishandles endpoint singularities
            g = (lambda phi: f(phi) * math.cos(wvar * phi)) if wvar else f
            val, err = integrate.quad(g, lo, hi, epsabs=eps, epsrel=1e-12, limit=400)
        total += val
        err_total += err
    if not err_total < max(1e-7, 1e-9 * abs(total)):
        raise NumericalError(f"quadrature did not converge (error estimate {err_total:.2e})")
    return total


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0:
        raise ValidationError("lambda must be > 0")
    return lam


# --------------------------------------------------------------------------
# family resolvents


def z1_resolvent(lam: float, d: int) -> float:
    """a^{1-|d|}/(2-(2+lam)a) with a = (2+lam+sqrt(lam^2+4 lam))/2."""
    theta = 2.0 * math.asinh(math.sqrt(lam) / 2.0)  # a = exp(theta)
    return -math.exp(-abs(d) * theta) / (2.0 * math.sinh(theta))


def _z2_theta(lam: float, phi):
    return 2.0 * np.arcsinh(np.sqrt(lam + 4.0 * np.sin(phi / 2.0) ** 2) / 2.0)


def _z2_key(x) -> tuple[int, int]:
    a, b = abs(x[0]), abs(x[1])
    return (a, b) if a >= b else (b, a)


@functools.lru_cache(maxsize=200_000)
def _z2_resolvent(lam: float, a: int, b: int) -> float:
    # the phi_1 integral is done exactly: int e^{i a phi}/(A - 2cos phi) = 2 pi r^a / sqrt(A^2-4)
    # with A = 2 cosh(theta), r = e^{-theta}, sqrt(A^2-4) = 2 sinh(theta)
    def f(phi):
        th = _z2_theta(lam, phi)
        return np.exp(-a * th) / (2.0 * np.sinh(th))

    return -_panel_quad(f, _panel_edges(math.sqrt(lam) / 4), wvar=b) / PI


@functools.lru_cache(maxsize=200_000)
def _z2_resolvent_difference(lam: float, a: int, b: int) -> float:
    """R_lam(x,0) - R_lam(0,0) >= 0, evaluated without cancellation (lam >= 0)."""
    if a == 0 and b == 0:
        return 0.0

    def f(phi):
        th = _z2_theta(lam, phi)
        num = -np.expm1(-a * th) + np.exp(-a * th) * 2.0 * np.sin(b * phi / 2.0) ** 2
        den = 2.0 * np.sinh(th)
        return np.where(th > 0, num / np.where(th > 0, den, 1.0), a / 2.0)

    scale = max(math.sqrt(lam), 1e-3) / 4
    edges = sorted(set(_panel_edges(scale) + [min(PI, k * PI / max(b, 1)) for k in range(1, max(b, 1))]))
    return _panel_quad(f, edges) / PI


def _frac_symbol(alpha: float, phi):
    return (2.0 * np.sin(phi / 2.0)) ** (2.0 * alpha)


@functools.lru_cache(maxsize=100_000)
def _fractional_resolvent(alpha: float, lam: float, d: int) -> float:
    f = lambda phi: 1.0 / (lam + _frac_symbol(alpha, phi))
    return -_panel_quad(f, _panel_edges(lam ** (1 / (2 * alpha)) / 4), wvar=d) / PI


def _hier_sum(nu: int, p: float, lam: float, start: int, weights_fn) -> float:
    s_max = start + 80
    if lam > 0:
        s_max = max(s_max, start + int(math.log(lam * 1e-17) / math.log(p)) + int(60 / math.log(nu)) + 2)
    else:
        s_max = max(s_max, start + int(60 / abs(math.log(nu * p))) + 2) if nu * p > 1 else s_max
    s = np.arange(start, s_max, dtype=float)
    return float(np.sum(weights_fn(s) / (p**s + lam)))


def hierarchical_resolvent(nu: int, p: float, lam: float, r: int) -> float:
    """R_lam(x, y) on the infinite hierarchical lattice, d_h(x, y) = r."""
    c = 1.0 - 1.0 / nu
    if r == 0:
        return -c * _hier_sum(nu, p, lam, 0, lambda s: nu**-s)
    # p(t,x,y) = -e^{-p^{r-1} t}/nu^r + sum_{k>=r+1} (nu^{-(k-1)} - nu^{-k}) e^{-p^{k-1} t}
    near = -1.0 / (nu**r * (p ** (r - 1) + lam))
    return -(near + c * _hier_sum(nu, p, lam, r, lambda s: nu**-s))


@functools.lru_cache(maxsize=64)
def _general_inverse(model: ModelSpec, lam: float) -> np.ndarray:
    h0 = assemble_h0(model).toarray()
    return -np.linalg.inv(h0 + lam * np.eye(h0.shape[0]))


def resolvent_value(model: ModelSpec, lam: float, x, y) -> float:
    """R_lam(x, y) as a float (see :func:`resolvent`)."""
    lam = _check_lambda(lam)
    x, y = model.normalize_site(x), model.normalize_site(y)
    fam = model.family
    if fam is Family.Z1:
        return z1_resolvent(lam, x - y)
    if fam is Family.Z2:
        return _z2_resolvent(lam, *_z2_key((x[0] - y[0], x[1] - y[1])))
    if fam is Family.FRACTIONAL:
        return _fractional_resolvent(model.alpha, lam, abs(x - y))
    if fam is Family.HIERARCHICAL:
        return hierarchical_resolvent(model.nu, model.p, lam, hier_distance_raw(x, y, model.nu))
    inv = _general_inverse(model, lam)
    idx = model.generator_table.index
    return float(inv[idx[x], idx[y]])


_METHOD = {
    Family.Z1: "closed_form",
    Family.Z2: "quadrature",
    Family.FRACTIONAL: "quadrature",
    Family.HIERARCHICAL: "series",
    Family.GENERAL: "dense",
}


def resolvent(model: ModelSpec, lam: float, x, y) -> ResolventValue:
    """R_lambda(x, y) for the infinite model (general graphs: the finite graph).

    Z1 closed form; Z2 one Fourier integral done exactly, the other by adaptive
    quadrature; fractional by quadrature of the symbol; hierarchical by the
    eigenspace series.
    """
    value = resolvent_value(model, lam, x, y)
    if not value < 0:
        raise NumericalError(f"resolvent must be negative, got {value}")
    return ResolventValue(float(lam), x, y, value, _METHOD[model.family])


def dirichlet_resolvent_diag(model: ModelSpec, lam: float, x, x0) -> float:
    """R^{(1)}_lam(x, x) for the walk killed at x0 (rank-one formula)."""
    x, x0 = model.normalize_site(x), model.normalize_site(x0)
    if x == x0:
        return 0.0
    rxx = resolvent_value(model, lam, x, x)
    rx0 = resolvent_value(model, lam, x, x0)
    r00 = resolvent_value(model, lam, x0, x0)
    return rxx - rx0 * rx0 / r00


# --------------------------------------------------------------------------
# regularized resolvent


def extrapolate_to_zero(
    func: Callable[[float], float],
    lam0: float,
    basis: Sequence[Callable[[float], float]],
    tol: float,
    max_levels: int = 40,
) -> float:
    """Limit of ``func`` as lambda -> 0 by generalized Richardson extrapolation.

    ``func`` is sampled at lam0 * 2^-k; the last ``len(basis)+1`` samples are
    fitted by c0 + sum c_j basis_j(lambda) and the iteration stops when two
    successive c0 differ by less than ``tol``.
    """
    m = len(basis) + 1
    lams, vals = [], []
    prev = None
    history = []
    for k in range(max_levels):
        lam = lam0 * 2.0**-k
        lams.append(lam)
        vals.append(func(lam))
        if len(vals) < m:
            continue
        a = np.array([[1.0] + [b(l) for b in basis] for l in lams[-m:]])
        est = float(np.linalg.solve(a, np.array(vals[-m:]))[0])
        history.append(est)
        if prev is not None and abs(est - prev) < tol:
            return est
        prev = est
    raise NonConvergenceError("lambda -> 0 extrapolation is not Cauchy", last=history[-3:])


def _z2_rtilde(x) -> float:
    a, b = _z2_key(x)
    return 2.0 * _z2_resolvent_difference(0.0, a, b)


@functools.lru_cache(maxsize=100_000)
def _fractional_rtilde(alpha: float, d: int) -> float:
    if d == 0:
        return 0.0
    f = lambda phi: np.sin(d * phi / 2.0) ** 2 / _frac_symbol(alpha, phi)
    edges = sorted(set([0.0, 1e-3, 1e-2, 0.1] + [min(PI, 2 * PI * k / d) for k in range(1, d + 1)] + [PI]))
    return 4.0 / PI * _panel_quad(f, edges)


def hierarchical_rtilde(nu: int, p: float, r: int) -> float:
    """2 lim [R(x,x0) - R(x0,x0)] for d_h(x, x0) = r on a recurrent hierarchical lattice.

    Equals 2(1-1/nu) sum_{s=0}^{r-2} (nu p)^{-s} + 2 (nu p)^{-(r-1)}.
    """
    if r == 0:
        return 0.0
    q = 1.0 / (nu * p)
    head = sum(q**s for s in range(r - 1))
    return 2.0 * (1.0 - 1.0 / nu) * head + 2.0 * q ** (r - 1)


def _general_rtilde_direct(model: ModelSpec, x, x0) -> float:
    h1 = dirichlet_at(assemble_h0(model), x0)
    e = np.zeros(h1.n)
    e[h1.index[x]] = 1.0
    sol = spla.spsolve(h1.tocsr().tocsc(), e)
    return float(sol[h1.index[x]])


def regularized_resolvent(
    model: ModelSpec, x, x0, tol: ToleranceConfig = DEFAULT_TOL, method: str = "auto"
) -> float:
    """R~(x, x0) = -R^{(1)}_0(x, x): total expected time at x of the walk killed at x0.

    For translation-invariant recurrent families this is
    2 lim_{lambda->0} [R_lambda(x, x0) - R_lambda(x0, x0)].

    ``method``: "auto" picks the exact route per family; "extrapolate" forces
    the lambda -> 0 Richardson route; "direct" (general graphs) solves the
    Dirichlet-deleted system at lambda = 0.
    """
    x, x0 = model.normalize_site(x), model.normalize_site(x0)
    fam = model.family
    if x == x0:
        return 0.0
    if fam is not Family.GENERAL and not model.is_recurrent():
        raise ValidationError(f"{fam.value} model is transient; R~ is defined for recurrent walks")
    if method == "extrapolate" or (method == "auto" and fam is Family.GENERAL):
        if fam is Family.GENERAL:
            # rank-one form: R(x,x0)^2/R(x0,x0) - R(x,x) is analytic in lambda on a finite graph
            f = lambda lam: -dirichlet_resolvent_diag(model, lam, x, x0)
            return extrapolate_to_zero(
                f, 0.05, (lambda l: l, lambda l: l * l, lambda l: l**3), tol.extrap_tol * 0.1
            )
        if fam is Family.Z1:
            d = abs(x - x0)
            f = lambda lam: 2.0 * (resolvent_value(model, lam, x, x0) - resolvent_value(model, lam, x0, x0))
            basis = (math.sqrt, lambda l: l, lambda l: l**1.5)
            return extrapolate_to_zero(f, min(0.01, 0.01 / d**2), basis, tol.extrap_tol * 0.1)
        raise ValidationError(f"extrapolation route not available for {fam.value}")
    if method == "direct":
        require_family(model, Family.GENERAL)
        return _general_rtilde_direct(model, x, x0)
    if fam is Family.Z1:
        return float(abs(x - x0))
    if fam is Family.Z2:
        return _z2_rtilde((x[0] - x0[0], x[1] - x0[1]))
    if fam is Family.FRACTIONAL:
        if model.alpha > 1:
            raise ValidationError("fractional R~ requires alpha <= 1")
        return _fractional_rtilde(model.alpha, abs(x - x0))
    if fam is Family.HIERARCHICAL:
        return hierarchical_rtilde(model.nu, model.p, hier_distance_raw(x, x0, model.nu))
    raise ValidationError(f"unknown method {method!r}")


def regularized_resolvent_table(
    model: ModelSpec, sites: Iterable, x0, tol: ToleranceConfig = DEFAULT_TOL
) -> RegularizedResolvent:
    x0 = model.normalize_site(x0)
    table = {model.normalize_site(s): regularized_resolvent(model, s, x0, tol) for s in sites}
    return RegularizedResolvent(x0, table, _METHOD[model.family])


# --------------------------------------------------------------------------
# c(sigma)


def c_sigma(sigma: float, tol: ToleranceConfig = DEFAULT_TOL) -> float:
    """c(sigma) = e^{-sigma} int_0^inf z e^{-z}/(z + sigma) dz."""
    sigma = float(sigma)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        return 1.0
    f = lambda z: z * math.exp(-z) / (z + sigma)
    # geometric panels resolve the knee at z ~ sigma; the exponential tail goes last
    edges = [0.0] + [sigma * 10.0**k for k in range(8) if sigma * 10.0**k < 1.0] + [1.0]
    parts = [integrate.quad(f, a, b, epsabs=tol.quad_tol * 1e-4, epsrel=1e-13) for a, b in zip(edges[:-1], edges[1:])]
    parts.append(integrate.quad(f, 1.0, math.inf, epsabs=tol.quad_tol * 1e-4, epsrel=1e-13))
    val, err = math.fsum(v for v, _ in parts), sum(e for _, e in parts)
    if err > tol.quad_tol:
        raise NumericalError("c(sigma) quadrature did not converge")
    return math.exp(-sigma) * val


def c_sigma_closed(sigma: float) -> float:
    """e^{-sigma}(1 - sigma e^{sigma} E1(sigma)), the closed form of c(sigma)."""
    if sigma == 0:
        return 1.0
    return math.exp(-sigma) * (1.0 - sigma * math.exp(sigma) * float(exp1(sigma)))


# --------------------------------------------------------------------------
# heat kernels


def _check_t(t: float) -> float:
    t = float(t)
    if t < 0 or math.isnan(t):
        raise ValidationError("t must be >= 0")
    return t


def z1_heat_kernel(t: float, d: int) -> float:
    """(1/2pi) int exp(-2t(1-cos phi)) cos(d phi) dphi = e^{-2t} I_d(2t)."""
    return float(ive(abs(d), 2.0 * t))


@functools.lru_cache(maxsize=100_000)
def _fractional_heat(alpha: float, t: float, d: int) -> float:
    if t == 0:
        return 1.0 if d == 0 else 0.0
    # exp(-t s(phi)) is below 1e-320 once t s(phi) > 737
    s_cut = 737.0 / t
    phi_cut = PI if s_cut >= 2.0 ** (2 * alpha) else 2.0 * math.asin(min(1.0, s_cut ** (1 / (2 * alpha)) / 2.0))
    f = lambda phi: np.exp(-t * _frac_symbol(alpha, phi))
    scale = t ** (-1 / (2 * alpha)) / 4
    return _panel_quad(f, _panel_edges(scale, phi_cut), wvar=d, eps=1e-16) / PI


def hierarchical_heat_kernel(nu: int, p: float, t: float, r: int) -> float:
    c = 1.0 - 1.0 / nu
    s_max = max(80, int(math.log(max(t, 1.0) * 1e17) / math.log(1 / p)) + int(60 / math.log(nu)) + 2)
    s = np.arange(s_max, dtype=float)
    terms = c * nu**-s * np.exp(-(p**s) * t)
    if r == 0:
        return float(terms.sum())
    return float(-math.exp(-(p ** (r - 1)) * t) / nu**r + terms[r:].sum())


@functools.lru_cache(maxsize=32)
def _general_eigh(model: ModelSpec):
    return np.linalg.eigh(assemble_h0(model).toarray())


def heat_kernel(model: ModelSpec, t: float, x, y) -> float:
    """p0(t, x, y) on the infinite model."""
    t = _check_t(t)
    x, y = model.normalize_site(x), model.normalize_site(y)
    fam = model.family
    if fam is Family.Z1:
        return z1_heat_kernel(t, x - y)
    if fam is Family.Z2:
        # coordinate generators commute: the 2-D kernel factorizes
        return z1_heat_kernel(t, x[0] - y[0]) * z1_heat_kernel(t, x[1] - y[1])
    if fam is Family.FRACTIONAL:
        return _fractional_heat(model.alpha, t, abs(x - y))
    if fam is Family.HIERARCHICAL:
        return hierarchical_heat_kernel(model.nu, model.p, t, hier_distance_raw(x, y, model.nu))
    w, vec = _general_eigh(model)
    idx = model.generator_table.index
    return float(np.sum(np.exp(-t * w) * vec[idx[x]] * vec[idx[y]]))


def heat_diagonal(model: ModelSpec, t: float, x) -> float:
    """p0(t, x, x)."""
    return heat_kernel(model, t, x, x)


def heat_diagonal_table(model: ModelSpec, x, t_grid: Iterable[float]) -> HeatDiagonal:
    return HeatDiagonal(model.family.value, x, {float(t): heat_diagonal(model, t, x) for t in t_grid})


# --------------------------------------------------------------------------
# killed kernels on a box

BOX_C = 4.0
EIG_LIMIT = 2500


def required_box(model: ModelSpec, t_max: float, sites: Iterable = ()) -> int:
    """Box size (radius, or levels for the hierarchical family) for killed kernels
    up to time ``t_max``: the walk must not feel the deleted exterior."""
    fam = model.family
    reach = max((lattice_norm_inf(s) for s in sites), default=0) if model.is_lattice else 0
    if fam in (Family.Z1, Family.Z2):
        return int(math.ceil(BOX_C * math.sqrt(2 * max(t_max, 1.0)))) + reach + 2
    if fam is Family.FRACTIONAL:
        return int(math.ceil(BOX_C * 4 * max(t_max, 1.0) ** (1 / (2 * model.alpha)))) + reach + 2
    if fam is Family.HIERARCHICAL:
        top = max(sites, default=0)
        lv = int(math.ceil(math.log(BOX_C * 8 * max(t_max, 1.0)) / math.log(1 / model.p)))
        while model.nu**lv <= top:
            lv += 1
        return lv
    return 0


def _box_model(model: ModelSpec, size: int) -> ModelSpec:
    if model.family is Family.HIERARCHICAL:
        return model.with_levels(size)
    if model.family is Family.GENERAL:
        return model
    return model.with_radius(size)


@functools.lru_cache(maxsize=16)
def _killed_operator(model: ModelSpec, killing: Killing, size: int):
    bm = _box_model(model, size)
    h0 = assemble_h0(bm, exterior_ranks=True) if model.family is Family.HIERARCHICAL else assemble_h0(bm)
    return add_killing(h0, killing.as_potential().normalized(model))


@functools.lru_cache(maxsize=8)
def _killed_eigh(model: ModelSpec, killing: Killing, size: int):
    h1 = _killed_operator(model, killing, size)
    w, vec = np.linalg.eigh(h1.toarray())
    return w, vec, h1.index


def _resolve_box(model, killing, t_max, x, box) -> int:
    sites = [x] + ([killing.x0] if killing.x0 is not None else [s for s, _ in killing.q])
    need = required_box(model, t_max, sites)
    if box is None:
        return need
    size = box.radius if isinstance(box, BoxSpec) else int(box)
    if size < need:
        raise ValidationError(f"box {size} too small for t = {t_max:g}: need at least {need}")
    return size


def killed_heat_diagonal(model: ModelSpec, killing, t: float, x, box=None, method: str = "auto") -> float:
    """p1(t, x, x) for H1 = H0 + q (or H0 with a Dirichlet point).

    Z1 with a Dirichlet point uses the reflection identity
    p1(t,x,x) = p0(t,0,0) - p0(t,2(x-x0),0). Otherwise the truncated H1 is
    diagonalized (``method="eig"``) or its exponential is applied to a unit
    vector by a Krylov/Taylor scheme (``method="expm"``) for large boxes.
    ``box`` (a :class:`BoxSpec`, a radius or, hierarchically, a level count)
    is validated against the walk's spread up to time t.
    """
    t = _check_t(t)
    killing = _as_killing(killing).normalized(model)
    x = model.normalize_site(x)
    if killing.x0 is not None and x == killing.x0:
        return 0.0
    if model.family is Family.Z1 and killing.x0 is not None and method in ("auto", "reflection"):
        return z1_heat_kernel(t, 0) - z1_heat_kernel(t, 2 * (x - killing.x0))
    size = _resolve_box(model, killing, t, x, box)
    h1 = _killed_operator(model, killing, size)
    if x not in h1.index:
        return 0.0
    if method == "eig" or (method in ("auto", "reflection") and h1.n <= EIG_LIMIT):
        w, vec, index = _killed_eigh(model, killing, size)
        row = vec[index[x]]
        return float(np.sum(np.exp(-t * w) * row * row))
    e = np.zeros(h1.n)
    e[h1.index[x]] = 1.0
    return float(spla.expm_multiply(-t * h1.tocsr().tocsc(), e)[h1.index[x]])


def killed_heat_diagonal_series(model: ModelSpec, killing, x, t_grid: Sequence[float], box=None) -> np.ndarray:
    """p1(t, x, x) on an evenly spaced t grid with one Krylov sweep (large boxes)."""
    t_grid = np.asarray(t_grid, dtype=float)
    killing = _as_killing(killing).normalized(model)
    x = model.normalize_site(x)
    size = _resolve_box(model, killing, float(t_grid.max()), x, box)
    h1 = _killed_operator(model, killing, size)
    e = np.zeros(h1.n)
    e[h1.index[x]] = 1.0
    steps = np.diff(t_grid)
    if len(t_grid) > 2 and not np.allclose(steps, steps[0]):
        raise ValidationError("t grid must be evenly spaced")
    out = spla.expm_multiply(
        -h1.tocsr().tocsc(), e, start=t_grid[0], stop=t_grid[-1], num=len(t_grid), endpoint=True
    )
    return out[:, h1.index[x]]


def _as_killing(k) -> Killing:
    if isinstance(k, Killing):
        return k
    if isinstance(k, Potential):
        return Killing.potential(k)
    return Killing.point(k)


# --------------------------------------------------------------------------
# time integrals


def _z1_killed_tail(d: int, lower: float, gamma: float = 0.0) -> float:
    """int_lower^inf t^{-gamma} p1(t,x,x) dt on Z1 killed at distance d (gamma < 1)."""
    if d == 0:
        return 0.0

    def f(phi):
        u = 4.0 * np.sin(phi / 2.0) ** 2
        weight = 2.0 * np.sin(d * phi) ** 2  # 1 - cos(2 d phi)
        if gamma == 0:
            g = np.exp(-lower * u) / u
        else:
            g = _upper_gamma_integral(gamma, lower, u)
        return np.where(u > 0, weight * g, 0.0)

    edges = sorted(set(_panel_edges(1e-3) + [min(PI, PI * k / d) for k in range(1, d)]))
    return _panel_quad(f, edges) / PI


def _upper_gamma_integral(gamma: float, lower: float, u):
    """int_lower^inf t^{-gamma} e^{-t u} dt for gamma < 1."""
    a = 1.0 - gamma
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = gamma_fn(a) * u ** (-a)
        return full * (gammaincc(a, lower * u) if lower > 0 else 1.0)


def _family_p0_tail(model: ModelSpec, x, lower: float) -> float:
    fam = model.family
    if fam is Family.FRACTIONAL:
        alpha = model.alpha
        f = lambda phi: np.exp(-lower * _frac_symbol(alpha, phi)) / _frac_symbol(alpha, phi)
        edges = _panel_edges(1e-4) if lower == 0 else _panel_edges(lower ** (-1 / (2 * alpha)) / 4)
        return _panel_quad(f, edges) / PI
    if fam is Family.HIERARCHICAL:
        nu, p = model.nu, model.p
        s_max = int(math.log(max(lower, 1.0) * 1e17) / math.log(1 / p)) + int(80 / math.log(nu * p)) + 2
        s = np.arange(s_max, dtype=float)
        return float(np.sum((1 - 1 / nu) * nu**-s * np.exp(-(p**s) * lower) / p**s))
    if fam is Family.GENERAL:
        w, vec = _general_eigh(model)
        row = vec[model.generator_table.index[x]]
        return float(np.sum(row * row * np.exp(-lower * w) / w))
    raise DivergenceError(f"p0 time integral diverges for {fam.value}")


def tail_time_integral(
    model: ModelSpec,
    kernel,
    x,
    lower: float,
    tol: ToleranceConfig = DEFAULT_TOL,
    box=None,
    method: str = "auto",
) -> float:
    """int_lower^inf p(t, x, x) dt for ``kernel`` = "p0" or a killing spec.

    The default route integrates the spectral representation in time exactly
    (Fourier symbol, hierarchical eigenspaces, or the eigenvectors of a
    truncated H1). For a Dirichlet point on a recurrent translation-invariant
    family the tail is R~(x, x0) minus the finite-time integral over
    [0, lower], the latter computed on a box. ``method="quadrature"`` instead
    integrates p(t) numerically up to a horizon and adds an analytic tail of
    the family's decay class (see :func:`tail_by_quadrature`).
    """
    lower = float(lower)
    if lower < 0:
        raise ValidationError("lower limit must be >= 0")
    x = model.normalize_site(x)
    if method == "quadrature":
        return tail_by_quadrature(model, kernel, x, lower, tol)[0]
    if isinstance(kernel, str):
        if kernel != "p0":
            raise ValidationError("kernel must be 'p0' or a killing spec")
        if model.is_recurrent():
            raise DivergenceError(
                f"int p0 dt = infinity: the {model.family.value} walk is recurrent"
            )
        if math.isinf(lower):
            return 0.0
        return _family_p0_tail(model, x, lower)
    killing = _as_killing(kernel).normalized(model)
    if math.isinf(lower):
        return 0.0
    if killing.x0 is not None:
        if x == killing.x0:
            return 0.0
        if model.family is Family.Z1:
            return _z1_killed_tail(abs(x - killing.x0), lower)
        if model.family is not Family.GENERAL and model.is_recurrent():
            total = regularized_resolvent(model, x, killing.x0, tol)
            if lower == 0:
                return total
            return total - _finite_time_integral(model, killing, x, lower, box)
    size = _resolve_box(model, killing, max(lower, 1.0), x, box) if box is not None else _tail_box(model, killing, x)
    w, vec, index = _killed_eigh(model, killing, size)
    if x not in index:
        return 0.0
    row = vec[index[x]]
    return float(np.sum(row * row * np.exp(-lower * w) / w))


def _tail_box(model, killing, x) -> int:
    """Box for whole-time integrals of killed kernels (truncation effect is
    the price; the caller can pass a larger ``box``)."""
    fam = model.family
    sites = [x] + ([killing.x0] if killing.x0 is not None else [s for s, _ in killing.q])
    if fam is Family.GENERAL:
        return 0
    if fam is Family.HIERARCHICAL:
        return max(required_box(model, 1.0, sites), min(10, model.levels + 4))
    reach = max(lattice_norm_inf(s) for s in sites)
    cap = 30 if fam is Family.Z2 else 600
    return max(model.radius, min(cap, 4 * reach + 10))


def _finite_time_integral(model, killing, x, upper, box) -> float:
    """int_0^upper p1(t, x, x) dt on a box large enough for time ``upper``."""
    size = _resolve_box(model, killing, upper, x, box)
    h1 = _killed_operator(model, killing, size)
    if h1.n <= EIG_LIMIT:
        w, vec, index = _killed_eigh(model, killing, size)
        row = vec[index[x]]
        return float(np.sum(row * row * -np.expm1(-upper * w) / w))
    # solve H1 y = (I - e^{-upper H1}) e_x
    e = np.zeros(h1.n)
    e[h1.index[x]] = 1.0
    a = h1.tocsr().tocsc()
    rhs = e - spla.expm_multiply(-upper * a, e)
    return float(spla.spsolve(a, rhs)[h1.index[x]])


def _decay_exponent(model: ModelSpec, killed: bool) -> float:
    fam = model.family
    if killed and fam is Family.Z1:
        return 1.5
    if fam is Family.FRACTIONAL:
        return 1.0 / (2.0 * model.alpha)
    if fam is Family.HIERARCHICAL:
        return model.spectral_dimension() / 2.0
    if fam is Family.Z1:
        return 0.5
    raise ValidationError(f"no decay class recorded for {fam.value}")


def tail_by_quadrature(model: ModelSpec, kernel, x, lower: float, tol: ToleranceConfig = DEFAULT_TOL, horizon: float | None = None):
    """Numeric int_lower^T p dt plus an analytic tail C T^{1-k}/(k-1) fitted at T.

    Returns ``(value, info)`` with the horizon, the decay exponent k and the
    fitted prefactor. Supported: transient p0 (fractional, hierarchical) and
    the Z1 kernel killed at a point.
    """
    killed = not isinstance(kernel, str)
    if killed:
        killing = _as_killing(kernel).normalized(model)
        if model.family is not Family.Z1 or killing.x0 is None:
            raise ValidationError("quadrature tails for killed kernels are implemented on Z1 only")
        p = lambda t: killed_heat_diagonal(model, killing, t, x)
    else:
        if model.is_recurrent():
            raise DivergenceError(f"int p0 dt = infinity: the {model.family.value} walk is recurrent")
        p = lambda t: heat_diagonal(model, t, x)
    k = _decay_exponent(model, killed)
    if k <= 1:
        raise DivergenceError("decay exponent <= 1: the tail integral diverges")
    horizon = horizon or max(1e4, 100 * lower)
    if model.family is Family.HIERARCHICAL:
        # log-periodic oscillation: fit over a full period instead of a point
        period = 1.0 / model.p
        horizon = period ** math.ceil(math.log(horizon) / math.log(period))
    # integrate in log-time for the long tail
    lo = max(lower, 1e-12)
    g = lambda s: p(math.exp(s)) * math.exp(s)
    head = 0.0
    if lower < 1e-12:
        head, _ = integrate.quad(p, 0.0, 1e-12)
    edges = np.linspace(math.log(lo), math.log(horizon), 24)
    body = sum(integrate.quad(g, a, b, epsabs=1e-14, epsrel=1e-11, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    if model.family is Family.HIERARCHICAL:
        # average prefactor of t^{k} p over one log period
        s = np.linspace(math.log(horizon), math.log(horizon * period), 65)[:-1]
        pref = float(np.mean([p(math.exp(si)) * math.exp(si) ** k for si in s]))
        tail = pref * horizon ** (1 - k) / (k - 1)
    else:
        # p(t) ~ A t^{-k} + B t^{-k-1}, fitted at T/2 and T
        half = horizon / 2
        ca, cb = p(horizon) * horizon**k, p(half) * half**k
        b = (cb - ca) / (1 / half - 1 / horizon)
        pref = ca - b / horizon
        tail = pref * horizon ** (1 - k) / (k - 1) + b * horizon**-k / k
    info = {"horizon": horizon, "exponent": k, "prefactor": pref, "tail": tail}
    return head + body + tail, info


# --------------------------------------------------------------------------
# hierarchical log-periodicity and the 2-D Green function expansion


def hier_log_periodic(
    model: ModelSpec, x=0, t_grid: tuple[float, float] = (1e2, 1e6), points_per_period: int = 64
) -> LogPeriodicProfile:
    """Samples of p(t,x,x) t^{s_h/2} against the phase ln t / ln(1/p) mod 1,
    one row per complete period inside ``t_grid``, with the correlation of
    each period's profile with the next."""
    require_family(model, Family.HIERARCHICAL)
    s_h = model.spectral_dimension()
    lp = math.log(1.0 / model.p)
    t_lo, t_hi = float(min(t_grid)), float(max(t_grid))
    k_lo = math.ceil(math.log(t_lo) / lp)
    k_hi = math.floor(math.log(t_hi) / lp)
    phases = np.arange(points_per_period) / points_per_period
    rows = []
    for k in range(k_lo, k_hi):
        ts = np.exp((k + phases) * lp)
        rows.append([heat_diagonal(model, t, x) * t ** (s_h / 2) for t in ts])
    profiles = np.array(rows)
    corr = np.array([np.corrcoef(profiles[i], profiles[i + 1])[0, 1] for i in range(len(rows) - 1)])
    return LogPeriodicProfile(s_h, phases, profiles, corr)


def z2_alpha_closed() -> float:
    """lim_{lambda->0} [R_lambda(0,0) - ln(lambda)/(4 pi)] = -5 ln 2/(4 pi) on Z2."""
    return -5.0 * math.log(2.0) / (4.0 * PI)


def green2d_expansion(x_range: Iterable, tol: ToleranceConfig = DEFAULT_TOL, lam0: float = 1e-3) -> Green2DExpansion:
    """u(x) = lim_{lambda->0} [R_lambda(x,0) - ln(lambda (1+|x|)^2)/(4 pi)] on Z2,
    alpha = u(0) and v = u - alpha.

    The limit is taken by extrapolation in lambda with the correction basis
    lambda ln(lambda), lambda (the remainder class of the expansion).
    """
    model = ModelSpec.z2()
    sites = [model.normalize_site(s) for s in x_range]
    if (0, 0) not in sites:
        sites = [(0, 0)] + sites
    basis = (lambda l: l * math.log(l), lambda l: l, lambda l: l * l * math.log(l))
    u = {}
    for x in sites:
        nx = lattice_norm(x)
        start = min(lam0, 0.1 / (1 + nx) ** 2)
        f = lambda lam, x=x, nx=nx: resolvent_value(model, lam, x, (0, 0)) - math.log(lam * (1 + nx) ** 2) / (4 * PI)
        u[x] = extrapolate_to_zero(f, start, basis, tol.extrap_tol * 0.1)
    alpha = u[(0, 0)]
    return Green2DExpansion(u, alpha, {x: u[x] - alpha for x in u})


def weighted_tail_integral(
    model: ModelSpec, killing, x, lower: float, gamma: float, tol: ToleranceConfig = DEFAULT_TOL, box=None
) -> float:
    """int_lower^inf t^{-gamma} p1(t, x, x) dt for a killed kernel.

    With ``lower = 0`` and ``gamma >= 1`` the integral is +inf (p1 -> 1 as t -> 0
    away from the killing set).
    """
    if gamma == 0:
        return tail_time_integral(model, killing, x, lower, tol, box)
    killing = _as_killing(killing).normalized(model)
    x = model.normalize_site(x)
    if killing.x0 is not None and x == killing.x0:
        return 0.0
    if lower == 0 and gamma >= 1:
        return math.inf
    if model.family is Family.Z1 and killing.x0 is not None and gamma < 1:
        return _z1_killed_tail(abs(x - killing.x0), lower, gamma)
    size = _tail_box(model, killing, x) if box is None else (box.radius if isinstance(box, BoxSpec) else int(box))
    w, vec, index = _killed_eigh(model, killing, size)
    if x not in index:
        return 0.0
    row = vec[index[x]]
    if gamma < 1:
        return float(np.sum(row * row * _upper_gamma_integral(gamma, lower, w)))
    f = lambda t: t**-gamma * float(np.sum(row * row * np.exp(-t * w)))
    val, _ = integrate.quad(f, lower, math.inf, limit=400)
    return val


def z1_killed_weighted_integral(d: int, gamma: float) -> float:
    """int_0^inf t^{-gamma} p1(t,x,x) dt on Z1 killed at distance d (gamma < 1)."""
    return _z1_killed_tail(d, 0.0, gamma)


def continuum_weighted_constant(gamma: float) -> float:
    """c with int_0^inf t^{-gamma} (1 - e^{-x^2/t})/sqrt(4 pi t) dt = c |x|^{1-2gamma}, 0 < gamma < 1/2."""
    if not 0 < gamma < 0.5:
        raise ValidationError("gamma must lie in (0, 1/2)")
    return -gamma_fn(gamma - 0.5) / (2.0 * math.sqrt(PI))
