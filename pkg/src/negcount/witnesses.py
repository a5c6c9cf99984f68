"""Constructive lower bounds on N0: single-site wells, variational test functions
and sparse multi-well potentials."""
from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .core import (
    DEFAULT_TOL,
    Family,
    ModelSpec,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
    require_family,
)
from .kernels import resolvent_value
from .operators import assemble_h0, subtract_potential
from .spectra import count_negative


@dataclasses.dataclass
class TestFunction:
    """Finitely supported function stored as a dense block ``array`` whose
    first entry sits at lattice site ``offset``.

    For hierarchical and general models the block is one-dimensional over the
    site index (general graphs: the generator table's site order).
    """

    __test__ = False  # not a pytest class

    offset: tuple
    array: np.ndarray

    def __post_init__(self):
        self.array = np.asarray(self.array, dtype=float)
        self.offset = tuple(int(o) for o in np.atleast_1d(self.offset))
        if len(self.offset) != self.array.ndim:
            raise ValidationError("offset and array dimension differ")

    @property
    def dim(self) -> int:
        return self.array.ndim

    def _coords(self, idx) -> object:
        c = tuple(int(o + i) for o, i in zip(self.offset, idx))
        return c[0] if self.dim == 1 else c

    @property
    def support(self) -> frozenset:
        return frozenset(self._coords(i) for i in zip(*np.nonzero(self.array)))

    @property
    def values(self) -> dict:
        return {self._coords(i): float(self.array[i]) for i in zip(*np.nonzero(self.array))}

    def norm2(self) -> float:
        return float(np.sum(self.array**2))

    def bounds(self) -> tuple:
        nz = np.nonzero(self.array)
        if not nz[0].size:
            return tuple((o, o - 1) for o in self.offset)
        return tuple((o + int(a.min()), o + int(a.max())) for o, a in zip(self.offset, nz))


@dataclasses.dataclass
class Certificate:
    """N0 >= m, witnessed by the negative Ritz values of H on the span of the
    test functions (or their individual Rayleigh quotients for disjoint,
    non-interacting supports)."""

    m: int
    rayleigh_values: list
    supports_disjoint: bool
    sites: list = dataclasses.field(default_factory=list)
    box_radius: int = 0
    quotients: list = dataclasses.field(default_factory=list)
    notes: str = ""

    def __post_init__(self):
        if self.m != len(self.rayleigh_values) or any(r >= 0 for r in self.rayleigh_values):
            raise NumericalError("certificate must list exactly m strictly negative values")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "rayleigh": list(self.rayleigh_values),
            "sites": [list(s) if isinstance(s, tuple) else s for s in self.sites],
            "box_radius": self.box_radius,
            "supports_disjoint": self.supports_disjoint,
        }


# --------------------------------------------------------------------------
# single well


def single_delta_eigenvalue(model: ModelSpec, v: float, site=None, tol: ToleranceConfig = DEFAULT_TOL) -> float | None:
    """Ground state -lambda* of H0 - v delta_site, from v |R_lambda(site, site)| = 1.

    Returns ``None`` when a transient walk's well is too shallow to bind.
    The root is bracketed and refined in ln(lambda).
    """
    if not v > 0:
        raise ValidationError("well depth must be > 0")
    site = model.origin() if site is None else model.normalize_site(site)
    g = lambda loglam: v * -resolvent_value(model, math.exp(loglam), site, site) - 1.0
    hi = math.log(v)  # |R_lambda| < 1/lambda, so g(ln v) < 0
    lo = hi - 1.0
    while g(lo) <= 0:
        lo -= 2.0
        if lo < math.log(1e-300):
            return None
        if lo < -60 and not model.is_recurrent():
            return None
    root = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return -math.exp(root)


def z1_single_well(v: float) -> float:
    """-(sqrt(4 + v^2) - 2), the Z1 single-site ground state."""
    return -(math.sqrt(4.0 + v * v) - 2.0)


# --------------------------------------------------------------------------
# test functions


def sine_bump_1d(k: int) -> TestFunction:
    """sin(pi (x - a)/|L|) on L = [a, b] = [2^{k-1}, 2^{k+2}], |L| = b - a."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    a, b = 2 ** (k - 1), 2 ** (k + 2)
    length = b - a
    x = np.arange(a, b + 1)
    vals = np.sin(np.pi * (x - a) / length)
    vals[0] = vals[-1] = 0.0
    return TestFunction((a,), vals)


def square_layer_2d(k: int, l: int) -> TestFunction:
    """Layer on Q_{2l} minus Q_k: 1 for k < |x|_inf <= l, (2l - |x|_inf)/l beyond, 0 inside Q_k."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if l < 4 * k:
        raise ValidationError(f"layer needs l >= 4k (got k={k}, l={l})")
    r = 2 * l
    ax = np.arange(-r, r + 1)
    ninf = np.maximum(np.abs(ax)[:, None], np.abs(ax)[None, :])
    vals = np.clip((2 * l - ninf) / l, 0.0, 1.0)
    vals[ninf <= k] = 0.0
    return TestFunction((-r, -r), vals)


def kinetic_form(f: TestFunction) -> float:
    """(-Delta psi, psi) on Z^d: the sum over lattice edges of squared differences."""
    a = np.pad(f.array, 1)
    return float(sum(np.sum(np.diff(a, axis=ax) ** 2) for ax in range(a.ndim)))


# --------------------------------------------------------------------------
# certification

PotentialLike = "Potential | Callable[[np.ndarray], np.ndarray]"


def _potential_on(v, coords: np.ndarray, model: ModelSpec) -> np.ndarray:
    """V at integer coordinates ``coords`` (shape (N, d))."""
    if callable(v) and not isinstance(v, Potential):
        return np.asarray(v(coords), dtype=float)
    v = v.normalized(model)
    out = np.zeros(coords.shape[0])
    if model.dim == 1 or model.family in (Family.HIERARCHICAL, Family.GENERAL):
        lookup = {s: val for s, val in v.items()}
        for i, c in enumerate(coords[:, 0]):
            out[i] = lookup.get(int(c), 0.0)
    else:
        lookup = dict(v.items())
        for i, c in enumerate(coords):
            out[i] = lookup.get((int(c[0]), int(c[1])), 0.0)
    return out


def _common_grid(functions: Sequence[TestFunction], dim: int):
    lo = [min(f.offset[a] for f in functions) - 1 for a in range(dim)]
    hi = [max(f.offset[a] + f.array.shape[a] for f in functions) for a in range(dim)]
    shape = tuple(h - l_ + 1 for l_, h in zip(lo, hi))
    stack = np.zeros((len(functions),) + shape)
    for i, f in enumerate(functions):
        sl = tuple(slice(f.offset[a] - lo[a], f.offset[a] - lo[a] + f.array.shape[a]) for a in range(dim))
        stack[(i,) + sl] = f.array
    return lo, stack


def _forms_lattice(model: ModelSpec, v, functions):
    dim = model.dim
    lo, stack = _common_grid(functions, dim)
    m = len(functions)
    flat = stack.reshape(m, -1)
    gram = flat @ flat.T
    kin = np.zeros((m, m))
    for ax in range(dim):
        d = np.diff(stack, axis=ax + 1).reshape(m, -1)
        kin += d @ d.T
    mask = np.any(flat != 0, axis=0)
    grids = np.meshgrid(*[np.arange(lo[a], lo[a] + stack.shape[a + 1]) for a in range(dim)], indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)[mask]
    vv = _potential_on(v, coords, model)
    sub = flat[:, mask]
    pot = (sub * vv) @ sub.T
    return gram, kin - pot


def _forms_assembled(model: ModelSpec, v, functions):
    if model.family is Family.GENERAL:
        h0 = assemble_h0(model)
        sites = list(model.generator_table.sites)
    else:
        hi = max(f.offset[0] + f.array.shape[0] for f in functions)
        if model.family is Family.HIERARCHICAL:
            levels = 1
            while model.nu**levels < hi:
                levels += 1
            box = model.with_levels(levels)
            h0 = assemble_h0(box, exterior_ranks=True)
        else:
            lo_ = min(f.offset[0] for f in functions)
            box = model.with_radius(max(abs(lo_), hi))
            h0 = assemble_h0(box)
        sites = list(h0.sites)
    index = {s: i for i, s in enumerate(sites)}
    psi = np.zeros((len(functions), len(sites)))
    for i, f in enumerate(functions):
        for s, val in f.values.items():
            if s not in index:
                raise ValidationError(f"test function site {s!r} lies outside the model")
            psi[i, index[s]] = val
    coords = np.array(sites, dtype=np.int64).reshape(len(sites), 1) if model.family is not Family.GENERAL else None
    if coords is not None:
        vv = _potential_on(v, coords, model)
    else:
        vv = np.array([v.normalized(model)[s] for s in sites])
    h = h0.tocsr()
    hp = (h @ psi.T).T
    return psi @ psi.T, psi @ hp.T - (psi * vv) @ psi.T


def certify_lower_bound(
    model: ModelSpec,
    v,
    functions: Sequence[TestFunction],
    tol: ToleranceConfig = DEFAULT_TOL,
    allow_overlap: bool = False,
) -> Certificate:
    """Certify N0(V) >= m for H = H0 - V.

    The quadratic form of H is restricted to the span of ``functions``; m is
    the number of its Ritz values below -tau_neg (min-max). For pairwise
    disjoint, non-adjacent supports this reduces to counting negative Rayleigh
    quotients. Overlapping supports are rejected unless ``allow_overlap``.

    ``v`` is a :class:`Potential` or a callable returning V at an (N, d)
    array of integer coordinates.
    """
    if not functions:
        return Certificate(0, [], True)
    functions = [f for f in functions if f.norm2() > 0]
    supports = [f.support for f in functions]
    disjoint = all(not (supports[i] & supports[j]) for i in range(len(supports)) for j in range(i))
    if not disjoint and not allow_overlap:
        raise ValidationError("test function supports overlap (pass allow_overlap=True for a Ritz certificate)")
    if model.family in (Family.Z1, Family.Z2):
        gram, form = _forms_lattice(model, v, functions)
    else:
        gram, form = _forms_assembled(model, v, functions)
    form = 0.5 * (form + form.T)
    quotients = [float(form[i, i] / gram[i, i]) for i in range(len(functions))]
    try:
        ritz = sla.eigh(form, gram, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("test functions are linearly dependent") from exc
    neg = sorted(float(r) for r in ritz if r < -tol.neg_threshold)
    radius = 0
    for f in functions:
        for lo_, hi_ in f.bounds():
            radius = max(radius, abs(lo_), abs(hi_))
    return Certificate(len(neg), neg, disjoint, box_radius=radius, quotients=quotients)


def auto_square_layers(
    v,
    n_layers: int,
    k0: int = 1,
    max_radius: int = 4096,
    tol: ToleranceConfig = DEFAULT_TOL,
) -> list:
    """Disjoint square layers with negative Rayleigh quotient for H0 - V on Z2.

    Layer j starts at k_j (k_1 = k0, k_{j+1} = 2 l_j) and l_j doubles from 4 k_j
    until (V psi, psi) exceeds (-Delta psi, psi). Stops early at ``max_radius``.
    """
    model = ModelSpec.z2()
    layers = []
    k = k0
    while len(layers) < n_layers:
        l = 4 * k
        while True:
            if 2 * l > max_radius:
                return layers
            f = square_layer_2d(k, l)
            cert = certify_lower_bound(model, v, [f], tol)
            if cert.m == 1:
                layers.append(f)
                break
            l *= 2
        k = 2 * l
    return layers


def box_count(model: ModelSpec, v, radius: int, tol: ToleranceConfig = DEFAULT_TOL) -> int:
    """N0 of H0 - V restricted (Dirichlet) to the box of the given radius.

    A lower bound for N0 on every larger box and on the infinite lattice.
    """
    box = model.with_radius(radius)
    h0 = assemble_h0(box)
    coords = np.array([np.atleast_1d(s) for s in h0.sites], dtype=np.int64)
    vv = _potential_on(v, coords, model)
    entries = {s: float(x) for s, x in zip(h0.sites, vv) if x > 0}
    return count_negative(subtract_potential(h0, Potential(entries)), tol)[0]


# --------------------------------------------------------------------------
# sparse multi-well construction


def _well_function(model: ModelSpec, lam: float, center, radius: int) -> TestFunction:
    if model.family is Family.Z1:
        ax = np.arange(-radius, radius + 1)
        vals = np.array([-resolvent_value(model, lam, int(c) + center, center) for c in ax])
        return TestFunction((center - radius,), vals)
    ax = np.arange(-radius, radius + 1)
    vals = np.empty((ax.size, ax.size))
    for i, a in enumerate(ax):
        for j, b in enumerate(ax):
            vals[i, j] = -resolvent_value(model, lam, (int(a), int(b)), (0, 0))
    return TestFunction((center[0] - radius, center[1] - radius), vals)


def sparse_multiwell(
    model: ModelSpec,
    amplitudes: Sequence[float],
    tol: ToleranceConfig = DEFAULT_TOL,
    max_radius: int = 400,
) -> tuple[Potential, Certificate]:
    """Place wells a_n delta_{x_n} along the first axis, each carrying its own
    truncated bound state.

    For a well of depth a the bound state of H0 - a delta_y is the resolvent
    column R_{lambda*}(., y); it is truncated to the l_inf ball of radius r
    around y, with r grown until its Rayleigh quotient is below -lambda*/2.
    Consecutive balls are separated by one empty site, so the truncated states
    do not interact and N0 >= number of wells placed.
    """
    require_family(model, Family.Z1, Family.Z2)
    amps = [float(a) for a in amplitudes]
    if any(a <= 0 for a in amps) or any(b > a for a, b in zip(amps, amps[1:])):
        raise ValidationError("amplitudes must be positive and non-increasing")
    entries, functions, sites, radii, quotients = {}, [], [], [], []
    next_left = None
    notes = ""
    for a in amps:
        lam = -single_delta_eigenvalue(model, a, model.origin(), tol)
        r = 1
        while True:
            if r > max_radius:
                notes = f"stopped: amplitude {a} needs a truncation radius beyond {max_radius}"
                break
            f0 = _well_function(model, lam, 0 if model.dim == 1 else (0, 0), r)
            well = Potential({model.origin(): a})
            q = certify_lower_bound(model, well, [f0], tol).quotients[0]
            if q < -lam / 2:
                break
            r = max(r + 1, int(math.ceil(r * 1.25)))
        if notes:
            break
        center_x = 0 if next_left is None else next_left + r
        center = center_x if model.dim == 1 else (center_x, 0)
        f = _well_function(model, lam, center, r)
        entries[center] = a
        functions.append(f)
        sites.append(center)
        radii.append(r)
        quotients.append(q)
        next_left = center_x + r + 2
    v = Potential(entries)
    cert = certify_lower_bound(model, v, functions, tol) if functions else Certificate(0, [], True)
    cert.sites = sites
    cert.notes = notes or f"truncation radii {radii}"
    return v, cert
