"""Domain types, lattice geometry and potential constructors.

Sites are plain Python values: an ``int`` on the one-dimensional families
(Z1, fractional) and on the hierarchical lattice (digit-encoded index), a
2-tuple of ints on Z2, and any hashable label on a general graph.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping

import numpy as np

Site = Hashable


# --------------------------------------------------------------------------
# errors


class ValidationError(ValueError):
    """Bad input: inconsistent parameters, negative potentials, bad sites."""


class FamilyMismatchError(ValidationError):
    """Operation applied to a model family it does not support."""


class NumericalError(RuntimeError):
    """A numerical routine failed (quadrature, factorization, root finding)."""


class NonConvergenceError(NumericalError):
    """An iterative procedure (box growth, extrapolation) did not settle.

    ``last`` carries the most recent iterates so callers can report them.
    """

    def __init__(self, message: str, last: Any = None):
        super().__init__(message)
        self.last = last


class DivergenceError(NumericalError):
    """A quantity that is infinite for the requested model (e.g. a recurrent
    heat-kernel time integral)."""


class InvariantViolation(AssertionError):
    """A property that must hold mathematically was found violated."""


# --------------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class ToleranceConfig:
    neg_threshold: float = 1e-10
    quad_tol: float = 1e-9
    extrap_tol: float = 1e-7
    box_growth_factor: float = 1.5

    def __post_init__(self):
        for name in ("neg_threshold", "quad_tol", "extrap_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")
        if not self.box_growth_factor > 1:
            raise ValidationError("box_growth_factor must exceed 1")


DEFAULT_TOL = ToleranceConfig()


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional stream key (e.g. a block index)."""
    if seed < 0 or seed >= 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    return np.random.default_rng([int(seed), *map(int, stream)])


# --------------------------------------------------------------------------
# models


class Family(str, enum.Enum):
    Z1 = "Z1"
    Z2 = "Z2"
    FRACTIONAL = "Fractional"
    HIERARCHICAL = "Hierarchical"
    GENERAL = "GeneralGraph"


@dataclasses.dataclass(frozen=True)
class BoxSpec:
    """Finite truncation: sites with max-coordinate at most ``radius``.

    The exterior is deleted (Dirichlet); the hierarchical family ignores the
    radius and truncates by ``ModelSpec.levels`` instead.
    """

    radius: int = 10

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 0:
            raise ValidationError("box radius must be a nonnegative integer")


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Operator family, its parameters and the truncation used for matrices.

    Build instances with the family constructors (:meth:`z1`, :meth:`z2`,
    :meth:`fractional`, :meth:`hierarchical`, :meth:`general`).
    """

    family: Family
    alpha: float | None = None
    nu: int | None = None
    p: float | None = None
    levels: int | None = None
    generator_table: Any = None
    truncation: BoxSpec = BoxSpec()

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        present = {
            "alpha": self.alpha is not None,
            "nu": self.nu is not None,
            "p": self.p is not None,
            "levels": self.levels is not None,
            "generator_table": self.generator_table is not None,
        }
        wanted = {
            Family.Z1: set(),
            Family.Z2: set(),
            Family.FRACTIONAL: {"alpha"},
            Family.HIERARCHICAL: {"nu", "p", "levels"},
            Family.GENERAL: {"generator_table"},
        }[fam]
        extra = {k for k, v in present.items() if v} - wanted
        missing = wanted - {k for k, v in present.items() if v}
        if extra or missing:
            raise ValidationError(
                f"{fam.value}: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        if fam is Family.FRACTIONAL and not 0 < self.alpha < 2:
            raise ValidationError("fractional alpha must lie in (0, 2)")
        if fam is Family.HIERARCHICAL:
            if int(self.nu) != self.nu or self.nu < 2:
                raise ValidationError("nu must be an integer >= 2")
            if not 0 < self.p < 1:
                raise ValidationError("p must lie in (0, 1)")
            if int(self.levels) != self.levels or self.levels < 1:
                raise ValidationError("levels must be an integer >= 1")

    # constructors -------------------------------------------------------
    @classmethod
    def z1(cls, radius: int = 10) -> "ModelSpec":
        return cls(Family.Z1, truncation=BoxSpec(radius))

    @classmethod
    def z2(cls, radius: int = 10) -> "ModelSpec":
        return cls(Family.Z2, truncation=BoxSpec(radius))

    @classmethod
    def fractional(cls, alpha: float, radius: int = 10) -> "ModelSpec":
        return cls(Family.FRACTIONAL, alpha=float(alpha), truncation=BoxSpec(radius))

    @classmethod
    def hierarchical(cls, nu: int, p: float, levels: int) -> "ModelSpec":
        return cls(Family.HIERARCHICAL, nu=int(nu), p=float(p), levels=int(levels))

    @classmethod
    def general(cls, table) -> "ModelSpec":
        return cls(Family.GENERAL, generator_table=table)

    # geometry -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return 2 if self.family is Family.Z2 else 1

    @property
    def is_lattice(self) -> bool:
        return self.family in (Family.Z1, Family.Z2, Family.FRACTIONAL)

    @property
    def radius(self) -> int:
        return self.truncation.radius

    def with_radius(self, radius: int) -> "ModelSpec":
        return dataclasses.replace(self, truncation=BoxSpec(int(radius)))

    def with_levels(self, levels: int) -> "ModelSpec":
        if self.family is not Family.HIERARCHICAL:
            raise FamilyMismatchError("levels only apply to the hierarchical family")
        return dataclasses.replace(self, levels=int(levels))

    @property
    def n_sites(self) -> int:
        if self.family is Family.HIERARCHICAL:
            return self.nu**self.levels
        if self.family is Family.GENERAL:
            return len(self.generator_table.sites)
        return (2 * self.radius + 1) ** self.dim

    def normalize_site(self, site: Site) -> Site:
        """Canonical form of ``site`` for this family (int or 2-tuple)."""
        if self.family is Family.GENERAL:
            return site
        if self.family is Family.Z2:
            if isinstance(site, (int, np.integer)) and site == 0:
                return (0, 0)
            try:
                x1, x2 = site
            except (TypeError, ValueError):
                raise ValidationError(f"Z2 site must be a pair, got {site!r}") from None
            return (int(x1), int(x2))
        if isinstance(site, (tuple, list, np.ndarray)):
            if len(site) != 1:
                raise ValidationError(f"one-dimensional site expected, got {site!r}")
            site = site[0]
        if int(site) != site:
            raise ValidationError(f"integer site expected, got {site!r}")
        site = int(site)
        if self.family is Family.HIERARCHICAL and site < 0:
            raise ValidationError("hierarchical sites are nonnegative indices")
        return site

    def sites(self) -> list:
        """Sites of the truncated box in matrix index order."""
        if self.family is Family.HIERARCHICAL:
            return list(range(self.nu**self.levels))
        if self.family is Family.GENERAL:
            return list(self.generator_table.sites)
        r = self.radius
        if self.family is Family.Z2:
            return [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)]
        return list(range(-r, r + 1))

    def contains(self, site: Site) -> bool:
        site = self.normalize_site(site)
        if self.family is Family.HIERARCHICAL:
            return 0 <= site < self.nu**self.levels
        if self.family is Family.GENERAL:
            return site in self.generator_table.index
        return lattice_norm_inf(site) <= self.radius

    def index_of(self, site: Site) -> int:
        site = self.normalize_site(site)
        if not self.contains(site):
            raise ValidationError(f"site {site!r} lies outside the truncation")
        if self.family is Family.HIERARCHICAL:
            return site
        if self.family is Family.GENERAL:
            return self.generator_table.index[site]
        r = self.radius
        if self.family is Family.Z2:
            return (site[0] + r) * (2 * r + 1) + (site[1] + r)
        return site + r

    def origin(self) -> Site:
        if self.family is Family.Z2:
            return (0, 0)
        if self.family is Family.GENERAL:
            return self.generator_table.sites[0]
        return 0

    # walk type ----------------------------------------------------------
    def is_recurrent(self) -> bool:
        """Recurrence of the walk generated by -H0 on the infinite model.

        General graphs are finite; their walk is recurrent unless a row carries
        a positive defect (killing), in which case it is treated as transient.
        """
        fam = self.family
        if fam in (Family.Z1, Family.Z2):
            return True
        if fam is Family.FRACTIONAL:
            return self.alpha >= 0.5
        if fam is Family.HIERARCHICAL:
            return self.nu * self.p <= 1 + 1e-15
        return not self.generator_table.has_defect()

    def spectral_dimension(self) -> float:
        if self.family is Family.HIERARCHICAL:
            return 2 * math.log(self.nu) / math.log(1 / self.p)
        if self.family is Family.FRACTIONAL:
            return 1 / self.alpha
        if self.family in (Family.Z1, Family.Z2):
            return float(self.dim)
        raise FamilyMismatchError("spectral dimension undefined for general graphs")

    def describe(self) -> dict:
        out = {"family": self.family.value}
        for key in ("alpha", "nu", "p", "levels"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.is_lattice:
            out["radius"] = self.radius
        return out


def require_family(model: ModelSpec, *families: Family) -> None:
    if model.family not in families:
        names = ", ".join(f.value for f in families)
        raise FamilyMismatchError(f"expected family in {{{names}}}, got {model.family.value}")


def lattice_norm_inf(site) -> int:
    if isinstance(site, tuple):
        return max(abs(c) for c in site)
    return abs(site)


def lattice_norm(site) -> float:
    """Euclidean norm of a lattice site."""
    if isinstance(site, tuple):
        return math.hypot(*site)
    return float(abs(site))


# --------------------------------------------------------------------------
# hierarchical geometry


def hier_distance(x: int, y: int, spec: ModelSpec) -> int:
    """Rank of the smallest cube containing both sites."""
    require_family(spec, Family.HIERARCHICAL)
    return hier_distance_raw(spec.normalize_site(x), spec.normalize_site(y), spec.nu)


def hier_distance_raw(x: int, y: int, nu: int) -> int:
    r = 0
    while x != y:
        x //= nu
        y //= nu
        r += 1
    return r


def hier_rho(x: int, y: int, x0: int, spec: ModelSpec) -> float:
    """p^{-max(d(x0,x), d(x0,y))/2} - 1; a metric on the hierarchical lattice."""
    require_family(spec, Family.HIERARCHICAL)
    d = max(hier_distance(x0, x, spec), hier_distance(x0, y, spec))
    return spec.p ** (-d / 2) - 1.0


# --------------------------------------------------------------------------
# potentials


@dataclasses.dataclass(frozen=True)
class Potential:
    """Finitely supported nonnegative function on sites.

    ``+inf`` values are accepted so that killing potentials can express
    annihilation on visit; operators that subtract a potential reject them.
    Zero entries are dropped.
    """

    entries: Mapping

    def __post_init__(self):
        clean = {}
        for site, value in dict(self.entries).items():
            value = float(value)
            if math.isnan(value) or value < 0:
                raise ValidationError(f"potential value at {site!r} must be >= 0, got {value}")
            if value > 0:
                clean[site] = value
        object.__setattr__(self, "entries", clean)

    @classmethod
    def zero(cls) -> "Potential":
        return cls({})

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, site) -> float:
        return self.entries.get(site, 0.0)

    def items(self):
        return self.entries.items()

    @property
    def sites(self) -> list:
        return list(self.entries)

    def values_array(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), float, len(self.entries))

    def max(self) -> float:
        return max(self.entries.values(), default=0.0)

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def support_radius(self) -> int:
        return max((lattice_norm_inf(s) for s in self.entries), default=0)

    def scaled(self, factor: float) -> "Potential":
        if factor < 0:
            raise ValidationError("scale factor must be nonnegative")
        return Potential({s: factor * v for s, v in self.entries.items()})

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.entries.values())

    def normalized(self, model: ModelSpec) -> "Potential":
        return Potential({model.normalize_site(s): v for s, v in self.entries.items()})

    def __add__(self, other: "Potential") -> "Potential":
        out = dict(self.entries)
        for s, v in other.items():
            out[s] = out.get(s, 0.0) + v
        return Potential(out)


def _ball(radius: int, dim: int) -> list:
    rng = range(-radius, radius + 1)
    if dim == 1:
        return list(rng)
    if dim == 2:
        return [(a, b) for a in rng for b in rng]
    raise ValidationError("dim must be 1 or 2")


def make_potential(kind: str, params: Mapping | None = None, seed: int = 0) -> Potential:
    """Construct a potential.

    Parameters
    ----------
    kind : {"explicit", "random_uniform", "power_law", "single_delta"}
    params : mapping
        explicit: ``entries`` (site -> value).
        random_uniform: ``radius``, ``vmax`` (default 1), ``density`` (default 1),
        ``dim`` (default 1) or an explicit ``sites`` list.
        power_law: ``beta``, ``s``, ``radius``, ``dim``; value beta/(1+|x|)^s.
        single_delta: ``site``, ``v``.
    seed : int
        Only random kinds consume it; equal seeds give identical potentials.
    """
    params = dict(params or {})
    if kind == "explicit":
        return Potential(params.get("entries", {}))
    if kind == "single_delta":
        v = float(params.get("v", 1.0))
        if v < 0:
            raise ValidationError("single_delta amplitude must be >= 0")
        site = params.get("site", 0)
        if isinstance(site, list):
            site = tuple(site)
        return Potential({site: v})
    if kind == "random_uniform":
        vmax = float(params.get("vmax", 1.0))
        density = float(params.get("density", 1.0))
        if vmax < 0 or not 0 <= density <= 1:
            raise ValidationError("random_uniform needs vmax >= 0 and density in [0, 1]")
        sites = params.get("sites")
        if sites is None:
            sites = _ball(int(params.get("radius", 5)), int(params.get("dim", 1)))
        rng = make_rng(seed)
        values = rng.uniform(0.0, vmax, len(sites))
        keep = rng.random(len(sites)) < density
        return Potential({s: float(v) for s, v, k in zip(sites, values, keep) if k})
    if kind == "power_law":
        beta = float(params.get("beta", 1.0))
        s = float(params.get("s", 1.0))
        if beta <= 0 or s <= 0:
            raise ValidationError("power_law needs beta > 0 and s > 0")
        sites = _ball(int(params.get("radius", 10)), int(params.get("dim", 1)))
        return Potential({x: beta / (1 + lattice_norm(x)) ** s for x in sites})
    raise ValidationError(f"unknown potential kind {kind!r}")


def read_potential(path: str | Path) -> Potential:
    """Read ``coord1 [coord2] value`` records; ``#`` starts a comment."""
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ValidationError(f"{path}:{lineno}: expected 2 or 3 fields, got {len(parts)}")
        try:
            coords = [int(c) for c in parts[:-1]]
            value = float(parts[-1])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: malformed record {raw!r}") from None
        site = coords[0] if len(coords) == 1 else tuple(coords)
        entries[site] = entries.get(site, 0.0) + value
    return Potential(entries)


def write_potential(v: Potential, path: str | Path) -> None:
    lines = []
    for site, value in sorted(v.items(), key=lambda kv: _site_key(kv[0])):
        coords = site if isinstance(site, tuple) else (site,)
        lines.append(" ".join(str(c) for c in coords) + f" {float(value)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _site_key(site):
    return site if isinstance(site, tuple) else (site,)


def sorted_sites(sites: Iterable) -> list:
    return sorted(sites, key=_site_key)
