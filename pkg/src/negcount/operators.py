"""Finite symmetric matrices for every operator family and their perturbations."""
from __future__ import annotations

import dataclasses
import functools
import math
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.sparse.csgraph import connected_components
from scipy.special import gamma as gamma_fn

from .core import (
    DEFAULT_TOL,
    Family,
    ModelSpec,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
)


@dataclasses.dataclass(frozen=True, eq=False)
class SparseSymmetric:
    """Symmetric matrix with site labels.

    ``data`` is either a scipy sparse matrix or a dense ndarray holding the full
    symmetric matrix; :meth:`entries` yields the upper-triangle triplets.
    """

    data: object
    sites: tuple

    def __post_init__(self):
        if self.data.shape[0] != self.data.shape[1] or self.data.shape[0] != len(self.sites):
            raise ValidationError("matrix shape does not match the site list")
        if sp.issparse(self.data):
            object.__setattr__(self, "data", sp.csr_matrix(self.data))

    @classmethod
    def from_entries(cls, n: int, entries, sites=None) -> "SparseSymmetric":
        """Build from upper-triangle triplets ``(row, col, value)`` with row <= col."""
        rows, cols, vals = [], [], []
        seen = set()
        for i, j, v in entries:
            i, j = int(i), int(j)
            if i > j:
                raise ValidationError(f"entry ({i},{j}) is below the diagonal")
            if (i, j) in seen:
                raise ValidationError(f"duplicate entry ({i},{j})")
            if not math.isfinite(v):
                raise ValidationError(f"non-finite entry at ({i},{j})")
            seen.add((i, j))
            rows.append(i)
            cols.append(j)
            vals.append(float(v))
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(float(v))
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(mat, tuple(range(n)) if sites is None else tuple(sites))

    @classmethod
    def from_dense(cls, a, sites=None) -> "SparseSymmetric":
        a = np.asarray(a, dtype=float)
        if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max(initial=0))):
            raise ValidationError("matrix is not symmetric")
        return cls(a.copy(), tuple(range(a.shape[0])) if sites is None else tuple(sites))

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def is_dense(self) -> bool:
        return not sp.issparse(self.data)

    @functools.cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.sites)}

    def toarray(self) -> np.ndarray:
        return self.data.copy() if self.is_dense else self.data.toarray()

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.data)

    def diagonal(self) -> np.ndarray:
        return np.array(self.data.diagonal(), dtype=float)

    def entries(self) -> list:
        """Upper-triangle triplets ``(row, col, value)`` in row-major order."""
        upper = sp.triu(sp.coo_matrix(self.data)).tocsr()
        upper.sort_indices()
        coo = upper.tocoo()
        return [(int(i), int(j), float(v)) for i, j, v in zip(coo.row, coo.col, coo.data) if v != 0]

    def trace(self) -> float:
        return float(self.diagonal().sum())

    def add_diagonal(self, vec: np.ndarray) -> "SparseSymmetric":
        if self.is_dense:
            out = self.data.copy()
            out[np.diag_indices(self.n)] += vec
        else:
            out = self.data + sp.diags(vec)
        return SparseSymmetric(out, self.sites)

    def delete(self, keep: np.ndarray) -> "SparseSymmetric":
        """Principal submatrix on the index set ``keep``."""
        keep = np.asarray(keep)
        if self.is_dense:
            out = self.data[np.ix_(keep, keep)]
        else:
            out = self.data[keep][:, keep]
        return SparseSymmetric(out, tuple(self.sites[i] for i in keep))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.data @ x


# --------------------------------------------------------------------------
# general generator tables


@dataclasses.dataclass(eq=False)
class GeneratorTable:
    """Sparse symmetric generator h(x, y) of a walk on a finite graph.

    Pairs may be listed in one or both orders. ``c0`` is the declared bound on
    the diagonal; the table is validated when it is assembled.
    """

    pairs: Mapping
    c0: float

    def __post_init__(self):
        full = {}
        order = []
        for (x, y), value in dict(self.pairs).items():
            for key in ((x, y), (y, x)):
                if key in full and full[key] != value:
                    raise ValidationError(f"row {key[0]!r}: h{key} != h{key[::-1]} (asymmetric)")
                full[key] = float(value)
            for s in (x, y):
                if s not in order:
                    order.append(s)
        try:
            order = sorted(order)
        except TypeError:
            pass
        self.full = full
        self.sites = tuple(order)
        self.index = {s: i for i, s in enumerate(self.sites)}

    def row_sums(self) -> dict:
        sums = dict.fromkeys(self.sites, 0.0)
        for (x, _), v in self.full.items():
            sums[x] += v
        return sums

    def has_defect(self, tol: float = 1e-12) -> bool:
        return any(s > tol for s in self.row_sums().values())

    def validate(self, tol: float = 1e-12) -> None:
        diag = {x: self.full.get((x, x), 0.0) for x in self.sites}
        for (x, y), v in self.full.items():
            if x != y and v > 0:
                raise ValidationError(f"row {x!r}: off-diagonal h({x!r},{y!r}) = {v} > 0")
        for x, s in self.row_sums().items():
            scale = max(1.0, abs(diag[x]))
            if s < -tol * scale:
                raise ValidationError(f"row {x!r}: row sum {s} < 0 (negative defect)")
            if diag[x] > self.c0 + tol * scale:
                raise ValidationError(f"row {x!r}: diagonal {diag[x]} exceeds c0 = {self.c0}")
        ncomp, _ = connected_components(self._offdiag_pattern(), directed=False)
        if ncomp != 1:
            raise ValidationError(f"generator graph has {ncomp} components (must be connected)")

    def _offdiag_pattern(self) -> sp.csr_matrix:
        rows = [self.index[x] for (x, y), v in self.full.items() if x != y and v != 0]
        cols = [self.index[y] for (x, y), v in self.full.items() if x != y and v != 0]
        n = len(self.sites)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def matrix(self) -> sp.csr_matrix:
        n = len(self.sites)
        rows = [self.index[x] for x, _ in self.full]
        cols = [self.index[y] for _, y in self.full]
        return sp.csr_matrix((list(self.full.values()), (rows, cols)), shape=(n, n))


def path_graph_table(radius: int) -> GeneratorTable:
    """Z1 restricted to [-radius, radius] with reflecting ends (rows sum to 0)."""
    pairs = {}
    for x in range(-radius, radius + 1):
        deg = (x > -radius) + (x < radius)
        pairs[(x, x)] = float(deg)
        if x < radius:
            pairs[(x, x + 1)] = -1.0
    return GeneratorTable(pairs, c0=2.0)


# --------------------------------------------------------------------------
# fractional Toeplitz coefficients


@dataclasses.dataclass(frozen=True)
class FractionalCoefficients:
    """Fourier coefficients t(k) of the symbol (4 sin^2(phi/2))^alpha.

    ``values[k]`` holds t(k) for 0 <= k <= bandwidth; t(-k) = t(k) and entries
    beyond the bandwidth are treated as zero. ``tail_estimate`` bounds the
    dropped mass sum_{|k| > bandwidth} |t(k)| from the power-law decay.
    """

    alpha: float
    values: np.ndarray
    tail_estimate: float

    @property
    def bandwidth(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        k = abs(int(k))
        return float(self.values[k]) if k <= self.bandwidth else 0.0

    def symbol_at_zero(self) -> float:
        return float(self.values[0] + 2 * self.values[1:].sum())


def _fractional_asymptotic_prefactor(alpha: float) -> float:
    # |t(k)| ~ prefactor * k^{-1-2 alpha} for large k
    return abs(gamma_fn(2 * alpha + 1) * math.sin(math.pi * alpha)) / math.pi


@functools.lru_cache(maxsize=64)
def _fractional_values(alpha: float, bandwidth: int, quad_tol: float) -> tuple:
    two_a = 2.0 * alpha

    def symbol(phi):
        return (2.0 * np.sin(phi / 2.0)) ** two_a

    def smooth_part(phi):
        # symbol / phi^{2 alpha}, analytic near 0
        return np.sinc(phi / (2.0 * math.pi)) ** two_a

    eps = quad_tol * 1e-3
    out = []
    for k in range(bandwidth + 1):
        # [0, a]: the phi^{2 alpha} endpoint goes into an algebraic weight;
        # [a, pi]: the symbol is smooth and the cosine goes into the weight
        a = math.pi / max(k, 1)
        head, err_h = integrate.quad(
            lambda phi: smooth_part(phi) * math.cos(k * phi), 0.0, a, weight="alg", wvar=(two_a, 0.0), epsabs=eps, limit=200
        )
        tail, err_t = (0.0, 0.0)
        if a < math.pi:
            if k <= 16:
                # few oscillations: the QAWO error estimate is needlessly pessimistic here
                tail, err_t = integrate.quad(
                    lambda phi: symbol(phi) * math.cos(k * phi), a, math.pi, epsabs=eps, epsrel=1e-13, limit=200
                )
            else:
                tail, err_t = integrate.quad(symbol, a, math.pi, weight="cos", wvar=k, epsabs=eps, limit=400)
        if not err_h + err_t < quad_tol:
            raise NumericalError(f"fractional coefficient t({k}) did not converge (err {err_h + err_t})")
        out.append((head + tail) / math.pi)
    return tuple(out)


def fractional_coefficients(
    alpha: float, bandwidth: int, tol: ToleranceConfig = DEFAULT_TOL
) -> FractionalCoefficients:
    """Toeplitz coefficients t(k) = (1/2pi) int (4 sin^2(phi/2))^alpha cos(k phi) dphi."""
    if not 0 < alpha < 2:
        raise ValidationError("alpha must lie in (0, 2)")
    if bandwidth < 1:
        raise ValidationError("bandwidth must be >= 1")
    values = np.array(_fractional_values(float(alpha), int(bandwidth), tol.quad_tol))
    pref = _fractional_asymptotic_prefactor(alpha)
    tail = 2 * pref * (bandwidth + 0.5) ** (-2 * alpha) / (2 * alpha)
    return FractionalCoefficients(float(alpha), values, tail)


def fractional_bandwidth(alpha: float, radius: int, tol: ToleranceConfig = DEFAULT_TOL) -> int:
    """Smallest bandwidth where |t(k)| < quad_tol * t(0), capped by the box width."""
    cap = max(1, 2 * radius)
    pref = _fractional_asymptotic_prefactor(alpha)
    if pref == 0.0:
        return min(cap, max(1, int(math.ceil(alpha))))
    t0 = gamma_fn(2 * alpha + 1) / gamma_fn(alpha + 1) ** 2
    k = (pref / (tol.quad_tol * t0)) ** (1 / (1 + 2 * alpha))
    return int(min(cap, max(1, math.ceil(k))))


# --------------------------------------------------------------------------
# assembly


def _laplacian_1d(m: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1], format="csr")


def hierarchical_rank_matrix(nu: int, levels: int) -> np.ndarray:
    """Matrix of hierarchical distances d_h(x, y) on the top cube."""
    idx = np.arange(nu**levels)
    dist = np.zeros((idx.size, idx.size), dtype=np.int64)
    for r in range(levels):
        block = idx // nu**r
        dist += block[:, None] != block[None, :]
    return dist


def assemble_h0(
    model: ModelSpec, tol: ToleranceConfig = DEFAULT_TOL, exterior_ranks: bool = False
) -> SparseSymmetric:
    """Assemble -Laplacian of ``model`` on its truncation.

    Z^d boxes delete the exterior: boundary rows keep the full diagonal 2d.
    The hierarchical matrix uses the averaging operators of ranks 1..levels,
    so it is the Laplacian of the top cube viewed as a finite hierarchical
    lattice (rows sum to zero). With ``exterior_ranks=True`` the ranks above
    the top cube are kept as well, which is the restriction of the infinite
    lattice operator with the exterior deleted.
    """
    fam = model.family
    sites = tuple(model.sites())
    if fam is Family.Z1:
        return SparseSymmetric(_laplacian_1d(2 * model.radius + 1), sites)
    if fam is Family.Z2:
        m = 2 * model.radius + 1
        lap = _laplacian_1d(m)
        eye = sp.identity(m, format="csr")
        return SparseSymmetric(sp.kron(lap, eye) + sp.kron(eye, lap), sites)
    if fam is Family.FRACTIONAL:
        n = 2 * model.radius + 1
        if n == 1:
            coeffs = fractional_coefficients(model.alpha, 1, tol)
            return SparseSymmetric(np.array([[coeffs[0]]]), sites)
        bw = fractional_bandwidth(model.alpha, model.radius, tol)
        coeffs = fractional_coefficients(model.alpha, bw, tol)
        offsets = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
        col = np.zeros(n)
        col[: bw + 1] = coeffs.values[: min(bw + 1, n)]
        return SparseSymmetric(col[offsets], sites)
    if fam is Family.HIERARCHICAL:
        nu, p, levels = model.nu, model.p, model.levels
        ranks = np.arange(1, levels + 1)
        a = (1 - p) * p ** (ranks - 1)
        # w[d] = sum_{d <= r <= levels} a_r nu^{-r}: coupling between sites at distance d
        w = np.zeros(levels + 1)
        w[1:] = np.cumsum((a * float(nu) ** -ranks)[::-1])[::-1]
        mat = -w[hierarchical_rank_matrix(nu, levels)]
        np.fill_diagonal(mat, np.sum(a * (1 - float(nu) ** -ranks)))
        if exterior_ranks:
            tail = (1 - p) * p**levels * float(nu) ** (-levels - 1) / (1 - p / nu)
            mat -= tail
            mat[np.diag_indices_from(mat)] += p**levels
        return SparseSymmetric(mat, sites)
    table = model.generator_table
    table.validate()
    return SparseSymmetric(table.matrix(), sites)


def _site_indices(h: SparseSymmetric, v: Potential, what: str) -> tuple[np.ndarray, np.ndarray]:
    idx, vals = [], []
    for site, value in v.items():
        if site not in h.index:
            raise ValidationError(f"{what} support site {site!r} lies outside the box")
        idx.append(h.index[site])
        vals.append(value)
    return np.array(idx, dtype=np.int64), np.array(vals, dtype=float)


def subtract_potential(h0: SparseSymmetric, v: Potential) -> SparseSymmetric:
    """H = H0 - V: diagonal decreased by V on its support."""
    if not v.is_finite():
        raise ValidationError("potential values must be finite")
    idx, vals = _site_indices(h0, v, "potential")
    vec = np.zeros(h0.n)
    np.add.at(vec, idx, -vals)
    return h0.add_diagonal(vec)


def add_killing(h0: SparseSymmetric, q: Potential | float) -> SparseSymmetric:
    """H1 = H0 + q. A float is a constant killing rate on every site; ``inf``
    entries delete the site (Dirichlet condition)."""
    if not isinstance(q, Potential):
        q = float(q)
        if math.isnan(q) or q < 0:
            raise ValidationError("killing rate must be >= 0")
        return h0.add_diagonal(np.full(h0.n, q))
    idx, vals = _site_indices(h0, q, "killing")
    finite = np.isfinite(vals)
    vec = np.zeros(h0.n)
    np.add.at(vec, idx[finite], vals[finite])
    out = h0.add_diagonal(vec)
    if (~finite).any():
        keep = np.setdiff1d(np.arange(h0.n), idx[~finite])
        out = out.delete(keep)
    return out


def dirichlet_at(h0: SparseSymmetric, x0) -> SparseSymmetric:
    """Delete the row and column of ``x0`` (psi(x0) = 0)."""
    if x0 not in h0.index:
        raise ValidationError(f"site {x0!r} is not in the box (already deleted or outside)")
    i = h0.index[x0]
    keep = np.concatenate([np.arange(i), np.arange(i + 1, h0.n)])
    return h0.delete(keep)


def hamiltonian(model: ModelSpec, v: Potential, tol: ToleranceConfig = DEFAULT_TOL, **kw) -> SparseSymmetric:
    """Truncated H = H0 - V."""
    return subtract_potential(assemble_h0(model, tol, **kw), v.normalized(model))


# --------------------------------------------------------------------------
# export


def write_matrix(h: SparseSymmetric, path: str | Path) -> None:
    """Text triplets ``row col value`` (0-based, upper triangle), header ``n nnz``."""
    entries = h.entries()
    lines = [f"{h.n} {len(entries)}"]
    lines += [f"{i} {j} {float(v)!r}" for i, j, v in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path: str | Path) -> SparseSymmetric:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    n, nnz = (int(t) for t in lines[0].split())
    entries = []
    for line in lines[1 : nnz + 1]:
        i, j, v = line.split()
        entries.append((int(i), int(j), float(v)))
    return SparseSymmetric.from_entries(n, entries)
