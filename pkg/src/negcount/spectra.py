"""Negative-eigenvalue counting: dense spectra, inertia counts, box-stabilized
N0, Birman-Schwinger counts and Lieb-Thirring sums."""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .core import (
    DEFAULT_TOL,
    Family,
    ModelSpec,
    NonConvergenceError,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
)
from .kernels import resolvent_value
from .operators import SparseSymmetric, assemble_h0, subtract_potential

DENSE_LIMIT = 4000
# sparse inputs larger than this go through the sparse factorization
SPARSE_FACTOR_THRESHOLD = 600
BLOCK_INERTIA_MAX_BANDWIDTH = 1500
# supports up to this size get the exact Birman-Schwinger cross-check in n0_count
BS_GUARD_LIMIT = 2500

MAX_RADIUS = {Family.Z1: 4000, Family.Z2: 160, Family.FRACTIONAL: 1500}
MAX_LEVELS = 12


@dataclasses.dataclass(frozen=True)
class InertiaResult:
    negative: int
    zero: int
    positive: int
    shift: float

    @property
    def n(self) -> int:
        return self.negative + self.zero + self.positive


@dataclasses.dataclass
class SpectrumSummary:
    """Result of a stabilized count.

    ``negative_eigenvalues`` is ``None`` when the box was too large to extract
    eigenvalues; ``n0`` always comes from the inertia count.
    """

    n0: int
    near_zero_count: int
    negative_eigenvalues: list | None
    box_radius_used: tuple = ()
    s_gamma: float | None = None
    method: str = "inertia"

    def __post_init__(self):
        if self.negative_eigenvalues is not None:
            self.negative_eigenvalues = sorted(float(x) for x in self.negative_eigenvalues)
            if len(self.negative_eigenvalues) != self.n0:
                raise NumericalError(
                    f"eigenvalue list ({len(self.negative_eigenvalues)}) disagrees with "
                    f"the inertia count ({self.n0})"
                )

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            "near_zero": self.near_zero_count,
            "eigenvalues": self.negative_eigenvalues,
            "s_gamma": self.s_gamma,
            "box_radius_used": list(self.box_radius_used),
        }


def dense_spectrum(h: SparseSymmetric, limit: int = DENSE_LIMIT) -> np.ndarray:
    """All eigenvalues in ascending order."""
    if h.n > limit:
        raise ValidationError(f"matrix of size {h.n} exceeds the dense limit {limit}")
    return np.linalg.eigvalsh(h.toarray())


# --------------------------------------------------------------------------
# inertia


def _block_pivots(d: np.ndarray) -> np.ndarray:
    """Eigenvalues of the 1x1 / 2x2 blocks of a Bunch-Kaufman D factor."""
    n = d.shape[0]
    out = np.empty(n)
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            out[i : i + 2] = np.linalg.eigvalsh(d[i : i + 2, i : i + 2])
            i += 2
        else:
            out[i] = d[i, i]
            i += 1
    return out


def _pivots_dense(h: SparseSymmetric, shift: float) -> np.ndarray:
    a = h.toarray()
    a[np.diag_indices(h.n)] -= shift
    _, d, _ = sla.ldl(a, lower=True, hermitian=True, check_finite=False)
    return _block_pivots(d)


def _pivots_splu(h: SparseSymmetric, shift: float) -> np.ndarray:
    # symmetric permutation, diagonal pivots: P A P^T = L D L^T, D = diag(U)
    a = (h.tocsr() - shift * sp.identity(h.n, format="csr")).tocsc()
    try:
        lu = spla.splu(
            a,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # exactly singular pivot
        raise NumericalError(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NumericalError("sparse factorization used an unsymmetric pivot order")
    return lu.U.diagonal()


def _pivots_block(h: SparseSymmetric, shift: float) -> np.ndarray:
    """Block LDL^T on the bandwidth-reduced matrix.

    After a reverse Cuthill-McKee permutation the matrix is block tridiagonal
    with blocks of the bandwidth size; each Schur complement is diagonalized,
    so a zero diagonal (which defeats diagonal pivoting) does no harm. The
    returned "pivots" are the Schur-block eigenvalues.
    """
    a = (h.tocsr() - shift * sp.identity(h.n, format="csr")).tocsr()
    perm = reverse_cuthill_mckee(a, symmetric_mode=True)
    a = a[perm][:, perm].tocsr()
    coo = a.tocoo()
    bw = int(np.abs(coo.row - coo.col).max(initial=0))
    b = max(bw, 1)
    if b > BLOCK_INERTIA_MAX_BANDWIDTH:
        raise NumericalError(f"bandwidth {bw} too large for the block inertia count")
    n = h.n
    out = []
    s_inv = None
    coupling = None
    for start in range(0, n, b):
        stop = min(start + b, n)
        block = a[start:stop, start:stop].toarray()
        if s_inv is not None:
            block = block - coupling @ s_inv @ coupling.T
        w, q = np.linalg.eigh(0.5 * (block + block.T))
        out.append(w)
        if stop < n:
            if np.any(w == 0.0):
                raise NumericalError("singular Schur block")
            s_inv = (q / w) @ q.T
            coupling = a[stop : min(stop + b, n), start:stop].toarray()
    return np.concatenate(out)


_PIVOT_METHODS = {"dense": _pivots_dense, "splu": _pivots_splu, "block": _pivots_block}


def _classify(pivots: np.ndarray, scale: float) -> tuple[int, int, bool]:
    stall = 64 * np.finfo(float).eps * max(scale, 1e-300) * max(1, pivots.size)
    small = np.abs(pivots) <= stall
    return int(np.sum(pivots < 0)), int(np.sum(small)), bool(small.any())


def _try_pivots(method: str, h: SparseSymmetric, shift: float, scale: float):
    try:
        return _classify(_PIVOT_METHODS[method](h, shift), scale)
    except NumericalError:
        return None


def count_below(h: SparseSymmetric, shift: float = 0.0, tol: ToleranceConfig = DEFAULT_TOL) -> InertiaResult:
    """Inertia of H - shift*I by a symmetric pivoted LDL^T factorization.

    When a pivot stalls (|pivot| at rounding level) the count is redone at
    shift -/+ tau_neg: eigenvalues between the two perturbed shifts are
    classified as zero. Large sparse inputs use the fast diagonal-pivot
    factorization first and fall back to a block factorization when it stalls.
    """
    n = h.n
    if n == 0:
        return InertiaResult(0, 0, 0, shift)
    scale = float(abs(h.data).max()) + abs(shift)
    tau = tol.neg_threshold * max(1.0, scale)
    methods = ("dense",) if h.is_dense or n <= SPARSE_FACTOR_THRESHOLD else ("splu", "block")
    for method in methods:
        res = _try_pivots(method, h, shift, scale)
        if res is not None and not res[2]:
            return InertiaResult(res[0], 0, n - res[0], shift)
        lo = _try_pivots(method, h, shift - tau, scale)
        hi = _try_pivots(method, h, shift + tau, scale)
        if lo is not None and hi is not None and not (lo[2] or hi[2]):
            return InertiaResult(lo[0], hi[0] - lo[0], n - hi[0], shift)
    raise NumericalError("inertia factorization stalled after perturbation retries")


def count_negative(h: SparseSymmetric, tol: ToleranceConfig = DEFAULT_TOL) -> tuple[int, int]:
    """(#eigenvalues <= -tau_neg, #eigenvalues in (-tau_neg, tau_neg])."""
    tau = tol.neg_threshold
    below = count_below(h, -tau, tol)
    above = count_below(h, tau, tol)
    return below.negative + below.zero, above.negative + above.zero - below.negative - below.zero


def _negative_eigenvalues(h: SparseSymmetric, n0: int) -> list | None:
    if n0 == 0:
        return []
    if h.n <= DENSE_LIMIT:
        ev = dense_spectrum(h)
        return list(ev[:n0])
    if n0 <= 200:
        vals = spla.eigsh(h.tocsr(), k=n0, which="SA", return_eigenvectors=False, tol=1e-12)
        return sorted(vals)
    return None


# --------------------------------------------------------------------------
# box-stabilized counts


def _initial_radius(model: ModelSpec, v: Potential) -> int:
    return max(model.radius, int(math.ceil(1.25 * v.support_radius())) + 6)


def _levels_needed(model: ModelSpec, v: Potential) -> int:
    top = max(v.sites, default=0)
    levels = 1
    while model.nu**levels <= top:
        levels += 1
    return levels


def n0_count(
    model: ModelSpec,
    v: Potential,
    tol: ToleranceConfig = DEFAULT_TOL,
    max_radius: int | None = None,
    eigenvalues: bool = True,
) -> SpectrumSummary:
    """N0(V): number of eigenvalues <= -tau_neg of H0 - V on the infinite model.

    The box grows by ``box_growth_factor`` (hierarchical: one level at a time,
    with the exterior ranks kept so the truncation is a Dirichlet deletion)
    until two consecutive boxes give the same count. For supports of at most
    ``BS_GUARD_LIMIT`` sites the result is checked against the exact
    Birman-Schwinger count at lambda = tau_neg; states too extended for the
    largest admissible box are then counted from it (``method`` becomes
    ``"birman_schwinger"``).
    """
    v = v.normalized(model)
    fam = model.family
    if fam is Family.GENERAL:
        h = subtract_potential(assemble_h0(model, tol), v)
        n0, near = count_negative(h, tol)
        ev = _negative_eigenvalues(h, n0) if eigenvalues else None
        return SpectrumSummary(n0, near, ev, (), method="inertia")

    if fam is Family.HIERARCHICAL:
        limit = max_radius or MAX_LEVELS
        sizes = [max(model.levels, _levels_needed(model, v))]
        build = lambda L: subtract_potential(
            assemble_h0(model.with_levels(L), tol, exterior_ranks=True), v
        )
        grow = lambda L: L + 1
    else:
        limit = max_radius or MAX_RADIUS[fam]
        sizes = [_initial_radius(model, v)]
        build = lambda r: subtract_potential(assemble_h0(model.with_radius(r), tol), v)
        grow = lambda r: max(r + 1, int(math.ceil(r * tol.box_growth_factor)))

    if sizes[0] > limit:
        raise ValidationError(f"potential support needs a box beyond the limit {limit}")
    counts = []
    h = build(sizes[0])
    counts.append(count_negative(h, tol))
    while True:
        nxt = grow(sizes[-1])
        if nxt > limit:
            raise NonConvergenceError(
                f"count did not stabilize up to box {sizes[-1]}",
                last=[(s, c[0]) for s, c in zip(sizes[-2:], counts[-2:])],
            )
        h = build(nxt)
        sizes.append(nxt)
        counts.append(count_negative(h, tol))
        if counts[-1][0] == counts[-2][0]:
            break
        if counts[-1][0] < counts[-2][0]:
            raise NumericalError("count decreased with the box size (Dirichlet monotonicity broken)")
    n0, near = counts[-1]
    # Dirichlet boxes only bound N0 from below, and two equal counts can miss a
    # weakly bound state; the Birman-Schwinger count at lambda = tau_neg is
    # exact on the infinite model, so keep growing while the box is short of it.
    exact = _exact_count(model, v, tol)
    while exact is not None and n0 < exact:
        nxt = grow(sizes[-1])
        if nxt > limit:
            break
        h = build(nxt)
        sizes.append(nxt)
        n0, near = count_negative(h, tol)
    ev = _negative_eigenvalues(h, n0) if eigenvalues else None
    if ev is not None and exact is not None:
        ev = _refine_eigenvalues(model, v, tol, ev)
    method = "inertia"
    if exact is not None and n0 < exact:
        # states extending beyond every admissible box: take their energies
        # from the Birman-Schwinger condition directly
        if ev is not None:
            ev = ev + _bs_eigenvalues(model, v, tol, range(n0, exact))
        near = max(0, near - (exact - n0))
        n0, method = exact, "birman_schwinger"
    return SpectrumSummary(n0, near, ev, tuple(sizes[-2:]), method=method)


# largest support whose Birman-Schwinger matrix is rebuilt at every root-finding
# step; quadrature families pay one integral per distinct offset
REFINE_LIMIT = {
    Family.Z1: 400,
    Family.HIERARCHICAL: 400,
    Family.GENERAL: 400,
    Family.Z2: 12,
    Family.FRACTIONAL: 40,
}


def _bs_root(model: ModelSpec, v: Potential, j: int, lo: float, hi: float) -> float | None:
    def f(loglam):
        mu = np.linalg.eigvalsh(birman_schwinger_matrix(model, v, math.exp(loglam)))
        return mu[::-1][j] - 1.0

    if f(lo) < 0:
        return None
    return -math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14))


def _refine_eigenvalues(model: ModelSpec, v: Potential, tol: ToleranceConfig, ev: list) -> list:
    """Sharpen box eigenvalues with the Birman-Schwinger condition.

    A Dirichlet box eigenvalue lies above the true one, so lambda_j is
    bracketed by [-e_j, max V]; the root of mu_j(K_lambda) = 1 is exact up to
    the resolvent accuracy.
    """
    if len(v) > REFINE_LIMIT[model.family] or not ev:
        return ev
    hi = math.log(v.max() * (1 + 1e-9))
    out = []
    for j, e in enumerate(sorted(ev)):
        root = _bs_root(model, v, j, math.log(max(-e, tol.neg_threshold)), hi)
        out.append(e if root is None else root)
    return out


def _bs_eigenvalues(model: ModelSpec, v: Potential, tol: ToleranceConfig, indices) -> list:
    """Energies -lambda_j with mu_j(K_lambda) = 1, mu_j the j-th largest
    Birman-Schwinger eigenvalue (decreasing in lambda)."""
    lo, hi = math.log(tol.neg_threshold), math.log(v.max() * (1 + 1e-9))
    out = []
    for j in indices:
        root = _bs_root(model, v, j, lo, hi)
        out.append(-tol.neg_threshold if root is None else root)
    return out


def _exact_count(model: ModelSpec, v: Potential, tol: ToleranceConfig) -> int | None:
    if len(v) == 0:
        return 0
    if len(v) > BS_GUARD_LIMIT:
        return None
    return birman_schwinger_count(model, v, tol.neg_threshold)



def birman_schwinger_matrix(model: ModelSpec, v: Potential, lam: float) -> np.ndarray:
    """K = V^{1/2} (H0 + lam)^{-1} V^{1/2} on supp V, from infinite-model resolvents."""
    if not lam > 0:
        raise ValidationError("lambda must be > 0")
    v = v.normalized(model)
    sites = v.sites
    root = np.sqrt(v.values_array())
    g = np.empty((len(sites), len(sites)))
    for i, x in enumerate(sites):
        for j in range(i, len(sites)):
            g[i, j] = g[j, i] = -resolvent_value(model, lam, x, sites[j])
    return root[:, None] * g * root[None, :]


def birman_schwinger_count(model: ModelSpec, v: Potential, lam: float) -> int:
    """Number of eigenvalues >= 1 of K_lambda; equals #{eigenvalues of H <= -lambda}."""
    if len(v) == 0:
        return 0
    k = birman_schwinger_matrix(model, v, lam)
    return int(np.sum(np.linalg.eigvalsh(k) >= 1.0))


def lieb_thirring_sum(summary, gamma: float) -> float:
    """S_gamma = sum |lambda_j|^gamma over the negative eigenvalues.

    ``summary`` may be a :class:`SpectrumSummary` or a sequence of eigenvalues.
    """
    if not gamma > 0:
        raise ValidationError("gamma must be > 0")
    ev = summary.negative_eigenvalues if isinstance(summary, SpectrumSummary) else summary
    if ev is None:
        raise ValidationError("summary carries no eigenvalues")
    ev = np.asarray([e for e in ev if e < 0], dtype=float)
    return float(np.sum(np.abs(ev) ** gamma))
