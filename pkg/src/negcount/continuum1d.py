"""Continuum 1-D checks: oscillation counting for -psi'' - V psi on the line and
the Dirichlet-killed heat kernel at the origin."""
from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.linalg import eigvalsh_tridiagonal

from .bounds import BoundReport, bargmann_1d, refined_bargmann_1d_continuum
from .core import InvariantViolation, NonConvergenceError, ValidationError


@dataclasses.dataclass(frozen=True)
class GridPotential:
    """Piecewise-linear V >= 0 on [nodes[0], nodes[-1]], zero outside."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ValidationError("nodes and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(nodes) <= 0):
            raise ValidationError("nodes must be strictly ascending")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValidationError("potential values must be finite and >= 0")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, func, a: float, b: float, n: int = 2001) -> "GridPotential":
        x = np.linspace(a, b, n)
        return cls(x, np.array([func(t) for t in x], dtype=float))

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.nodes[0]) & (x <= self.nodes[-1])
        return np.where(inside, np.interp(x, self.nodes, self.values), 0.0)

    def write(self, path) -> None:
        lines = [f"{float(x)!r} {float(v)!r}" for x, v in zip(self.nodes, self.values)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "GridPotential":
        xs, vs = [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"line {lineno}: expected 'x value'")
            try:
                xs.append(float(parts[0]))
                vs.append(float(parts[1]))
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
        return cls(np.array(xs), np.array(vs))


def square_well(depth: float, a: float = 1.0, n: int = 2001) -> GridPotential:
    """V = depth on [-a, a]."""
    return GridPotential(np.linspace(-a, a, n), np.full(n, float(depth)))


def square_well_count(depth: float, a: float = 1.0) -> int:
    """Bound states of a square well of width 2a: 1 + floor(2a sqrt(depth)/pi).

    The even/odd bound-state conditions tan and -cot of z = a sqrt(depth - k^2)
    add a state each time z_max = a sqrt(depth) passes a multiple of pi/2.
    """
    if depth <= 0:
        return 0
    return 1 + int(math.floor(2.0 * a * math.sqrt(depth) / math.pi))


@dataclasses.dataclass(frozen=True)
class PruferResult:
    node_count: int
    final_angle: float
    steps: int = 0


def _rk4_angle(nodes: np.ndarray, values: np.ndarray, n_steps: int) -> float:
    a, b = nodes[0], nodes[-1]
    h = (b - a) / n_steps
    x = a + h * np.arange(n_steps + 1)
    v_at = np.interp(x, nodes, values)
    v_mid = np.interp(x[:-1] + 0.5 * h, nodes, values)
    theta = 0.5 * math.pi  # the zero-energy solution is constant left of the support
    cos, sin = math.cos, math.sin
    for i in range(n_steps):
        v0, vm, v1 = v_at[i], v_mid[i], v_at[i + 1]
        c, s = cos(theta), sin(theta)
        k1 = c * c + v0 * s * s
        t2 = theta + 0.5 * h * k1
        c, s = cos(t2), sin(t2)
        k2 = c * c + vm * s * s
        t3 = theta + 0.5 * h * k2
        c, s = cos(t3), sin(t3)
        k3 = c * c + vm * s * s
        t4 = theta + h * k3
        c, s = cos(t4), sin(t4)
        k4 = c * c + v1 * s * s
        theta += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return theta


def _count_from_angle(theta: float) -> int:
    # zeros inside the support (theta crossing k pi) plus one more on the right
    # when the linear continuation psi(b) + psi'(b)(x - b) changes sign
    return int(math.floor(theta / math.pi + 0.5))


def prufer_count(v: GridPotential, tol: float = 1e-9, initial_steps: int = 1000, max_steps: int = 2**22) -> PruferResult:
    """Number of negative eigenvalues of -d^2/dx^2 - V on the line.

    Integrates theta' = cos^2 theta + V sin^2 theta (zero energy) across the
    support with classical RK4, halving the step until both the count and the
    final angle (to ``tol``) are stable.
    """
    nodes, values = v.nodes, v.values
    if not np.any(values > 0):
        return PruferResult(0, 0.5 * math.pi, 0)
    n = initial_steps
    prev = _rk4_angle(nodes, values, n)
    while True:
        n *= 2
        if n > max_steps:
            raise NonConvergenceError("Prufer angle did not converge", last=prev)
        cur = _rk4_angle(nodes, values, n)
        if _count_from_angle(cur) == _count_from_angle(prev) and abs(cur - prev) < tol * max(1.0, abs(cur)):
            return PruferResult(_count_from_angle(cur), cur, n)
        prev = cur


def discretized_count(v: GridPotential, h: float | None = None, pad: float = 1.0) -> int:
    """Negative eigenvalues of the three-point discretization of -d^2/dx^2 - V
    on the padded support with free (Neumann) ends.

    Neumann bracketing makes this an upper bound for the line count that
    becomes exact as h -> 0 (outside the support the zero-energy solution is
    constant, which the free ends reproduce).
    """
    a, b = v.domain
    width = b - a
    h = h or 1e-3 * width
    n = int(math.ceil((width + 2 * pad) / h)) + 1
    x = np.linspace(a - pad, b + pad, n)
    h = x[1] - x[0]
    d = np.full(n, 2.0 / h**2) - v(x)
    d[0] -= 1.0 / h**2
    d[-1] -= 1.0 / h**2
    e = np.full(n - 1, -1.0 / h**2)
    return int(eigvalsh_tridiagonal(d, e, select="v", select_range=(-np.inf, -1e-12)).size)


def killed_kernel_1d(t: float, x: float) -> float:
    """(1 - exp(-x^2/t))/sqrt(4 pi t): Brownian kernel killed at the origin, diagonal."""
    if not t > 0:
        raise ValidationError("t must be > 0")
    return -math.expm1(-x * x / t) / math.sqrt(4.0 * math.pi * t)


def killed_kernel_integral(x: float, horizon: float = 1e6) -> float:
    """int_0^inf killed_kernel_1d(t, x) dt by quadrature to ``horizon`` plus the
    analytic tail (two leading terms of the large-t expansion)."""
    if x == 0:
        return 0.0
    f = lambda t: killed_kernel_1d(t, x)
    edges = [0.0] + [x * x * 10.0**k for k in range(-3, 7) if x * x * 10.0**k < horizon] + [horizon]
    body = sum(integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:]))
    x2 = x * x
    # 1 - e^{-u} = u - u^2/2 + ..., u = x^2/t
    tail = (2.0 * x2 / math.sqrt(horizon) - x2 * x2 / (3.0 * horizon**1.5)) / math.sqrt(4.0 * math.pi)
    return body + tail


def F_gamma(gamma: float) -> float:
    """F(g) = int_g^inf (1 - exp(-1/tau))/sqrt(4 pi tau) dtau."""
    if gamma < 0:
        raise ValidationError("gamma must be >= 0")
    f = lambda tau: -math.expm1(-1.0 / tau) / math.sqrt(4.0 * math.pi * tau) if tau > 0 else 0.0
    val = 0.0
    lo = gamma
    for hi in (1.0, 100.0, 1e4):
        if hi > lo:
            val += integrate.quad(f, lo, hi, epsabs=1e-13, limit=200)[0]
            lo = hi
    val += integrate.quad(f, lo, math.inf, epsabs=1e-13, limit=200)[0]
    return val


@dataclasses.dataclass
class ContinuumComparison:
    count: int
    bargmann: BoundReport
    refined: BoundReport | None

    @property
    def dominated(self) -> bool:
        ok = self.count <= self.bargmann.value
        return ok and (self.refined is None or self.count <= self.refined.value)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "bargmann": self.bargmann.value,
            "refined": None if self.refined is None else self.refined.value,
            "sigma": None if self.refined is None else self.refined.sigma,
        }


def verify_continuum_bounds(v: GridPotential, sigma: float | None = 1.0) -> ContinuumComparison:
    """Compare the oscillation count with the Bargmann and refined Bargmann
    bounds; raises :class:`InvariantViolation` if a bound falls below the count."""
    count = prufer_count(v).node_count
    barg = bargmann_1d(v, lattice=False)
    refined = refined_bargmann_1d_continuum(v, sigma) if sigma is not None else None
    out = ContinuumComparison(count, barg, refined)
    if not out.dominated:
        raise InvariantViolation(f"bound below count: {out.to_dict()}")
    return out


def continuum_lieb_thirring_bound(v: GridPotential, gamma: float, Lambda: float | None = None) -> float:
    """Lambda^gamma + int V^{1+gamma} |x| dx (Dirichlet point at the origin)."""
    lam = float(v.values.max()) if Lambda is None else float(Lambda)
    if v.values.max() > lam:
        raise ValidationError("V exceeds Lambda")
    return lam**gamma + float(integrate.trapezoid(v.values ** (1 + gamma) * np.abs(v.nodes), v.nodes))
