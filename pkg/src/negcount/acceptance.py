"""Acceptance suite: seventeen end-to-end checks shared by ``negcount verify``
and the test suite.

Each check returns ``(passed, detail)``; :func:`run_suite` times it, catches
errors (an exception counts as a failure) and filters by suite tag or number.
Module attributes are looked up at call time so a patched function (fault
injection) is picked up by the checks.
"""
from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable, Iterable

import numpy as np
from scipy.special import gamma as gamma_fn

from . import bounds, continuum1d, kernels, operators, spectra, walks, witnesses
from .core import ModelSpec, Potential, hier_distance_raw, lattice_norm, make_potential, make_rng

SUITES = ("kernels", "operators", "spectra", "bounds", "walks", "witnesses", "continuum1d")


@dataclasses.dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    suites: tuple
    check: Callable[[int], tuple]


@dataclasses.dataclass
class CriterionResult:
    number: int
    name: str
    suites: tuple
    passed: bool
    detail: dict
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] AC{self.number:02d} {self.name} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {
            "criterion": self.number,
            "name": self.name,
            "suites": list(self.suites),
            "passed": self.passed,
            "detail": self.detail,
            "seconds": round(self.seconds, 3),
        }


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


# --------------------------------------------------------------------------
# kernels


def ac01_z1_resolvent(seed: int) -> tuple:
    t0 = time.perf_counter()
    lam = 0.5
    model = ModelSpec.z1()
    box = ModelSpec.z1(200)
    h = operators.assemble_h0(box).toarray() + lam * np.eye(box.n_sites)
    e0 = np.zeros(box.n_sites)
    e0[box.index_of(0)] = 1.0
    dense = -np.linalg.solve(h, e0)
    worst = 0.0
    for x in range(-20, 21):
        val = kernels.resolvent(model, lam, x, 0).value
        worst = max(worst, _rel(val, dense[box.index_of(x)]))
    r00 = kernels.resolvent(model, lam, 0, 0).value
    err00 = abs(r00 - (-2.0 / 3.0))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and err00 <= 1e-12 and elapsed < 5.0
    return ok, {"max_rel_err_vs_dense": worst, "R00_err": err00, "seconds": elapsed}


def ac02_sum_rule(seed: int) -> tuple:
    lam, n = 0.5, 40
    model = ModelSpec.z1()
    body = math.fsum(kernels.resolvent(model, lam, x, 0).value for x in range(-n, n + 1))
    # R(x,0) = R(0,0) q^{|x|} on Z1; add the two geometric tails
    r0 = kernels.resolvent(model, lam, 0, 0).value
    q = kernels.resolvent(model, lam, 1, 0).value / r0
    tail = 2.0 * r0 * q ** (n + 1) / (1.0 - q)
    total = body + tail
    return abs(total + 2.0) <= 1e-6, {"sum": total, "target": -2.0}


def ac03_regularized(seed: int) -> tuple:
    z1 = ModelSpec.z1()
    z1_err = max(
        max(
            abs(kernels.regularized_resolvent(z1, x, 0, method="extrapolate") - abs(x)),
            abs(kernels.regularized_resolvent(z1, x, 0) - abs(x)),
        )
        for x in range(-20, 21)
    )
    z2 = kernels.regularized_resolvent(ModelSpec.z2(), (1, 0), (0, 0))
    frac = kernels.regularized_resolvent(ModelSpec.fractional(0.5), 1, 0)
    hier_model = ModelSpec.hierarchical(2, 0.5, 8)
    hier_rows = []
    for x in (1, 2, 4, 8, 16, 32):
        d = hier_distance_raw(x, 0, 2)
        hier_rows.append((x, d, kernels.regularized_resolvent(hier_model, x, 0)))
    checks = {
        "z1_abs_x": z1_err <= 1e-6,
        "z2_half": abs(z2 - 0.5) <= 1e-6,
        "fractional_4_over_pi": abs(frac - 4.0 / math.pi) <= 1e-6,
        "hierarchical_equals_distance": all(val == d for _, d, val in hier_rows),
    }
    detail = {
        "checks": checks,
        "z1_max_err": z1_err,
        "z2": z2,
        "fractional": frac,
        "hierarchical": [{"x": x, "d_h": d, "rtilde": v} for x, d, v in hier_rows],
    }
    return all(checks.values()), detail


def ac08_log_periodic(seed: int) -> tuple:
    prof = kernels.hier_log_periodic(ModelSpec.hierarchical(2, 0.3, 1), 0, (1e2, 1e6))
    return prof.min_correlation >= 0.99, {"min_correlation": prof.min_correlation, "periods": len(prof.correlations) + 1}


def ac09_fractional_asymptotics(seed: int) -> tuple:
    half = ModelSpec.fractional(0.5)
    v_half = kernels.heat_diagonal(half, 1e4, 0) * 1e4
    err_half = _rel(v_half, 1.0 / math.pi)
    m = ModelSpec.fractional(0.75)
    ts = np.logspace(3, 5, 9)
    ps = np.array([kernels.heat_diagonal(m, t, 0) for t in ts])
    slope = -np.polyfit(np.log(ts), np.log(ps), 1)[0]
    pref = gamma_fn(2.0 / 3.0) / (1.5 * math.pi)
    err_pref = _rel(kernels.heat_diagonal(m, 1e4, 0) * 1e4 ** (2.0 / 3.0), pref)
    ok = err_half <= 0.02 and err_pref <= 0.03 and abs(slope - 2.0 / 3.0) <= 0.02
    return ok, {"alpha_half_rel_err": err_half, "alpha_075_prefactor_rel_err": err_pref, "alpha_075_exponent": slope}


# --------------------------------------------------------------------------
# operators / spectra


def ac04_inertia(seed: int) -> tuple:
    rng = make_rng(seed, 4)
    mismatches = []
    for i in range(100):
        n = int(rng.integers(2, 301))
        density = float(rng.uniform(0.005, 0.1))
        a = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
        a = np.triu(a, 1)
        a = a + a.T + np.diag(rng.normal(0.0, 1.0, n))
        h = operators.SparseSymmetric.from_dense(a)
        got = spectra.count_below(h, 0.0).negative
        want = int(np.sum(np.linalg.eigvalsh(a) < 0))
        if got != want:
            mismatches.append({"case": i, "n": n, "inertia": got, "dense": want})
    return not mismatches, {"cases": 100, "mismatches": mismatches}


def ac06_single_well(seed: int) -> tuple:
    z1 = ModelSpec.z1()
    exact = -(math.sqrt(13.0) - 2.0)
    summary = spectra.n0_count(z1, Potential({0: 3.0}))
    dense_err = abs(summary.negative_eigenvalues[0] - exact)
    bisect_err = abs(witnesses.single_delta_eigenvalue(z1, 3.0) - exact)
    counts = {f"Z1 v={v}": spectra.n0_count(z1, Potential({0: float(v)}), eigenvalues=False).n0 for v in (1, 3, 10)}
    z2 = ModelSpec.z2()
    counts.update({f"Z2 v={v}": spectra.n0_count(z2, Potential({(0, 0): float(v)}), eigenvalues=False).n0 for v in (2, 4)})
    ok = dense_err <= 1e-6 and bisect_err <= 1e-10 and all(c == 1 for c in counts.values())
    return ok, {"dense_err": dense_err, "bisection_err": bisect_err, "counts": counts}


def ac07_hierarchical_spectrum(seed: int) -> tuple:
    nu, p, levels = 2, 0.3, 8
    h = operators.assemble_h0(ModelSpec.hierarchical(nu, p, levels)).toarray()
    ev = np.linalg.eigvalsh(h)
    expected = [0.0]
    for k in range(1, levels + 1):
        expected += [p ** (k - 1) - p**levels] * nu ** (levels - k)
    expected = np.sort(expected)
    err = float(np.max(np.abs(ev - expected)))
    return err <= 1e-10, {"max_abs_err": err, "n": int(ev.size)}


def ac10_generator(seed: int) -> tuple:
    worst = {}
    for alpha in (0.3, 0.5, 0.9):
        coef = operators.fractional_coefficients(alpha, 200)
        worst[str(alpha)] = float(coef.values[1:].max())
    c15 = operators.fractional_coefficients(1.5, 200)
    top15 = float(c15.values[1:].max())
    ok = all(v <= 1e-9 for v in worst.values()) and top15 > 1e-6
    return ok, {"max_offdiag": worst, "max_offdiag_alpha_1.5": top15}


# --------------------------------------------------------------------------
# bounds


def _random_potential(rng: np.random.Generator, dim: int, max_radius: int, seed: int) -> Potential:
    params = {
        "radius": int(rng.integers(0, max_radius + 1)),
        "dim": dim,
        "vmax": float(np.exp(rng.uniform(math.log(0.05), math.log(5.0)))),
        "density": float(rng.uniform(0.2, 1.0)),
    }
    return make_potential("random_uniform", params, seed=seed)


def ac05_bargmann(seed: int) -> tuple:
    t0 = time.perf_counter()
    rng = make_rng(seed, 5)
    violations = []
    cases = [(ModelSpec.z1(), 1)] * 200 + [(ModelSpec.z2(), 2)] * 50
    for i, (model, dim) in enumerate(cases):
        v = _random_potential(rng, dim, 15, seed * 100_000 + 5000 + i)
        n0 = spectra.n0_count(model, v, eigenvalues=False).n0
        b = bounds.bargmann_general(model, v).value
        if n0 > b:
            violations.append({"case": i, "n0": n0, "bound": b})
    elapsed = time.perf_counter() - t0
    return not violations and elapsed < 120, {"cases": len(cases), "violations": violations, "seconds": elapsed}


def ac15_lieb_thirring(seed: int) -> tuple:
    rng = make_rng(seed, 15)
    model = ModelSpec.z1()
    violations = []
    for i in range(50):
        v = _random_potential(rng, 1, 8, seed * 100_000 + 15000 + i)
        if len(v) == 0:
            continue
        summary = spectra.n0_count(model, v)
        lam = v.max()
        for g in (0.25, 0.5, 1.0):
            s = spectra.lieb_thirring_sum(summary, g)
            for variant in ("lit9a", "lithi9a"):
                b = bounds.lieb_thirring_bound(variant, model, v, g, Lambda=lam).value
                if s > b:
                    violations.append({"case": i, "gamma": g, "variant": variant, "S": s, "bound": b})
    return not violations, {"cases": 50, "violations": violations}


def ac16_killed_clr(seed: int) -> tuple:
    rng = make_rng(seed, 16)
    model = ModelSpec.z1()
    worst = 0.0
    for i in range(20):
        v = _random_potential(rng, 1, 12, seed * 100_000 + 16000 + i)
        rep = bounds.clr_estimate(model, v, sigma=0.0, killed=0)
        target = math.fsum(abs(x) * val for x, val in v.items())
        worst = max(worst, abs(rep.value - 1.0 - target))
    return worst <= 1e-6, {"max_abs_err": worst}


def _quasi_classical_potential() -> Potential:
    r = 25
    return Potential({(i, j): 0.04 for i in range(-r, r + 1) for j in range(-r, r + 1) if i * i + j * j <= r * r})


def ac17_calibration(seed: int) -> tuple:
    def spread(a, b):
        return abs(a - b) / min(a, b)

    z2_params = {"radius": 6, "dim": 2, "vmax": 1.0, "density": 0.5}
    z2_c = []
    for block in (0, 1):
        corpus = [make_potential("random_uniform", z2_params, seed=seed * 1000 + 25 * block + j) for j in range(25)]
        z2_c.append(bounds.calibrate_constant("z2_log", corpus, {}).constant)
    hier_params = {"nu": 2, "p": 0.6, "levels": 7}
    hier_c = []
    for block in (0, 1):
        corpus = [
            make_potential("random_uniform", {"sites": list(range(64)), "vmax": 0.9}, seed=seed * 1000 + 500 + 25 * block + j)
            for j in range(25)
        ]
        hier_c.append(bounds.calibrate_constant("hier_1z1", corpus, hier_params).constant)

    v = _quasi_classical_potential()
    weight = math.fsum(val * math.log(2.0 + lattice_norm(x)) for x, val in v.items())
    ratios = {}
    for a in (1, 10, 100):
        n0 = spectra.n0_count(ModelSpec.z2(), v.scaled(a), eigenvalues=False).n0
        ratios[str(a)] = n0 / (a * weight)
    band = max(ratios.values()) / min(ratios.values())
    checks = {
        "z2_log_stable": spread(*z2_c) < 0.2,
        "hier_1z1_stable": spread(*hier_c) < 0.2,
        "quasi_classical_band": band <= 2.0,
    }
    return all(checks.values()), {
        "checks": checks,
        "z2_log_constants": z2_c,
        "hier_1z1_constants": hier_c,
        "ratios": ratios,
        "band": band,
    }


# --------------------------------------------------------------------------
# walks


def ac11_laplace_hitting(seed: int) -> tuple:
    lam = 0.5
    cfg1 = walks.WalkConfig(ModelSpec.z1(), 1, t_cap=80.0, seed=seed * 1000 + 11, n_walks=10_000)
    mc1 = walks.laplace_hitting_mc(cfg1, 0, lam)
    z2 = ModelSpec.z2()
    target2 = kernels.resolvent(z2, lam, (2, 0), (0, 0)).value / kernels.resolvent(z2, lam, (0, 0), (0, 0)).value
    cfg2 = walks.WalkConfig(z2, (2, 0), t_cap=80.0, seed=seed * 1000 + 12, n_walks=10_000)
    mc2 = walks.laplace_hitting_mc(cfg2, (0, 0), lam)
    z1_dev = abs(mc1.estimate - 0.5) / mc1.std_error
    z2_dev = abs(mc2.estimate - target2) / mc2.std_error
    return z1_dev <= 3 and z2_dev <= 3, {
        "z1": {"mc": mc1.estimate, "se": mc1.std_error, "target": 0.5, "deviation_se": z1_dev},
        "z2": {"mc": mc2.estimate, "se": mc2.std_error, "target": target2, "deviation_se": z2_dev},
    }


def ac12_hitting_cdf(seed: int) -> tuple:
    x = 40
    cfg = walks.WalkConfig(ModelSpec.z2(), (x, 0), t_cap=float(x) ** 4, seed=seed * 1000 + 13, n_walks=2000)
    table = walks.hitting_cdf_experiment(x, [2.0, 4.0], cfg)
    p2, p4 = table.rows[0]["empirical"], table.rows[1]["empirical"]
    return 0.35 <= p4 <= 0.65 and p2 <= 0.15, {"P_le_2": p2, "P_le_4": p4, "walks": table.rows[0]["n"]}


# --------------------------------------------------------------------------
# witnesses


def ac13_witnesses(seed: int) -> tuple:
    z1 = ModelSpec.z1()
    v1 = lambda c: 1.0 / (1.0 + np.abs(c[:, 0]))
    bumps = [witnesses.sine_bump_1d(k) for k in range(3, 8)]
    cert1 = witnesses.certify_lower_bound(z1, v1, bumps, allow_overlap=True)
    dense1 = witnesses.box_count(z1, v1, cert1.box_radius)

    z2 = ModelSpec.z2()
    v2 = lambda c: 50.0 / (2.0 + np.hypot(c[:, 0], c[:, 1])) ** 2
    layers = witnesses.auto_square_layers(v2, 3)
    cert2 = witnesses.certify_lower_bound(z2, v2, layers)
    dense2 = witnesses.box_count(z2, v2, 30)
    ok = cert1.m == 5 and dense1 >= 5 and cert2.m >= 3 and dense2 >= cert2.m
    return ok, {
        "z1": {"m": cert1.m, "box_radius": cert1.box_radius, "dense_count": dense1},
        "z2": {"m": cert2.m, "ritz": cert2.rayleigh_values, "dense_count_radius_30": dense2},
    }


# --------------------------------------------------------------------------
# continuum


def _continuum_corpus(seed: int, n: int = 20) -> list:
    rng = make_rng(seed, 14)
    out = []
    for _ in range(n):
        half = float(rng.uniform(1.0, 5.0))
        x = np.linspace(-half, half, 801)
        k = int(rng.integers(1, 5))
        amps = np.exp(rng.uniform(math.log(0.1), math.log(20.0), k))
        centers = rng.uniform(-0.7 * half, 0.7 * half, k)
        widths = rng.uniform(0.1, 0.5 * half, k)
        vals = sum(a * np.exp(-((x - c) / w) ** 2) for a, c, w in zip(amps, centers, widths))
        out.append(continuum1d.GridPotential(x, vals))
    return out


def ac14_continuum(seed: int) -> tuple:
    wells = {}
    for depth in (1.0, 10.0):
        got = continuum1d.prufer_count(continuum1d.square_well(depth)).node_count
        wells[str(depth)] = {"prufer": got, "oracle": continuum1d.square_well_count(depth)}
    wells_ok = all(w["prufer"] == w["oracle"] for w in wells.values()) and [w["prufer"] for w in wells.values()] == [1, 3]
    violations = []
    for i, v in enumerate(_continuum_corpus(seed)):
        for sigma in (0.5, 1.0, 2.0):
            try:
                continuum1d.verify_continuum_bounds(v, sigma)
            except Exception as exc:  # InvariantViolation carries the numbers
                violations.append({"case": i, "sigma": sigma, "error": str(exc)})
    return wells_ok and not violations, {"square_wells": wells, "violations": violations}


CRITERIA = (
    Criterion(1, "closed-form Z1 resolvent vs dense inversion", ("kernels",), ac01_z1_resolvent),
    Criterion(2, "resolvent sum rule", ("kernels",), ac02_sum_rule),
    Criterion(3, "regularized resolvents per family", ("kernels",), ac03_regularized),
    Criterion(4, "inertia count vs dense spectrum", ("spectra",), ac04_inertia),
    Criterion(5, "Bargmann dominance on Z1 and Z2", ("bounds",), ac05_bargmann),
    Criterion(6, "single-well exactness", ("spectra", "witnesses"), ac06_single_well),
    Criterion(7, "hierarchical spectrum", ("operators", "spectra"), ac07_hierarchical_spectrum),
    Criterion(8, "hierarchical log-periodicity", ("kernels",), ac08_log_periodic),
    Criterion(9, "fractional heat-kernel asymptotics", ("kernels",), ac09_fractional_asymptotics),
    Criterion(10, "fractional generator sign criterion", ("operators",), ac10_generator),
    Criterion(11, "Laplace hitting identity by Monte Carlo", ("walks",), ac11_laplace_hitting),
    Criterion(12, "hitting-time CDF limit on Z2", ("walks",), ac12_hitting_cdf),
    Criterion(13, "lower-bound witnesses", ("witnesses",), ac13_witnesses),
    Criterion(14, "continuum Prufer counts and bounds", ("continuum1d",), ac14_continuum),
    Criterion(15, "Lieb-Thirring dominance", ("bounds",), ac15_lieb_thirring),
    Criterion(16, "killed CLR reduces to Bargmann", ("bounds",), ac16_killed_clr),
    Criterion(17, "calibration stability and quasi-classical band", ("bounds",), ac17_calibration),
)


def select(selector: str | None = None) -> list:
    """Criteria matching a suite tag, a number (``"5"`` or ``"AC5"``) or all."""
    if selector in (None, "", "all"):
        return list(CRITERIA)
    sel = selector.strip().lower()
    if sel.startswith("ac"):
        sel = sel[2:]
    if sel.isdigit():
        chosen = [c for c in CRITERIA if c.number == int(sel)]
    else:
        chosen = [c for c in CRITERIA if sel in c.suites]
    if not chosen:
        raise ValueError(f"no acceptance criteria match {selector!r}; suites: {', '.join(SUITES)}")
    return chosen


def run_criterion(criterion: Criterion, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        passed, detail = criterion.check(seed)
    except Exception as exc:  # a crash is a failed criterion, reported with its cause
        passed, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
    return CriterionResult(criterion.number, criterion.name, criterion.suites, bool(passed), detail, time.perf_counter() - t0)


def run_suite(selector: str | None = None, seed: int = 0, echo: Callable[[str], None] | None = None) -> list:
    results = []
    for c in select(selector):
        res = run_criterion(c, seed)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results


def failed(results: Iterable[CriterionResult]) -> list:
    return [r for r in results if not r.passed]
