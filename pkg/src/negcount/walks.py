"""Seeded Monte-Carlo simulation of the continuous-time walks generated by -H0.

Walks are simulated in fixed blocks of ``BLOCK`` walks; block ``b`` draws from
the stream ``make_rng(seed, b)``. Results are therefore identical for any
number of worker threads.

Far from the sites of interest (targets, regions, killing support) the
simulators jump ahead exactly: on Z^d a walk at l1-distance D from the focus
set takes D-1 jumps in one draw (multinomial displacement, Gamma-distributed
elapsed time), and a hierarchical walk outside the focus cube only tracks its
hierarchical distance to the origin.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import math
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Family,
    ModelSpec,
    Potential,
    ValidationError,
    make_rng,
)
from .operators import assemble_h0

BLOCK = 256


@dataclasses.dataclass(frozen=True)
class WalkConfig:
    model: ModelSpec
    start: object
    t_cap: float = math.inf
    step_cap: int = 10**8
    seed: int = 0
    n_walks: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.model.family is Family.FRACTIONAL:
            raise ValidationError("fractional walks have heavy-tailed jumps and are not simulated")
        if not self.t_cap > 0 or self.step_cap < 1:
            raise ValidationError("caps must be positive")
        if self.n_walks < 1:
            raise ValidationError("n_walks must be >= 1")
        object.__setattr__(self, "start", self.model.normalize_site(self.start))


@dataclasses.dataclass
class WalkStats:
    """Monte-Carlo aggregate. ``samples`` holds the per-walk values that were
    averaged; ``extras`` carries quantity-specific diagnostics."""

    estimate: float
    std_error: float
    n_effective: int
    censored_fraction: float
    quantity: str = ""
    samples: np.ndarray | None = None
    extras: dict = dataclasses.field(default_factory=dict)
    method: str = "mc"

    def to_dict(self) -> dict:
        out = {
            "quantity": self.quantity,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_effective": self.n_effective,
            "censored_fraction": self.censored_fraction,
            "method": self.method,
        }
        out.update(self.extras)
        return out


def _mean_stats(values: np.ndarray, censored: np.ndarray, quantity: str, **extras) -> WalkStats:
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return WalkStats(float(values.mean()), se, n, float(censored.mean()), quantity, values, dict(extras))


# --------------------------------------------------------------------------
# single-walk paths


@dataclasses.dataclass
class WalkPath:
    times: np.ndarray  # jump times
    sites: list  # sites[0] = start, sites[i] = position after jump i
    ranks: np.ndarray | None = None  # hierarchical jump ranks

    @property
    def holding_times(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.times]))


def _zd_neighbors(dim: int) -> np.ndarray:
    return np.array([[1], [-1]]) if dim == 1 else np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])


def simulate_walk(cfg: WalkConfig, walk_index: int = 0) -> WalkPath:
    """One walk path up to ``t_cap`` or ``step_cap`` jumps, from stream (seed, walk_index).

    Holding times are exponential with rate h(x,x) (2d on Z^d, 1 on the
    hierarchical lattice where the rank r ~ a_r and the target is uniform in
    the rank-r cube, the current site included).
    """
    model = cfg.model
    rng = make_rng(cfg.seed, 1 << 20, walk_index)
    t, times, sites, ranks = 0.0, [], [cfg.start], []
    if model.family in (Family.Z1, Family.Z2):
        d = model.dim
        nb = _zd_neighbors(d)
        pos = np.atleast_1d(np.array(cfg.start, dtype=np.int64))
        while len(times) < cfg.step_cap:
            t += rng.exponential(1.0 / (2 * d))
            if t > cfg.t_cap:
                break
            pos = pos + nb[rng.integers(2 * d)]
            times.append(t)
            sites.append(int(pos[0]) if d == 1 else (int(pos[0]), int(pos[1])))
        return WalkPath(np.array(times), sites)
    if model.family is Family.HIERARCHICAL:
        nu, p = model.nu, model.p
        x = int(cfg.start)
        while len(times) < cfg.step_cap:
            t += rng.exponential(1.0)
            if t > cfg.t_cap:
                break
            k = int(rng.geometric(1.0 - p))
            block = nu**k
            x = (x // block) * block + int(rng.integers(block)) if k < 60 else (x // block) * block + _big_uniform(rng, block)
            times.append(t)
            sites.append(x)
            ranks.append(k)
        return WalkPath(np.array(times), sites, np.array(ranks, dtype=int))
    walker = _GraphWalker(model)
    i = walker.index[cfg.start]
    while len(times) < cfg.step_cap:
        rate = walker.rate[i]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > cfg.t_cap:
            break
        j = walker.jump(np.array([i]), rng)[0]
        if j < 0:  # killed by the row defect
            times.append(t)
            sites.append(None)
            break
        i = j
        times.append(t)
        sites.append(walker.sites[i])
    return WalkPath(np.array(times), sites)


def _big_uniform(rng: np.random.Generator, n: int) -> int:
    # uniform integer in [0, n) for n beyond int64
    out, scale = 0, 1
    while scale < n:
        out = out * (1 << 62) + int(rng.integers(1 << 62))
        scale *= 1 << 62
    return out % n


def sample_jumps(model: ModelSpec, site, n: int, seed: int = 0) -> list:
    """``n`` independent one-step destinations from ``site`` (jump chain only)."""
    rng = make_rng(seed, 1 << 21)
    site = model.normalize_site(site)
    if model.family in (Family.Z1, Family.Z2):
        nb = _zd_neighbors(model.dim)
        steps = nb[rng.integers(len(nb), size=n)]
        pos = np.atleast_1d(np.array(site)) + steps
        return [int(r[0]) for r in pos] if model.dim == 1 else [tuple(int(c) for c in r) for r in pos]
    if model.family is Family.HIERARCHICAL:
        ks = rng.geometric(1.0 - model.p, size=n)
        blocks = model.nu ** np.minimum(ks, 40)
        offs = (rng.random(n) * blocks).astype(np.int64)
        return [int((site // b) * b + o) for b, o in zip(blocks, offs)]
    walker = _GraphWalker(model)
    idx = walker.jump(np.full(n, walker.index[site]), rng)
    return [walker.sites[j] if j >= 0 else None for j in idx]


# --------------------------------------------------------------------------
# block engines


class _GraphWalker:
    def __init__(self, model: ModelSpec):
        h = assemble_h0(model).toarray()
        self.sites = list(model.generator_table.sites)
        self.index = {s: i for i, s in enumerate(self.sites)}
        self.rate = np.diag(h).copy()
        off = -h.copy()
        np.fill_diagonal(off, 0.0)
        defect = np.maximum(self.rate - off.sum(axis=1), 0.0)
        probs = np.hstack([off, defect[:, None]])
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = probs / probs.sum(axis=1, keepdims=True)
        self.cum = np.cumsum(np.nan_to_num(probs), axis=1)
        self.cum[:, -1] = 1.0

    def jump(self, idx: np.ndarray, rng) -> np.ndarray:
        u = rng.random(idx.size)
        j = (self.cum[idx] < u[:, None]).sum(axis=1)
        return np.where(j >= len(self.sites), -1, j)


@dataclasses.dataclass
class _Focus:
    """Sites of interest: weights per site for occupation and killing, and a target set."""

    target: frozenset = frozenset()
    region: frozenset = frozenset()
    q: dict = dataclasses.field(default_factory=dict)

    @property
    def sites(self) -> list:
        return sorted(set(self.target) | set(self.region) | set(self.q), key=repr)


@dataclasses.dataclass
class _BlockResult:
    hit: np.ndarray  # hitting time of the target (inf if none before the cap)
    occupation: np.ndarray  # time in region before min(cap, hit)
    q_integral: np.ndarray  # int_0^{min(cap, hit)} q(x(u)) du
    censored: np.ndarray  # step cap exhausted before reaching t_cap or the target


def _zd_block(cfg: WalkConfig, focus: _Focus, n: int, rng) -> _BlockResult:
    d = cfg.model.dim
    fsites = focus.sites
    fpos = np.array([np.atleast_1d(s) for s in fsites], dtype=np.int64).reshape(len(fsites), d)
    is_target = np.array([s in focus.target for s in fsites])
    in_region = np.array([s in focus.region for s in fsites], dtype=float)
    qval = np.array([focus.q.get(s, 0.0) for s in fsites], dtype=float)
    pos = np.tile(np.atleast_1d(np.array(cfg.start, dtype=np.int64)), (n, 1))
    t = np.zeros(n)
    hit = np.full(n, np.inf)
    occ = np.zeros(n)
    qint = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    active = np.ones(n, bool)
    cap = cfg.t_cap
    if len(fsites):
        start_here = np.all(fpos == pos[0], axis=1)
        if (start_here & is_target).any():
            return _BlockResult(np.zeros(n), occ, qint, np.zeros(n, bool))
    while active.any():
        ia = np.flatnonzero(active)
        p = pos[ia]
        if len(fsites):
            dist = np.abs(p[:, None, :] - fpos[None, :, :]).sum(axis=2)
            near = dist.argmin(axis=1)
            dmin = dist[np.arange(ia.size), near]
        else:
            dmin = np.full(ia.size, np.iinfo(np.int64).max // 4)
            near = np.zeros(ia.size, dtype=int)
        k = np.maximum(dmin - 1, 1)
        k = np.minimum(k, np.maximum(cfg.step_cap - steps[ia], 1))
        dt = rng.gamma(k.astype(float), 1.0 / (2 * d))
        t_end = t[ia] + dt
        # holding at a focus site (only possible for single jumps from dmin == 0)
        at = dmin == 0
        if at.any():
            span = np.minimum(t_end, cap) - t[ia]
            j = near[at]
            occ[ia[at]] += span[at] * in_region[j]
            with np.errstate(invalid="ignore"):
                qint[ia[at]] += np.where(qval[j] > 0, qval[j] * span[at], 0.0)
        if d == 1:
            disp = (2 * rng.binomial(k, 0.5) - k)[:, None]
        else:
            counts = rng.multinomial(k, [0.25] * 4)
            disp = np.stack([counts[:, 0] - counts[:, 1], counts[:, 2] - counts[:, 3]], axis=1)
        newpos = p + disp
        steps[ia] += k
        over = t_end >= cap
        t[ia] = t_end
        pos[ia] = newpos
        done = over.copy()
        if is_target.any():
            tpos = fpos[is_target]
            reached = np.all(newpos[:, None, :] == tpos[None, :, :], axis=2).any(axis=1) & ~over
            hit[ia[reached]] = t_end[reached]
            done |= reached
        done |= steps[ia] >= cfg.step_cap
        active[ia[done]] = False
    censored = (steps >= cfg.step_cap) & np.isinf(hit) & (t < cap)
    return _BlockResult(hit, occ, qint, censored)


def _hier_block(cfg: WalkConfig, focus: _Focus, n: int, rng) -> _BlockResult:
    model = cfg.model
    nu, p = model.nu, model.p
    fs = [int(s) for s in focus.sites] + [int(cfg.start)]
    m_levels = 1
    while nu**m_levels <= max(fs):
        m_levels += 1
    inner = nu**m_levels
    # state >= 0: position inside Q^M(0); state < 0: -(hierarchical distance to 0) > M
    state = np.full(n, int(cfg.start), dtype=np.int64)
    in_region = np.zeros(inner)
    in_region[np.array([int(s) for s in focus.region], dtype=np.int64)] = 1.0
    qval = np.zeros(inner)
    for s, val in focus.q.items():
        qval[int(s)] = val
    is_target = np.zeros(inner, bool)
    is_target[np.array([int(s) for s in focus.target], dtype=np.int64)] = True
    t = np.zeros(n)
    hit = np.full(n, np.inf)
    occ = np.zeros(n)
    qint = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    cap = cfg.t_cap
    if is_target[int(cfg.start)]:
        return _BlockResult(np.zeros(n), occ, qint, np.zeros(n, bool))
    active = np.ones(n, bool)
    log_nu = math.log(nu)
    while active.any():
        ia = np.flatnonzero(active)
        s = state[ia]
        inside = s >= 0
        dist = np.where(inside, 0, -s)
        # jumps of rank < dist leave an outside walk's distance unchanged: skip them
        p_escape = np.where(inside, 1.0, p ** np.maximum(dist - 1, 0).astype(float))
        njumps = np.where(inside, 1, rng.geometric(np.clip(p_escape, 1e-300, 1.0)))
        dt = rng.gamma(njumps.astype(float), 1.0)
        t_end = t[ia] + dt
        span = np.minimum(t_end, cap) - t[ia]
        if inside.any():
            pos_in = s[inside]
            occ[ia[inside]] += span[inside] * in_region[pos_in]
            qv = qval[pos_in]
            with np.errstate(invalid="ignore"):
                qint[ia[inside]] += np.where(qv > 0, qv * span[inside], 0.0)
        # rank of the effective jump
        k = np.where(inside, rng.geometric(1.0 - p, size=ia.size), np.maximum(dist - 1, 0) + rng.geometric(1.0 - p, size=ia.size))
        new = np.empty(ia.size, dtype=np.int64)
        local = inside & (k <= m_levels)
        if local.any():
            blk = nu ** k[local]
            new[local] = (s[local] // blk) * blk + (rng.random(local.sum()) * blk).astype(np.int64)
        wide = ~local
        if wide.any():
            # uniform point of Q^k(0): distance k - E with P(E >= m) = nu^-m
            e = np.floor(-np.log(rng.random(wide.sum())) / log_nu).astype(np.int64)
            dnew = np.maximum(k[wide] - e, 0)
            into = dnew <= m_levels
            vals = np.where(into, (rng.random(wide.sum()) * inner).astype(np.int64), -dnew)
            new[wide] = vals
        steps[ia] += njumps
        over = t_end >= cap
        t[ia] = t_end
        state[ia] = new
        done = over.copy()
        reached = (new >= 0) & ~over
        if reached.any():
            rr = np.zeros(ia.size, bool)
            rr[reached] = is_target[new[reached]]
            hit[ia[rr]] = t_end[rr]
            done |= rr
        done |= steps[ia] >= cfg.step_cap
        active[ia[done]] = False
    censored = (steps >= cfg.step_cap) & np.isinf(hit) & (t < cap)
    return _BlockResult(hit, occ, qint, censored)


def _graph_block(cfg: WalkConfig, focus: _Focus, n: int, rng) -> _BlockResult:
    walker = _GraphWalker(cfg.model)
    m = len(walker.sites)
    in_region = np.zeros(m)
    qval = np.zeros(m)
    is_target = np.zeros(m, bool)
    for s in focus.region:
        in_region[walker.index[s]] = 1.0
    for s, val in focus.q.items():
        qval[walker.index[s]] = val
    for s in focus.target:
        is_target[walker.index[s]] = True
    cur = np.full(n, walker.index[cfg.start])
    t = np.zeros(n)
    hit = np.full(n, np.inf)
    occ = np.zeros(n)
    qint = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    if is_target[cur[0]]:
        return _BlockResult(np.zeros(n), occ, qint, np.zeros(n, bool))
    active = np.ones(n, bool)
    cap = cfg.t_cap
    while active.any():
        ia = np.flatnonzero(active)
        c = cur[ia]
        rate = walker.rate[c]
        with np.errstate(divide="ignore"):
            dt = np.where(rate > 0, rng.exponential(1.0, ia.size) / np.where(rate > 0, rate, 1.0), np.inf)
        t_end = t[ia] + dt
        span = np.minimum(t_end, cap) - t[ia]
        occ[ia] += span * in_region[c]
        with np.errstate(invalid="ignore"):
            qint[ia] += np.where(qval[c] > 0, qval[c] * span, 0.0)
        nxt = walker.jump(c, rng)
        over = t_end >= cap
        killed = nxt < 0
        steps[ia] += 1
        t[ia] = t_end
        cur[ia] = np.where(killed, c, nxt)
        done = over | killed
        reached = ~over & ~killed & is_target[np.maximum(nxt, 0)]
        hit[ia[reached]] = t_end[reached]
        done |= reached | (steps[ia] >= cfg.step_cap)
        active[ia[done]] = False
    censored = (steps >= cfg.step_cap) & np.isinf(hit) & (t < cap)
    return _BlockResult(hit, occ, qint, censored)


def _run(cfg: WalkConfig, focus: _Focus) -> _BlockResult:
    fam = cfg.model.family
    engine = {Family.Z1: _zd_block, Family.Z2: _zd_block, Family.HIERARCHICAL: _hier_block}.get(fam, _graph_block)
    nblocks = -(-cfg.n_walks // BLOCK)
    sizes = [min(BLOCK, cfg.n_walks - b * BLOCK) for b in range(nblocks)]

    def one(b):
        return engine(cfg, focus, sizes[b], make_rng(cfg.seed, b))

    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(one, range(nblocks)))
    else:
        parts = [one(b) for b in range(nblocks)]
    return _BlockResult(*(np.concatenate([getattr(r, f.name) for r in parts]) for f in dataclasses.fields(_BlockResult)))


def _sites(cfg: WalkConfig, sites: Iterable) -> frozenset:
    return frozenset(cfg.model.normalize_site(s) for s in sites)


# --------------------------------------------------------------------------
# public experiments


def hitting_time(cfg: WalkConfig, target) -> WalkStats:
    """First hitting time tau of ``target`` (a site or a collection of sites).

    ``estimate`` is P(tau <= t_cap); ``samples`` holds tau per walk (inf when
    the walk was stopped at the cap), ``extras`` the mean of the observed
    hitting times.
    """
    targets = target if isinstance(target, (set, frozenset, list)) else [target]
    res = _run(cfg, _Focus(target=_sites(cfg, targets)))
    hit = res.hit
    found = np.isfinite(hit)
    stats = _mean_stats(found.astype(float), ~found, "P(tau<=t_cap)")
    stats.samples = hit
    stats.censored_fraction = float((~found).mean())
    stats.extras["mean_observed_tau"] = float(hit[found].mean()) if found.any() else math.nan
    stats.extras["step_capped"] = int(res.censored.sum())
    return stats


def laplace_hitting_mc(cfg: WalkConfig, target, lam: float) -> WalkStats:
    """Monte-Carlo estimate of E_x exp(-lam tau).

    Walks stopped at ``t_cap`` contribute 0; the resulting downward bias is at
    most exp(-lam t_cap), recorded as ``extras["bias_bound"]``.
    """
    if not lam > 0:
        raise ValidationError("lambda must be > 0")
    res = _run(cfg, _Focus(target=_sites(cfg, [target])))
    vals = np.exp(-lam * res.hit)
    return _mean_stats(vals, ~np.isfinite(res.hit), "E exp(-lam tau)", bias_bound=math.exp(-lam * cfg.t_cap) if math.isfinite(cfg.t_cap) else 0.0)


@dataclasses.dataclass
class HittingCDFTable:
    rows: list  # dicts: alpha, empirical, limit, stderr, n, censored_fraction

    def to_csv(self) -> str:
        lines = ["alpha empirical limit stderr n censored_fraction"]
        for r in self.rows:
            lines.append(f"{r['alpha']!r} {r['empirical']!r} {r['limit']!r} {r['stderr']!r} {r['n']} {r['censored_fraction']!r}")
        return "\n".join(lines) + "\n"


def hitting_cdf_limit(alpha: float) -> float:
    """(alpha - 2)_+ / alpha."""
    return max(alpha - 2.0, 0.0) / alpha


def hitting_cdf_experiment(x_norm: int, alpha_grid: Sequence[float], cfg: WalkConfig) -> HittingCDFTable:
    """Empirical P(ln tau / ln|x| <= alpha) on Z2 from x = (|x|, 0) with the limit law attached."""
    if cfg.model.family is not Family.Z2:
        raise ValidationError("the hitting CDF experiment runs on Z2")
    alpha_grid = [float(a) for a in alpha_grid]
    if x_norm < 2:
        raise ValidationError("|x| must be >= 2")
    amax = max(alpha_grid)
    if cfg.t_cap < x_norm**amax:
        raise ValidationError(f"t_cap {cfg.t_cap:g} is below |x|^alpha_max = {x_norm**amax:g}")
    cfg = dataclasses.replace(cfg, start=(int(x_norm), 0))
    stats = hitting_time(cfg, (0, 0))
    tau = stats.samples
    n = tau.size
    rows = []
    for a in alpha_grid:
        ind = (tau <= x_norm**a).astype(float)
        pe = float(ind.mean())
        rows.append(
            {
                "alpha": a,
                "empirical": pe,
                "limit": hitting_cdf_limit(a),
                "stderr": math.sqrt(pe * (1 - pe) / n),
                "n": n,
                "censored_fraction": stats.censored_fraction,
            }
        )
    return HittingCDFTable(rows)


def killed_survival(cfg: WalkConfig, q) -> WalkStats:
    """P(walk survives up to t_cap) under killing at rate q(x(u)).

    Each walk contributes exp(-int_0^t q(x(u)) du) (the conditional survival
    probability given the path), integrated exactly over holding intervals.
    ``q`` is a :class:`Potential` (``inf`` entries kill on arrival) or a
    constant rate.
    """
    if not math.isfinite(cfg.t_cap):
        raise ValidationError("killed_survival needs a finite t_cap (the survival time)")
    if not isinstance(q, Potential):
        q0 = float(q)
        if q0 < 0:
            raise ValidationError("killing rate must be >= 0")
        val = math.exp(-q0 * cfg.t_cap)
        return WalkStats(val, 0.0, cfg.n_walks, 0.0, "survival", None, {"path_independent": True})
    q = q.normalized(cfg.model)
    inf_sites = [s for s, val in q.items() if math.isinf(val)]
    finite = {s: val for s, val in q.items() if math.isfinite(val)}
    res = _run(cfg, _Focus(target=frozenset(inf_sites), q=finite))
    with np.errstate(over="ignore"):
        vals = np.where(np.isfinite(res.hit), 0.0, np.exp(-res.q_integral))
    return _mean_stats(vals, res.censored, "survival")


def occupation_time(cfg: WalkConfig, region: Iterable) -> WalkStats:
    """Expected time spent in ``region`` up to ``t_cap``."""
    if not math.isfinite(cfg.t_cap):
        raise ValidationError("occupation_time needs a finite t_cap")
    res = _run(cfg, _Focus(region=_sites(cfg, region)))
    return _mean_stats(res.occupation, res.censored, "occupation")
