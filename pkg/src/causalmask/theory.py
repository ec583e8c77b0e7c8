"""Checkable quantities behind the masking-vs-fairness gap.

Arbitrage rates of return, the small-budget lower bound on the gap, the two
dependence measures that drive it, Monte Carlo frequencies of fair/masked
optima over random worlds, and Monte Carlo volumes of the relaxed feasible
sets.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyStratum, RhoTooLarge, SameStratum
from .policies import solve_exploit, solve_fair, solve_mask
from .world import (
    FEASIBILITY_TOL,
    WorldModel,
    context_weighted_rewards,
    marginal_p,
    marginal_x,
    propensity,
    sample_world,
)

GAP_TOL = 1e-9
GENERICITY_MODES = ("free", "independent_homogeneous", "confounded_only", "heterogeneous_only")
VOLUME_FAMILIES = ("fair", "mask")
# Worlds and samples are processed in fixed-size batches so that the result
# depends on the seed only, never on the number of workers.
WORLD_BATCH = 250
SAMPLE_BATCH = 100_000


def best_stratum(model: WorldModel) -> int:
    """The stratum with the highest E[Y | x]; lowest index among ties."""
    _, w_avg = context_weighted_rewards(model)
    return int(np.argmax(w_avg))


def arbitrage_rate(model: WorldModel, i: int, j: int, p: int) -> float:
    """Return per unit of participation when trading (i, 1-p) against (j, p)."""
    if i == j:
        raise SameStratum(f"arbitrage needs two different strata, got i = j = {i}")
    w, _ = context_weighted_rewards(model)
    prop = propensity(model)
    q = 1 - p
    denom = prop[i, q] + prop[j, p]
    if denom == 0:
        raise EmptyStratum(f"cells ({i}, {q}) and ({j}, {p}) both have zero propensity")
    return float((w[i, q] + w[j, p]) / denom)


def swap_budget(model: WorldModel, i: int, j: int, p: int) -> float:
    """Largest participation the balanced (i, 1-p)/(j, p) swap can reach."""
    px = marginal_x(model)
    prop = propensity(model)
    return float(min(px[i], px[j]) * (prop[i, 1 - p] + prop[j, p]))


def gap_lower_bound(model: WorldModel) -> float:
    """Lower bound on W(mask(0)) - W(fair(0)) for small participation budgets.

    Raises ``RhoTooLarge`` unless the fair optimum sits inside the single best
    stratum.  Swaps whose balanced form cannot reach the budget ``rho`` are
    skipped, since the scaled-down swap policy would not exist for them.
    """
    i = best_stratum(model)
    px = marginal_x(model)
    if model.rho > px[i] + 1e-12:
        raise RhoTooLarge(
            f"rho = {model.rho} exceeds Pr(X={i}) = {px[i]}; the fair optimum spills past the best stratum"
        )
    _, w_avg = context_weighted_rewards(model)
    best = 0.0
    for j in range(model.k):
        if j == i:
            continue
        for p in (0, 1):
            if swap_budget(model, i, j, p) < model.rho - 1e-12:
                continue
            try:
                best = max(best, arbitrage_rate(model, i, j, p) - w_avg[i])
            except EmptyStratum:
                continue
    return float(model.rho * best)


def dependence_diagnostics(model: WorldModel) -> tuple[float, float]:
    """Return (confounding, heterogeneity).

    Confounding is ``max |Pr(p|x) - Pr(p)|`` and heterogeneity is the largest
    spread of ``gamma[:, p]`` across strata.  Both vanish exactly when P is
    independent of X and the rewards do not depend on X given P.
    """
    confounding = float(np.max(np.abs(propensity(model) - marginal_p(model)[None, :])))
    heterogeneity = float(np.max(model.gamma.max(axis=0) - model.gamma.min(axis=0)))
    return confounding, heterogeneity


def _simplex(rng, size):
    e = rng.standard_exponential(size)
    return e / e.sum()


def sample_world_mode(k: int, rho: float, mode: str, seed) -> WorldModel:
    """Sample a world with a prescribed dependence structure.

    ``independent_homogeneous``: pi = Pr(x) Pr(p) and gamma depends on p only.
    ``confounded_only``: free pi, gamma depends on p only.
    ``heterogeneous_only``: product-form pi, free gamma.
    ``free``: both free.
    """
    if mode not in GENERICITY_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {GENERICITY_MODES}")
    if mode == "free":
        return sample_world(k, rho, seed)
    rng = np.random.default_rng(seed)
    if mode == "confounded_only":
        pi = _simplex(rng, 2 * k).reshape(k, 2)
    else:
        pi = np.outer(_simplex(rng, k), _simplex(rng, 2))
    if mode == "heterogeneous_only":
        gamma = rng.random((k, 2))
    else:
        gamma = np.repeat(rng.random((1, 2)), k, axis=0)
    return WorldModel(k=k, pi=pi / pi.sum(), gamma=gamma, rho=rho)


@dataclass(frozen=True)
class GenericitySummary:
    n_worlds: int
    gap_positive: float
    exploit_fair: float
    exploit_masked: float
    mask_fair: float
    failed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _genericity_counts(k, rho, mode, seeds) -> np.ndarray:
    counts = np.zeros(5, dtype=np.int64)
    for s in seeds:
        model = sample_world_mode(k, rho, mode, s)
        _, fair = solve_fair(model, 0.0)
        _, mask = solve_mask(model, 0.0)
        _, exploit = solve_exploit(model)
        if mask.status != "optimal":
            counts[4] += 1
            continue
        counts[0] += mask.objective - fair.objective > GAP_TOL
        counts[1] += exploit.max_abs_cate <= FEASIBILITY_TOL
        counts[2] += abs(exploit.ate) <= FEASIBILITY_TOL
        counts[3] += mask.max_abs_cate <= FEASIBILITY_TOL
    return counts


def _run_batches(fn, batches, jobs):
    if jobs is None or jobs <= 1 or len(batches) <= 1:
        return [fn(*b) for b in batches]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*batches)))


def genericity_experiment(
    k: int,
    rho: float,
    n_worlds: int,
    mode: str = "free",
    seed=0,
    jobs: int | None = None,
) -> GenericitySummary:
    """Fractions of sampled worlds where (a) mask(0) beats fair(0), (b) the
    exploit optimum is fair, (c) it is masked, (d) the mask(0) optimum is fair."""
    if n_worlds < 1:
        raise ValueError("n_worlds must be >= 1")
    if mode not in GENERICITY_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {GENERICITY_MODES}")
    world_seeds = np.random.SeedSequence(seed).spawn(n_worlds)
    batches = [
        (k, rho, mode, world_seeds[start : start + WORLD_BATCH])
        for start in range(0, n_worlds, WORLD_BATCH)
    ]
    counts = sum(_run_batches(_genericity_counts, batches, jobs))
    solved = n_worlds - int(counts[4])
    denom = max(solved, 1)
    return GenericitySummary(
        n_worlds=n_worlds,
        gap_positive=counts[0] / denom,
        exploit_fair=counts[1] / denom,
        exploit_masked=counts[2] / denom,
        mask_fair=counts[3] / denom,
        failed=int(counts[4]),
    )


def _accepted(px, family, eps, n, seed) -> int:
    rng = np.random.default_rng(seed)
    alpha = rng.random((n, px.size, 2))
    gaps = alpha[:, :, 1] - alpha[:, :, 0]
    if family == "fair":
        ok = np.all(np.abs(gaps) <= eps, axis=1)
    else:
        ok = np.abs(gaps @ px) <= eps
    return int(ok.sum())


def feasible_volume_estimate(
    model: WorldModel,
    family: str,
    eps: float,
    n_samples: int,
    seed=0,
    jobs: int | None = None,
) -> float:
    """Fraction of uniform policies in [0,1]^{2k} inside the eps-fair or eps-mask slab(s).

    The participation equality is left out: it is shared by both families and
    would make every volume zero.  The same seed gives the same policy draws
    for every ``eps``, so estimates across an eps grid are nested.
    """
    if family not in VOLUME_FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {VOLUME_FAMILIES}")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    px = marginal_x(model)
    seeds = np.random.SeedSequence(seed).spawn(-(-n_samples // SAMPLE_BATCH))
    batches = []
    for b, s in enumerate(seeds):
        size = min(SAMPLE_BATCH, n_samples - b * SAMPLE_BATCH)
        batches.append((px, family, float(eps), size, s))
    return sum(_run_batches(_accepted, batches, jobs)) / n_samples


def volume_slope(
    model: WorldModel,
    family: str,
    eps_grid,
    n_samples: int,
    seed=0,
    jobs: int | None = None,
) -> tuple[float, list[float]]:
    """Least-squares slope of log acceptance against log eps, plus the acceptances."""
    eps_grid = [float(e) for e in eps_grid]
    acc = [feasible_volume_estimate(model, family, e, n_samples, seed, jobs) for e in eps_grid]
    if min(acc) <= 0:
        return float("nan"), acc
    slope = np.polyfit(np.log(eps_grid), np.log(acc), 1)[0]
    return float(slope), acc


SWEEP_FAMILIES = ("fair", "mask", "mask+fair")


@dataclass
class PerformanceSweep:
    """Tidy rows ``(world_id, eps, family, norm_perf)`` plus skipped worlds."""

    rows: list[tuple[int, float, str, float]]
    skipped: int
    n_worlds: int

    def mean(self, family: str, eps: float) -> float:
        values = [r[3] for r in self.rows if r[2] == family and r[1] == eps]
        return float(np.nanmean(values)) if values else float("nan")


def _sweep_worlds(k, rho, eps_grid, families, start, seeds):
    from .policies import normalized_performance, performance_anchors, solve_family

    rows, skipped = [], 0
    for offset, s in enumerate(seeds):
        model = sample_world(k, rho, s)
        low, high = performance_anchors(model)
        if high - low < 1e-12:
            skipped += 1
            continue
        for eps in eps_grid:
            for family in families:
                _, report = solve_family(model, family, eps)
                perf = normalized_performance(model, report.objective, (low, high))
                rows.append((start + offset, eps, family, float(perf)))
    return rows, skipped


def performance_sweep(
    k: int,
    rho: float,
    n_worlds: int,
    eps_grid,
    families=SWEEP_FAMILIES,
    seed=0,
    jobs: int | None = None,
) -> PerformanceSweep:
    """Normalized performance of each relaxed family over random worlds.

    For ``mask+fair`` the grid value is the fairness band with ATE held at 0.
    Worlds where exploit does no better than fair(0) have no scale and are
    skipped.  Rows come out ordered by world id whatever ``jobs`` is.
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise ValueError("eps grid must be nonempty")
    if any(e < 0 for e in eps_grid):
        raise ValueError("eps values must be >= 0")
    for family in families:
        if family not in SWEEP_FAMILIES:
            raise ValueError(f"unknown family {family!r}; expected one of {SWEEP_FAMILIES}")
    world_seeds = np.random.SeedSequence(seed).spawn(n_worlds)
    batches = [
        (k, rho, eps_grid, tuple(families), start, world_seeds[start : start + WORLD_BATCH])
        for start in range(0, n_worlds, WORLD_BATCH)
    ]
    rows, skipped = [], 0
    for part, skip in _run_batches(_sweep_worlds, batches, jobs):
        rows.extend(part)
        skipped += skip
    return PerformanceSweep(rows, skipped, n_worlds)
