"""Synthetic decision data and the longevity experiment.

A longevity run feeds a policy successively larger samples and records how
many decisions accumulate before each fairness hypothesis is first rejected.
The tests run on the cumulative data after every batch, without any
sequential-testing correction, so repeated looks inflate the false-rejection
rate of a fair policy over a long run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NoUsableStrata
from .policies import solve_family
from .stats import ALPHA_LEVEL, StratifiedCounts, TestReport, cate_test, z_test_ate
from .world import Policy, WorldModel

DEFAULT_BATCH = 500
DEFAULT_CAP = 200_000
CSV_COLUMNS = ("policy", "world_id", "rep", "n_reject_ate", "n_reject_cate", "n_caught", "total_unfairness")


@dataclass(frozen=True)
class DecisionBatch:
    """Sampled units.  ``y`` is -1 wherever ``d`` is 0 (outcome unobserved)."""

    x: np.ndarray
    p: np.ndarray
    d: np.ndarray
    y: np.ndarray
    k: int

    def __len__(self) -> int:
        return self.x.size

    def counts(self) -> StratifiedCounts:
        return StratifiedCounts.from_arrays(self.x, self.p, self.d, self.k)

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame({"x": self.x, "p": self.p, "d": self.d, "y": self.y})


def generate_batch(model: WorldModel, policy: Policy, n: int, seed) -> DecisionBatch:
    """Draw ``n`` i.i.d. units: (x, p) ~ pi, D ~ Bernoulli(alpha), Y ~ Bernoulli(gamma) when D = 1.

    ``seed`` may be a ``numpy.random.Generator``, in which case it is advanced.
    """
    if policy.alpha.shape != model.pi.shape:
        raise DimensionMismatch(f"policy shape {policy.alpha.shape} does not match world {model.pi.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cells = rng.choice(2 * model.k, size=n, p=model.pi.ravel())
    d = rng.random(n) < policy.alpha.ravel()[cells]
    y = rng.random(n) < model.gamma.ravel()[cells]
    return DecisionBatch(
        x=cells // 2,
        p=cells % 2,
        d=d.astype(np.int8),
        y=np.where(d, y, -1).astype(np.int8),
        k=model.k,
    )


def sample_counts(model: WorldModel, policy: Policy, n: int, rng: np.random.Generator) -> StratifiedCounts:
    """Cell counts of ``n`` simulated units without materializing the records."""
    cell_n = rng.multinomial(n, model.pi.ravel())
    cell_d = rng.binomial(cell_n, policy.alpha.ravel())
    return StratifiedCounts(cell_n.reshape(model.k, 2), cell_d.reshape(model.k, 2))


def _rejects(test: Callable[..., TestReport], counts: StratifiedCounts, alpha: float) -> bool:
    try:
        return test(counts, alpha).reject
    except NoUsableStrata:
        return False


@dataclass(frozen=True)
class LongevityOutcome:
    n_reject_ate: int
    n_reject_cate: int
    n_caught: int
    total_unfairness: float
    reached_cap_ate: bool
    reached_cap_cate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def run_longevity(
    model: WorldModel,
    policy: Policy,
    batch_size: int = DEFAULT_BATCH,
    cap: int = DEFAULT_CAP,
    alpha_level: float = ALPHA_LEVEL,
    seed=0,
) -> LongevityOutcome:
    """Sample size at which H_ATE and H_CATE are first rejected.

    Both tests run on the cumulative counts after each batch.  When a test
    first rejects at a batch boundary, the units of that batch are replayed
    one at a time to find the exact unit count of the first rejection, so
    the result has single-unit resolution while full scans happen only once
    per hypothesis.  A hypothesis never rejected is reported at ``cap``.

    Total unfairness adds ``|alpha[x, 1] - alpha[x, 0]|`` for every arriving
    candidate, decided or not, until the policy is caught.
    """
    if batch_size < 1 or cap < batch_size:
        raise ValueError("need batch_size >= 1 and cap >= batch_size")
    rng = np.random.default_rng(seed)
    k = model.k
    cum_n = np.zeros((k, 2), dtype=np.int64)
    cum_d = np.zeros((k, 2), dtype=np.int64)
    first = {"ate": None, "cate": None}
    tests = {"ate": z_test_ate, "cate": cate_test}
    strata = []
    seen = 0
    while seen < cap and (first["ate"] is None or first["cate"] is None):
        size = min(batch_size, cap - seen)
        batch = generate_batch(model, policy, size, rng)
        strata.append(batch.x)
        cell = 2 * batch.x + batch.p
        batch_n = np.bincount(cell, minlength=2 * k).reshape(k, 2)
        batch_d = np.bincount(cell, weights=batch.d, minlength=2 * k).astype(np.int64).reshape(k, 2)
        new_n, new_d = cum_n + batch_n, cum_d + batch_d
        counts = StratifiedCounts(new_n, new_d)
        for name, test in tests.items():
            if first[name] is None and _rejects(test, counts, alpha_level):
                first[name] = seen + _first_rejection_within(test, cum_n, cum_d, batch, alpha_level)
        cum_n, cum_d = new_n, new_d
        seen += size

    n_ate = first["ate"] if first["ate"] is not None else cap
    n_cate = first["cate"] if first["cate"] is not None else cap
    caught = min(n_ate, n_cate)
    gaps = np.abs(policy.alpha[:, 1] - policy.alpha[:, 0])
    arrivals = np.concatenate(strata)[:caught] if strata else np.zeros(0, dtype=np.int64)
    unfairness = float(np.bincount(arrivals, minlength=k) @ gaps)
    return LongevityOutcome(
        n_reject_ate=int(n_ate),
        n_reject_cate=int(n_cate),
        n_caught=int(caught),
        total_unfairness=unfairness,
        reached_cap_ate=first["ate"] is None,
        reached_cap_cate=first["cate"] is None,
    )


def _first_rejection_within(test, base_n, base_d, batch: DecisionBatch, alpha: float) -> int:
    k = base_n.shape[0]
    onehot = np.zeros((len(batch), 2 * k), dtype=np.int64)
    rows = np.arange(len(batch))
    onehot[rows, 2 * batch.x + batch.p] = 1
    prefix_n = np.cumsum(onehot, axis=0)
    prefix_d = np.cumsum(onehot * batch.d[:, None], axis=0)
    for m in range(len(batch)):
        counts = StratifiedCounts(base_n + prefix_n[m].reshape(k, 2), base_d + prefix_d[m].reshape(k, 2))
        if _rejects(test, counts, alpha):
            return m + 1
    return len(batch)


PolicySpec = str | Policy | Callable[[WorldModel], Policy]


def _resolve_policy(spec: PolicySpec, model: WorldModel) -> Policy:
    if isinstance(spec, Policy):
        return spec
    if isinstance(spec, str):
        policy, report = solve_family(model, spec, 0.0)
        if policy is None:
            raise RuntimeError(f"{spec} policy could not be solved: {report.status}")
        return policy
    return spec(model)


def _longevity_task(model, name, policy, world_id, rep, batch_size, cap, alpha_level, seed):
    out = run_longevity(model, policy, batch_size, cap, alpha_level, seed)
    return {"policy": name, "world_id": world_id, "rep": rep, **out.to_dict()}


@dataclass
class LongevitySweep:
    rows: list[dict]
    summary: dict[str, dict[str, float]]

    def csv_rows(self) -> list[tuple]:
        return [tuple(r[c] for c in CSV_COLUMNS) for r in self.rows]


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def longevity_sweep(
    worlds: Sequence[WorldModel],
    policies: Sequence[str] | Mapping[str, PolicySpec] = ("fair", "mask", "exploit"),
    replications: int = 50,
    seed=0,
    *,
    batch_size: int = DEFAULT_BATCH,
    cap: int = DEFAULT_CAP,
    alpha_level: float = ALPHA_LEVEL,
    jobs: int | None = None,
) -> LongevitySweep:
    """Run every (world, policy, replication) and summarize per policy.

    ``policies`` is a list of family names solved at eps = 0, or a mapping
    from a label to a family name, a fixed ``Policy`` or a function of the
    world.  Each run gets its own seed derived from ``seed``, the world
    index and the replication, so adding workers never changes results.
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    if not isinstance(policies, Mapping):
        policies = {name: name for name in policies}
    tasks = []
    for w, model in enumerate(worlds):
        for p_idx, (name, spec) in enumerate(policies.items()):
            policy = _resolve_policy(spec, model)
            for rep in range(replications):
                run_seed = np.random.SeedSequence([int(seed), w, p_idx, rep])
                tasks.append((model, name, policy, w, rep, batch_size, cap, alpha_level, run_seed))
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_longevity_task, *zip(*tasks)))
    else:
        rows = [_longevity_task(*t) for t in tasks]

    summary = {}
    for name in policies:
        mine = [r for r in rows if r["policy"] == name]
        stats = {}
        for col in ("n_reject_ate", "n_reject_cate", "n_caught", "total_unfairness"):
            mean, se = _mean_se([r[col] for r in mine])
            stats[f"{col}_mean"] = mean
            stats[f"{col}_se"] = se
        summary[name] = stats
    return LongevitySweep(rows, summary)
