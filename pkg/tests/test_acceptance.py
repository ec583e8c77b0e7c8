"""Acceptance criteria, each at its stated tolerance and runtime budget.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from causalmask import admissions
from causalmask.policies import (
    exploit_program,
    fair_program,
    solve_exploit,
    solve_fair,
    solve_mask,
)
from causalmask.sim import longevity_sweep, sample_counts
from causalmask.simplex import solve_lp
from causalmask.stats import cate_test, chi_square_sf, fisher_exact_two_sided, z_test_ate
from causalmask.theory import (
    gap_lower_bound,
    genericity_experiment,
    performance_sweep,
    sample_world_mode,
    volume_slope,
)
from causalmask.world import Policy, ate_of_policy, sample_world, welfare

from oracles import fisher_two_sided_exact


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


def check_all(failures):
    assert not failures, "\n".join(failures)


@pytest.mark.acceptance(1, "admissions example reproduction")
def test_admissions_reproduction():
    tol = 1e-9
    with Budget(1.0):
        world = admissions.world()
        w_fair = solve_fair(world, 0.0)[1].objective
        _, mask = solve_mask(world, 0.0)
        w_exploit = solve_exploit(world)[1].objective
        success = welfare(world, admissions.D_MASK) / world.rho
        bound = gap_lower_bound(world)
        lp_gap = mask.objective - w_fair
        assert w_fair == pytest.approx(1 / 20, abs=tol)
        assert mask.objective == pytest.approx(1 / 12, abs=tol)
        assert w_exploit == pytest.approx(1 / 12, abs=tol)
        assert ate_of_policy(world, admissions.D_MASK) == pytest.approx(0.0, abs=tol)
        assert success == pytest.approx(5 / 6, abs=tol)
        assert ate_of_policy(world, admissions.EXPLOIT_ONLY_11) == pytest.approx(1 / 3, abs=tol)
        assert bound == pytest.approx(1 / 30, abs=tol)
        assert lp_gap == pytest.approx(bound, abs=tol)


@pytest.mark.acceptance(2, "oracle equivalence, containment and monotonicity on 1000 worlds")
def test_oracle_equivalence():
    tol = 1e-9
    grid = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
    failures = []
    with Budget(30.0):
        seeds = np.random.SeedSequence(0).spawn(1000)
        for i, seed in enumerate(seeds):
            k = (1, 2, 5, 10)[i % 4]
            rho = float(np.random.default_rng(seed).uniform(0.02, 1.0))
            model = sample_world(k, rho, seed)
            w_exploit = solve_exploit(model)[1].objective
            w_fair0 = solve_fair(model, 0.0)[1].objective
            if abs(solve_lp(exploit_program(model)).objective_value - w_exploit) > tol:
                failures.append(f"world {i}: greedy exploit differs from LP")
            if abs(solve_lp(fair_program(model, 0.0)).objective_value - w_fair0) > tol:
                failures.append(f"world {i}: water-filling differs from LP")
            prev_fair = prev_mask = -math.inf
            for eps in grid:
                w_fair = solve_fair(model, eps)[1].objective
                w_mask = solve_mask(model, eps)[1].objective
                if not (w_fair <= w_mask + tol and w_mask <= w_exploit + tol):
                    failures.append(f"world {i} eps {eps}: containment broken")
                if w_fair < prev_fair - tol or w_mask < prev_mask - tol:
                    failures.append(f"world {i} eps {eps}: not monotone")
                prev_fair, prev_mask = w_fair, w_mask
    check_all(failures)


@pytest.mark.acceptance(3, "gap and measure-zero frequencies by dependence mode")
def test_genericity_frequencies():
    # 1000 worlds per mode at each of k = 2 and k = 10, rho = 0.25, seed 0.
    failures = []
    with Budget(60.0):
        for k in (2, 10):
            summary = {m: genericity_experiment(k, 0.25, 1000, m, seed=0) for m in
                       ("independent_homogeneous", "heterogeneous_only", "confounded_only", "free")}
            if summary["independent_homogeneous"].gap_positive != 0.0:
                failures.append(f"k={k} independent_homogeneous: gap > 0 in "
                                f"{summary['independent_homogeneous'].gap_positive:.3f} of worlds")
            for mode in ("heterogeneous_only", "confounded_only"):
                frac = summary[mode].gap_positive
                if not frac >= 0.99:
                    failures.append(f"k={k} {mode}: gap > 0 in {frac:.3f} of worlds, need >= 0.99")
            if not summary["free"].exploit_masked < 0.01:
                failures.append(f"k={k} free: exploit masked in {summary['free'].exploit_masked:.3f}")
    check_all(failures)


@pytest.mark.acceptance(4, "feasible-set volume scaling")
def test_volume_scaling():
    grid = [0.02, 0.04, 0.08, 0.16]
    failures = []
    with Budget(60.0):
        worlds = {k: sample_world(k, 0.05, 0) for k in (2, 3, 10)}
        for family, k, expected in (("fair", 2, 2), ("fair", 3, 3), ("mask", 2, 1), ("mask", 10, 1)):
            slope, _ = volume_slope(worlds[k], family, grid, 1_000_000, seed=0)
            if not abs(slope - expected) <= 0.2:
                failures.append(f"{family} k={k}: slope {slope:.3f}, expected {expected} +- 0.2")
    check_all(failures)


def _all_small_tables(limit):
    for a, b, c in itertools.product(range(limit + 1), repeat=3):
        if a + b > limit or a + c > limit:
            continue
        for d in range(0, limit + 1 - max(c, b)):
            yield a, b, c, d


@pytest.mark.acceptance(5, "statistical calibration")
def test_statistical_calibration():
    failures = []
    with Budget(300.0):
        world = admissions.world()
        fair = Policy([[0.12, 0.12], [0.06, 0.06]])
        z_hits = cate_hits = 0
        for seed in np.random.SeedSequence(0).spawn(2000):
            counts = sample_counts(world, fair, 10_000, np.random.default_rng(seed))
            z_hits += z_test_ate(counts).reject
            cate_hits += cate_test(counts).reject
        z_rate, cate_rate = z_hits / 2000, cate_hits / 2000
        if not 0.03 <= z_rate <= 0.07:
            failures.append(f"z-test null rejection rate {z_rate:.4f} outside [0.03, 0.07]")
        if not cate_rate <= 0.06:
            failures.append(f"cate_test null rejection rate {cate_rate:.4f} above 0.06")

        for s in np.linspace(0.0, 100.0, 1001):
            if abs(chi_square_sf(s, 2) - math.exp(-s / 2)) > 1e-12:
                failures.append(f"chi-square df=2 at s={s}")
                break

        n_tables = 0
        for a, b, c, d in _all_small_tables(12):
            n_tables += 1
            exact = fisher_two_sided_exact(a, b, c, d)
            got = fisher_exact_two_sided(a, b, c, d)
            if abs(Fraction(got) - exact) > Fraction(1, 10**12) * max(exact, Fraction(1, 10**300)):
                failures.append(f"Fisher {(a, b, c, d)}: {got} vs {float(exact)}")
                break
        brute = sum(1 for a, b, c, d in itertools.product(range(13), repeat=4)
                    if max(a + b, c + d, a + c, b + d) <= 12)
        assert n_tables == brute
    check_all(failures)


@pytest.mark.acceptance(6, "longevity ordering on the admissions world")
def test_longevity_ordering():
    failures = []
    with Budget(600.0):
        policies = {"fair": admissions.D_FAIR, "mask": admissions.D_MASK, "exploit": admissions.EXPLOIT_ONLY_11}
        s = longevity_sweep([admissions.world()], policies, replications=50, seed=0,
                            batch_size=500, cap=200_000).summary
    caught = {p: s[p]["n_caught_mean"] for p in policies}
    unfair = {p: s[p]["total_unfairness_mean"] for p in policies}
    if not caught["exploit"] < caught["mask"] < caught["fair"]:
        failures.append(f"n_caught means not ordered exploit < mask < fair: {caught}")
    if not s["mask"]["n_reject_ate_mean"] >= 0.5 * s["fair"]["n_reject_ate_mean"]:
        failures.append("mask H_ATE rejection comes before half the fair policy's")
    if not (unfair["mask"] > unfair["exploit"] and unfair["mask"] > unfair["fair"]):
        failures.append(f"mask is not the most unfair: {unfair}")
    check_all(failures)


@pytest.mark.acceptance(7, "normalized performance shape over eps")
def test_heatmap_shape():
    eps_small = 0.05
    grid = [0.0, 0.05, 0.1, 0.2, 0.5, 1.0]
    failures = []
    with Budget(300.0):
        gaps = {}
        for k in (2, 10):
            sweep = performance_sweep(k, 0.25, 1000, grid, seed=0)
            mask, fair = sweep.mean("mask", eps_small), sweep.mean("fair", eps_small)
            if not mask > fair:
                failures.append(f"k={k}: mask {mask:.4f} not above fair {fair:.4f} at eps {eps_small}")
            gaps[k] = mask - fair
            curve = [sweep.mean("mask+fair", e) for e in grid]
            if any(b < a - 1e-9 for a, b in zip(curve, curve[1:])):
                failures.append(f"k={k}: mask+fair curve not monotone: {curve}")
    if not gaps[10] > gaps[2]:
        failures.append(f"mask-fair gap does not widen from k=2 ({gaps[2]:.4f}) to k=10 ({gaps[10]:.4f})")
    check_all(failures)
