"""Policy synthesis: exploit, eps-fair, eps-mask and mask-with-fair-band.

Every problem maximizes welfare ``sum gamma * alpha * pi`` over the 2k rates
``alpha[x, p]`` in [0, 1] with participation fixed at exactly ``rho``.  The
variable for cell (x, p) sits at index ``2 * x + p``.

Because every reward is nonnegative, an optimum of the ``>= rho`` variant can
always be found at ``== rho``; the equality form is used throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateNormalization
from .simplex import OPTIMAL, BoundedLinearProgram, LpSolution, solve_lp
from .world import (
    Policy,
    PolicyReport,
    WorldModel,
    context_weighted_rewards,
    evaluate_policy,
    failed_report,
    marginal_x,
)

FAMILIES = ("exploit", "fair", "mask", "mask+fair")
NORMALIZATION_GAP_TOL = 1e-12


def _base_program(model: WorldModel) -> BoundedLinearProgram:
    n = 2 * model.k
    prog = BoundedLinearProgram(
        objective=(model.gamma * model.pi).ravel(),
        lower=np.zeros(n),
        upper=np.ones(n),
    )
    prog.add(model.pi.ravel(), "==", model.rho)
    return prog


def _band_rows(prog: BoundedLinearProgram, k: int, eps: float) -> None:
    for x in range(k):
        row = np.zeros(2 * k)
        row[2 * x], row[2 * x + 1] = -1.0, 1.0
        if eps == 0:
            prog.add(row, "==", 0.0)
        else:
            prog.add(row, "<=", eps)
            prog.add(row, ">=", -eps)


def _ate_rows(prog: BoundedLinearProgram, model: WorldModel, eps: float) -> None:
    row = np.zeros(2 * model.k)
    px = marginal_x(model)
    row[0::2], row[1::2] = -px, px
    if eps == 0:
        prog.add(row, "==", 0.0)
    else:
        prog.add(row, "<=", eps)
        prog.add(row, ">=", -eps)


def exploit_program(model: WorldModel) -> BoundedLinearProgram:
    return _base_program(model)


def fair_program(model: WorldModel, eps_fair: float) -> BoundedLinearProgram:
    prog = _base_program(model)
    _band_rows(prog, model.k, eps_fair)
    return prog


def mask_program(model: WorldModel, eps_mask: float) -> BoundedLinearProgram:
    prog = _base_program(model)
    _ate_rows(prog, model, eps_mask)
    return prog


def mask_with_fair_program(model: WorldModel, eps_fair: float) -> BoundedLinearProgram:
    prog = _base_program(model)
    _ate_rows(prog, model, 0.0)
    _band_rows(prog, model.k, eps_fair)
    return prog


def _from_solution(model: WorldModel, sol: LpSolution, family: str, eps) -> tuple[Policy | None, PolicyReport]:
    if sol.status != OPTIMAL:
        return None, failed_report(model.k, sol.status, family, eps)
    policy = Policy(sol.values.reshape(model.k, 2))
    return policy, evaluate_policy(model, policy, family=family, eps=eps)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps >= 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return eps


def greedy_fill(costs: np.ndarray, order: np.ndarray, budget: float) -> np.ndarray:
    """Fill items in ``order`` at rate 1 until ``budget`` of cost is spent.

    The marginal item gets a fractional rate.  Items of zero cost reached
    before the budget runs out are set to 1.
    """
    rates = np.zeros(costs.size)
    remaining = budget
    for i in order:
        if remaining <= 0:
            break
        c = costs[i]
        if c <= remaining:
            rates[i] = 1.0
            remaining -= c
        else:
            rates[i] = remaining / c
            remaining = 0.0
    return rates


def _descending(values: np.ndarray) -> np.ndarray:
    # Stable sort on the negated key keeps the lowest index first among ties.
    return np.argsort(-values, kind="stable")


def solve_exploit(model: WorldModel) -> tuple[Policy, PolicyReport]:
    """Greedy fill of cells by reward, highest first."""
    pi = model.pi.ravel()
    rates = greedy_fill(pi, _descending(model.gamma.ravel()), model.rho)
    policy = Policy(rates.reshape(model.k, 2))
    return policy, evaluate_policy(model, policy, family="exploit", eps=None)


def water_fill_fair(model: WorldModel) -> Policy:
    """Exact-parity optimum: fill whole strata in order of ``E[Y | x]``."""
    _, w_avg = context_weighted_rewards(model)
    rates = greedy_fill(marginal_x(model), _descending(w_avg), model.rho)
    return Policy(np.repeat(rates[:, None], 2, axis=1))


def solve_fair(model: WorldModel, eps_fair: float = 0.0) -> tuple[Policy | None, PolicyReport]:
    eps = _check_eps(eps_fair)
    if eps == 0:
        policy = water_fill_fair(model)
        return policy, evaluate_policy(model, policy, family="fair", eps=0.0)
    return _from_solution(model, solve_lp(fair_program(model, eps)), "fair", eps)


def solve_mask(model: WorldModel, eps_mask: float = 0.0) -> tuple[Policy | None, PolicyReport]:
    eps = _check_eps(eps_mask)
    return _from_solution(model, solve_lp(mask_program(model, eps)), "mask", eps)


def solve_mask_with_fair(model: WorldModel, eps_fair: float) -> tuple[Policy | None, PolicyReport]:
    eps = _check_eps(eps_fair)
    return _from_solution(model, solve_lp(mask_with_fair_program(model, eps)), "mask+fair", eps)


def solve_family(model: WorldModel, family: str, eps: float = 0.0) -> tuple[Policy | None, PolicyReport]:
    if family == "exploit":
        return solve_exploit(model)
    if family == "fair":
        return solve_fair(model, eps)
    if family == "mask":
        return solve_mask(model, eps)
    if family == "mask+fair":
        return solve_mask_with_fair(model, eps)
    raise ValueError(f"unknown policy family {family!r}; expected one of {FAMILIES}")


def performance_anchors(model: WorldModel) -> tuple[float, float]:
    """Welfare of fair(0) and of exploit, the 0 and 1 of normalized performance."""
    return solve_fair(model, 0.0)[1].objective, solve_exploit(model)[1].objective


def normalized_performance(model: WorldModel, w: float, anchors: tuple[float, float] | None = None) -> float:
    low, high = anchors if anchors is not None else performance_anchors(model)
    if high - low < NORMALIZATION_GAP_TOL:
        raise DegenerateNormalization(
            f"exploit welfare {high!r} does not exceed fair welfare {low!r}"
        )
    return (w - low) / (high - low)
