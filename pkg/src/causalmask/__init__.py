"""Fair, masked and exploitative decision policies over stratified worlds."""

from .policies import (
    normalized_performance,
    performance_anchors,
    solve_exploit,
    solve_fair,
    solve_family,
    solve_mask,
    solve_mask_with_fair,
)
from .stats import audit_counts, cate_test, fisher_exact_two_sided, z_test_ate
from .world import Policy, PolicyReport, WorldModel, evaluate_policy, load_world, sample_world, save_world

__version__ = "0.1.0"

__all__ = [
    "Policy",
    "PolicyReport",
    "WorldModel",
    "audit_counts",
    "cate_test",
    "evaluate_policy",
    "fisher_exact_two_sided",
    "load_world",
    "normalized_performance",
    "performance_anchors",
    "sample_world",
    "save_world",
    "solve_exploit",
    "solve_fair",
    "solve_family",
    "solve_mask",
    "solve_mask_with_fair",
    "z_test_ate",
]
