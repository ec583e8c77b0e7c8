"""World models, policies and the quantities derived from them.

A world is a k x 2 table: row ``x`` is a stratum of the observed covariates,
column ``p`` is the protected group.  ``pi[x, p]`` is the joint probability of
the cell and ``gamma[x, p]`` the expected reward ``E[Y | x, p]``.  A policy is
a matching k x 2 table of participation rates ``alpha[x, p] = Pr(D=1 | x, p)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadRho,
    DimensionMismatch,
    EmptyStratum,
    InvalidPolicy,
    NegativeProbability,
    NotNormalized,
    RewardOutOfRange,
)

NORMALIZATION_TOL = 1e-12
# Solver output may sit a hair outside [0, 1]; anything within this is clipped.
POLICY_CLIP_TOL = 1e-9


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatch(f"{name} must be a k x 2 matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WorldModel:
    """Joint cell probabilities, expected rewards and a participation budget.

    Construction validates every invariant.  A ``pi`` whose total is within
    1e-12 of one is renormalized exactly; anything further off is rejected.
    """

    k: int
    pi: np.ndarray
    gamma: np.ndarray
    rho: float

    def __post_init__(self):
        pi = _frozen(self.pi, "pi")
        gamma = _frozen(self.gamma, "gamma")
        total = pi.sum()
        if pi.min(initial=0.0) >= 0 and 0 < abs(total - 1.0) <= NORMALIZATION_TOL:
            pi = pi / total
            pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho", float(self.rho))
        validate_world(self)

    def __eq__(self, other):
        if not isinstance(other, WorldModel):
            return NotImplemented
        return (
            self.k == other.k
            and self.rho == other.rho
            and np.array_equal(self.pi, other.pi)
            and np.array_equal(self.gamma, other.gamma)
        )

    def __hash__(self):
        return hash((self.k, self.rho, self.pi.tobytes(), self.gamma.tobytes()))

    def replace(self, **changes) -> "WorldModel":
        fields = {"k": self.k, "pi": self.pi, "gamma": self.gamma, "rho": self.rho}
        fields.update(changes)
        return WorldModel(**fields)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "pi": self.pi.tolist(),
            "gamma": self.gamma.tolist(),
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldModel":
        missing = {"k", "pi", "gamma", "rho"} - set(data)
        if missing:
            raise KeyError(f"world JSON is missing fields: {sorted(missing)}")
        return cls(k=int(data["k"]), pi=data["pi"], gamma=data["gamma"], rho=data["rho"])


def validate_world(model: WorldModel) -> None:
    """Raise the matching ``WorldError`` if ``model`` breaks an invariant."""
    k = model.k
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DimensionMismatch(f"k must be a positive integer, got {k!r}")
    for name in ("pi", "gamma"):
        shape = getattr(model, name).shape
        if shape != (k, 2):
            raise DimensionMismatch(f"{name} has shape {shape}, expected ({k}, 2)")
    pi, gamma = model.pi, model.gamma
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(gamma))):
        raise NotNormalized("pi and gamma must be finite")
    bad = np.argwhere(pi < 0)
    if bad.size:
        x, p = bad[0]
        raise NegativeProbability(f"pi[{x}][{p}] = {pi[x, p]} is negative")
    total = pi.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalized(f"pi sums to {total!r}, expected 1")
    bad = np.argwhere((gamma < 0) | (gamma > 1))
    if bad.size:
        x, p = bad[0]
        raise RewardOutOfRange(f"gamma[{x}][{p}] = {gamma[x, p]} is outside [0, 1]")
    if not (0 < model.rho <= 1):
        raise BadRho(f"rho = {model.rho} is outside (0, 1]")
    empty = np.flatnonzero(pi.sum(axis=1) == 0)
    if empty.size:
        raise EmptyStratum(f"stratum x={empty[0]} has zero probability")


@dataclass(frozen=True, eq=False)
class Policy:
    """Participation rates ``alpha[x, p]`` in [0, 1]."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = _frozen(self.alpha, "alpha")
        if not np.all(np.isfinite(alpha)):
            raise InvalidPolicy("alpha must be finite")
        bad = np.argwhere((alpha < -POLICY_CLIP_TOL) | (alpha > 1 + POLICY_CLIP_TOL))
        if bad.size:
            x, p = bad[0]
            raise InvalidPolicy(f"alpha[{x}][{p}] = {alpha[x, p]} is outside [0, 1]")
        if alpha.min() < 0 or alpha.max() > 1:
            alpha = np.clip(alpha, 0.0, 1.0)
            alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash(self.alpha.tobytes())

    @classmethod
    def constant(cls, k: int, rate: float) -> "Policy":
        return cls(np.full((k, 2), float(rate)))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist()}


@dataclass(frozen=True)
class PolicyReport:
    """Summary of a policy evaluated in a world.

    ``fair`` and ``masked`` flag parity within every stratum and a zero
    average effect, both at ``FEASIBILITY_TOL``.  ``status`` carries the LP
    status for solved policies; when it is not ``"optimal"`` the numeric
    fields are NaN.
    """

    objective: float
    ate: float
    participation: float
    cate_gaps: tuple[float, ...]
    max_abs_cate: float
    fair: bool
    masked: bool
    status: str = "optimal"
    family: str | None = None
    eps: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "eps": self.eps,
            "status": self.status,
            "objective": self.objective,
            "ate": self.ate,
            "participation": self.participation,
            "cate_gaps": list(self.cate_gaps),
            "max_abs_cate": self.max_abs_cate,
            "fair": self.fair,
            "masked": self.masked,
        }
        out.update(self.extra)
        return out


FEASIBILITY_TOL = 1e-9


def _check_dims(model: WorldModel, policy: Policy) -> None:
    if policy.alpha.shape != model.pi.shape:
        raise DimensionMismatch(
            f"policy has shape {policy.alpha.shape}, world has {model.pi.shape}"
        )


def marginal_x(model: WorldModel) -> np.ndarray:
    """Pr(X=x) for every stratum."""
    return model.pi.sum(axis=1)


def marginal_p(model: WorldModel) -> np.ndarray:
    return model.pi.sum(axis=0)


def propensity(model: WorldModel) -> np.ndarray:
    """Pr(p | x) as a k x 2 matrix."""
    px = marginal_x(model)
    if np.any(px == 0):
        raise EmptyStratum(f"stratum x={int(np.flatnonzero(px == 0)[0])} has zero probability")
    return model.pi / px[:, None]


def context_weighted_rewards(model: WorldModel) -> tuple[np.ndarray, np.ndarray]:
    """Return ``w[x, p] = gamma[x, p] * Pr(p|x)`` and ``w_avg[x] = E[Y | x]``."""
    w = model.gamma * propensity(model)
    return w, w.sum(axis=1)


def welfare(model: WorldModel, policy: Policy) -> float:
    _check_dims(model, policy)
    return float(np.sum(model.gamma * policy.alpha * model.pi))


def participation_rate(model: WorldModel, policy: Policy) -> float:
    _check_dims(model, policy)
    return float(np.sum(policy.alpha * model.pi))


def cate_gaps(policy: Policy) -> np.ndarray:
    return policy.alpha[:, 1] - policy.alpha[:, 0]


def ate_of_policy(model: WorldModel, policy: Policy) -> float:
    """Backdoor-adjusted effect of P on D: sum_x Pr(x) (alpha[x,1] - alpha[x,0])."""
    _check_dims(model, policy)
    px = marginal_x(model)
    if np.any(px == 0):
        raise EmptyStratum("world has an empty stratum")
    return float(px @ cate_gaps(policy))


def evaluate_policy(
    model: WorldModel,
    policy: Policy,
    *,
    family: str | None = None,
    eps: float | None = None,
    status: str = "optimal",
) -> PolicyReport:
    gaps = cate_gaps(policy)
    ate = ate_of_policy(model, policy)
    max_abs = float(np.max(np.abs(gaps)))
    return PolicyReport(
        objective=welfare(model, policy),
        ate=ate,
        participation=participation_rate(model, policy),
        cate_gaps=tuple(float(g) for g in gaps),
        max_abs_cate=max_abs,
        fair=max_abs <= FEASIBILITY_TOL,
        masked=abs(ate) <= FEASIBILITY_TOL,
        status=status,
        family=family,
        eps=eps,
    )


def failed_report(k: int, status: str, family: str | None, eps: float | None) -> PolicyReport:
    nan = float("nan")
    return PolicyReport(
        objective=nan,
        ate=nan,
        participation=nan,
        cate_gaps=(nan,) * k,
        max_abs_cate=nan,
        fair=False,
        masked=False,
        status=status,
        family=family,
        eps=eps,
    )


def _simplex_point(rng: np.random.Generator, size: int) -> np.ndarray:
    # Normalized i.i.d. exponentials are exactly uniform on the simplex.
    e = rng.standard_exponential(size)
    return e / e.sum()


def sample_world(k: int, rho: float, seed) -> WorldModel:
    """Draw pi uniformly from the 2k-simplex and gamma i.i.d. uniform on [0, 1].

    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (0 < rho <= 1):
        raise BadRho(f"rho = {rho} is outside (0, 1]")
    rng = np.random.default_rng(seed)
    pi = _simplex_point(rng, 2 * k).reshape(k, 2)
    gamma = rng.random((k, 2))
    return WorldModel(k=k, pi=pi, gamma=gamma, rho=rho)


def load_world(path) -> WorldModel:
    with open(path, encoding="utf-8") as fh:
        return WorldModel.from_dict(json.load(fh))


def save_world(model: WorldModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
