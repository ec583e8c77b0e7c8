"""Special functions and the two fairness detection tests.

``z_test_ate`` tests a zero average effect of P on D.  ``cate_test`` tests
parity inside every stratum: one two-sided Fisher exact test per stratum,
combined with Fisher's method against a chi-square reference.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, NoUsableStrata

ALPHA_LEVEL = 0.05
# Hypergeometric masses within this relative distance of the observed table's
# mass count as ties; the float recurrence drifts by up to ~1e-12 on large tables.
FISHER_TIE_RTOL = 1e-7
_EPS = 1e-16
_MAX_ITER = 10_000


def log_gamma(x: float) -> float:
    if not x > 0:
        raise DomainError(f"log_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def _lower_series(a: float, x: float, log_pref: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(log_pref)


def _upper_fraction(a: float, x: float, log_pref: float) -> float:
    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(log_pref)


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if not a > 0 or x < 0:
        raise DomainError(f"Q(a, x) needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    log_pref = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x, log_pref))
    return min(1.0, _upper_fraction(a, x, log_pref))


def chi_square_sf(s: float, df: int) -> float:
    """P(chi2_df > s)."""
    if s < 0 or math.isnan(s):
        raise DomainError(f"chi-square statistic must be >= 0, got {s}")
    if df < 1:
        raise DomainError(f"degrees of freedom must be positive, got {df}")
    return regularized_upper_gamma(df / 2.0, s / 2.0)


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class StratifiedCounts:
    """Units ``n[x, p]`` and positive decisions ``d[x, p]`` per cell."""

    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        n = np.array(self.n, dtype=np.int64)
        d = np.array(self.d, dtype=np.int64)
        if n.ndim != 2 or n.shape[1] != 2 or n.shape != d.shape:
            raise ValueError(f"counts must be matching k x 2 arrays, got {n.shape} and {d.shape}")
        if np.any(n < 0) or np.any(d < 0) or np.any(d > n):
            raise ValueError("counts must satisfy 0 <= d <= n")
        n.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)

    @property
    def k(self) -> int:
        return self.n.shape[0]

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def usable(self) -> np.ndarray:
        """Strata with at least one unit in each protected group."""
        return np.flatnonzero((self.n[:, 0] > 0) & (self.n[:, 1] > 0))

    def __add__(self, other: "StratifiedCounts") -> "StratifiedCounts":
        return StratifiedCounts(self.n + other.n, self.d + other.d)

    @classmethod
    def zeros(cls, k: int) -> "StratifiedCounts":
        return cls(np.zeros((k, 2), dtype=np.int64), np.zeros((k, 2), dtype=np.int64))

    @classmethod
    def from_arrays(cls, x, p, d, k: int | None = None) -> "StratifiedCounts":
        x = np.asarray(x, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        d = np.asarray(d, dtype=np.int64)
        if k is None:
            k = int(x.max()) + 1 if x.size else 1
        cell = 2 * x + p
        n = np.bincount(cell, minlength=2 * k).reshape(k, 2)
        dd = np.bincount(cell, weights=d, minlength=2 * k).astype(np.int64).reshape(k, 2)
        return cls(n, dd)


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    p_value: float
    df: int
    reject: bool
    strata_used: int
    alpha: float = ALPHA_LEVEL
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def ate_estimate(counts: StratifiedCounts, *, weight_variance: bool = True) -> tuple[float, float, int]:
    """Return (ATE-hat, its variance estimate, number of strata used).

    Strata lacking either group are dropped.  ``p_x`` is the share of all
    units in stratum x.  With ``weight_variance`` the sampling variance of the
    stratum shares is added to the within-stratum Bernoulli variance, which
    keeps the test valid when the per-stratum effects differ but average to
    zero.
    """
    used = counts.usable()
    if used.size == 0:
        raise NoUsableStrata("no stratum has units in both protected groups")
    n = counts.n[used].astype(float)
    rate = counts.d[used] / n
    share = counts.n[used].sum(axis=1) / counts.total
    tau = rate[:, 1] - rate[:, 0]
    ate = float(share @ tau)
    within = rate * (1.0 - rate) / n
    var = float(np.sum(share**2 * within.sum(axis=1)))
    if weight_variance:
        var += float(share @ tau**2 - ate**2) / counts.total
    return ate, max(var, 0.0), int(used.size)


def z_test_ate(counts: StratifiedCounts, alpha: float = ALPHA_LEVEL, *, weight_variance: bool = True) -> TestReport:
    ate, var, used = ate_estimate(counts, weight_variance=weight_variance)
    if var > 0:
        z = ate / math.sqrt(var)
        p = min(1.0, 2.0 * normal_sf(abs(z)))
        degenerate = False
    elif ate == 0:
        z, p, degenerate = 0.0, 1.0, True
    else:
        z, p, degenerate = math.copysign(math.inf, ate), 0.0, True
    return TestReport("H_ATE", z, p, 0, p < alpha, used, alpha, degenerate)


def _hypergeom_log_pmf(row1: int, row2: int, col1: int) -> tuple[int, np.ndarray]:
    """Support start and unnormalized log pmf of the top-left cell given margins."""
    lo = max(0, col1 - row2)
    hi = min(row1, col1)
    a = np.arange(lo, hi + 1, dtype=float)
    # log ratio P(a+1)/P(a) = log((row1-a)(col1-a)) - log((a+1)(row2-col1+a+1))
    step = np.log((row1 - a[:-1]) * (col1 - a[:-1])) - np.log((a[:-1] + 1) * (row2 - col1 + a[:-1] + 1))
    logp = np.concatenate([[0.0], np.cumsum(step)])
    # Re-anchor at the mode to keep the largest masses accurate.
    return lo, logp - logp.max()


def fisher_exact_two_sided(a: int, b: int, c: int, d: int) -> float:
    """Two-sided Fisher exact p-value for the table [[a, b], [c, d]].

    Sums the probability of every table with the same margins that is no
    more likely than the observed one.
    """
    for v in (a, b, c, d):
        if v < 0 or int(v) != v:
            raise ValueError("table entries must be nonnegative integers")
    a, b, c, d = int(a), int(b), int(c), int(d)
    row1, row2, col1 = a + b, c + d, a + c
    if min(row1, row2, col1, b + d) == 0:
        return 1.0
    lo, logp = _hypergeom_log_pmf(row1, row2, col1)
    extreme = logp[logp <= logp[a - lo] + math.log1p(FISHER_TIE_RTOL)]
    top = extreme.max()
    log_tail = top + math.log(np.exp(extreme - top).sum())
    p = math.exp(log_tail - math.log(np.exp(logp).sum()))
    return float(min(1.0, p))


def cate_test(counts: StratifiedCounts, alpha: float = ALPHA_LEVEL) -> TestReport:
    used = counts.usable()
    if used.size == 0:
        raise NoUsableStrata("no stratum has units in both protected groups")
    s = 0.0
    for x in used:
        n1, n0 = counts.n[x, 1], counts.n[x, 0]
        d1, d0 = counts.d[x, 1], counts.d[x, 0]
        p = fisher_exact_two_sided(d1, n1 - d1, d0, n0 - d0)
        if p == 0.0:
            s = math.inf
            break
        s -= 2.0 * math.log(p)
    df = 2 * int(used.size)
    p_value = 0.0 if math.isinf(s) else chi_square_sf(max(s, 0.0), df)
    return TestReport("H_CATE", s, p_value, df, p_value < alpha, int(used.size), alpha)


VERDICT_FAIR = "FAIR-CONSISTENT"
VERDICT_MASKED = "MASKED-SUSPECT"
VERDICT_UNFAIR = "UNFAIR"


@dataclass(frozen=True)
class AuditResult:
    ate: TestReport
    cate: TestReport
    verdict: str

    def to_dict(self) -> dict:
        return {"ate": self.ate.to_dict(), "cate": self.cate.to_dict(), "verdict": self.verdict}


def audit_counts(counts: StratifiedCounts, alpha: float = ALPHA_LEVEL) -> AuditResult:
    """Run both tests and classify the decisions.

    UNFAIR when H_ATE is rejected; MASKED-SUSPECT when H_ATE stands but
    H_CATE is rejected; FAIR-CONSISTENT when neither is rejected.
    """
    ate = z_test_ate(counts, alpha)
    cate = cate_test(counts, alpha)
    if ate.reject:
        verdict = VERDICT_UNFAIR
    elif cate.reject:
        verdict = VERDICT_MASKED
    else:
        verdict = VERDICT_FAIR
    return AuditResult(ate, cate, verdict)
