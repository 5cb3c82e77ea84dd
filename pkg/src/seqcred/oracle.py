"""Oracle and surrogate-oracle rates, signal-class diagnostics, minimax rates.

Everything here is exact arithmetic on finite-support signals: tail sums run
over the stored coefficients (zero beyond the truncation level by
convention), and every argmin scan is exhaustive with ties broken to the
smallest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .model import ModelConfig, Signal, as_generator

__all__ = [
    "OracleResult",
    "SurrogateOracleResult",
    "EbrResult",
    "SigmaConstants",
    "SigmaConditionReport",
    "Ellipsoid",
    "Hyperrectangle",
    "CoversReport",
    "oracle",
    "surrogate_oracle",
    "ebr_check",
    "pt_check",
    "pt_to_ebr_tau",
    "sigma_constants",
    "verify_sigma_conditions",
    "minimax_rate",
    "covers_check",
    "scale_class",
]

#: local radius vs. global minimax radius: proven comparison constants
ELLIPSOID_COVER_CONST = (2.0 * math.pi) ** 2
HYPERRECT_COVER_CONST = 2.5


def _theta_sq_tail(signal: Signal, n: int) -> np.ndarray:
    """tail[I] = sum_{i>I} theta_i^2 for I = 0..n, exact over the support."""
    th2 = signal.padded(n) ** 2
    tail = np.zeros(n + 1)
    tail[:-1] = th2[::-1].cumsum()[::-1]
    return tail


@dataclass(frozen=True)
class OracleResult:
    i_star: int
    rate_sq: float
    variance_term: float
    bias_term: float

    @property
    def rate(self) -> float:
        return math.sqrt(self.rate_sq)


def oracle(signal: Signal, model: ModelConfig) -> OracleResult:
    """Minimize r^2(I) = Sigma(I) + sum_{i>I} theta_i^2 over I = 1..N.

    Returns the smallest minimizing index.  The rate never drops below
    eps^2 because the variance term at I = 1 is already sigma_1^2.
    """
    n = model.n_trunc
    tail = _theta_sq_tail(signal, n)
    var = model._sigma_sq_cumsum  # var[j] = Sigma(j)
    r2 = var[1:] + tail[1:]  # index 0 <-> I = 1
    i0 = int(np.argmin(r2))
    return OracleResult(
        i_star=i0 + 1,
        rate_sq=float(r2[i0]),
        variance_term=float(var[i0 + 1]),
        bias_term=float(tail[i0 + 1]),
    )


@dataclass(frozen=True)
class SurrogateOracleResult:
    i_bar: int
    surr_rate_sq: float
    sigma_sum: float


def surrogate_oracle(signal: Signal, model: ModelConfig) -> SurrogateOracleResult:
    """Minimize R^2(I) = I*eps^2 + sum_{i>I} theta_i^2 / kappa_i^2 over I = 1..N.

    This is the oracle of the noise-rescaled direct problem; in the direct
    case p = 0 it coincides with the oracle index.
    """
    n = model.n_trunc
    i = np.arange(1, n + 1, dtype=float)
    kappa_sq = i ** (2.0 * model.p)
    th2_scaled = signal.padded(n) ** 2 / kappa_sq
    tail = np.zeros(n + 1)
    tail[:-1] = th2_scaled[::-1].cumsum()[::-1]
    r2 = model.epsilon**2 * i + tail[1:]
    i0 = int(np.argmin(r2))
    return SurrogateOracleResult(
        i_bar=i0 + 1,
        surr_rate_sq=float(r2[i0]),
        sigma_sum=model.variance_sum(i0 + 1),
    )


@dataclass(frozen=True)
class EbrResult:
    member: bool
    ratio: float
    i_bar: int
    bias_tail: float
    variance_sum: float
    tau: float


def ebr_check(signal: Signal, model: ModelConfig, tau: float) -> EbrResult:
    """Excess-bias restriction: bias beyond the surrogate index vs. its variance.

    ratio = (sum_{i > I_bar} theta_i^2) / Sigma(I_bar); membership means
    ratio <= tau.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    surr = surrogate_oracle(signal, model)
    bias = float(_theta_sq_tail(signal, model.n_trunc)[surr.i_bar])
    var = surr.sigma_sum
    ratio = bias / var
    return EbrResult(
        member=bool(ratio <= tau),
        ratio=ratio,
        i_bar=surr.i_bar,
        bias_tail=bias,
        variance_sum=var,
        tau=float(tau),
    )


def pt_check(signal: Signal, L0: float, N0: int, rho0: float) -> bool:
    """Polished-tail test: the tail from N is bounded by L0 times the
    energy in the window [N, floor(rho0*N)], for every N0 <= N <= len(signal)."""
    if not L0 >= 1:
        raise ValueError(f"L0 must be >= 1, got {L0}")
    if not (isinstance(N0, (int, np.integer)) and N0 >= 1):
        raise ValueError(f"N0 must be a positive integer, got {N0}")
    if not rho0 >= 2:
        raise ValueError(f"rho0 must be >= 2, got {rho0}")
    th2 = np.asarray(signal.coeffs) ** 2
    n = len(th2)
    s = np.concatenate(([0.0], np.cumsum(th2)))  # s[j] = sum_{i<=j}
    for start in range(int(N0), n + 1):
        hi = min(int(math.floor(rho0 * start)), n)
        tail = s[n] - s[start - 1]
        window = s[hi] - s[start - 1]
        if tail > L0 * window:
            return False
    return True


def pt_to_ebr_tau(L0: float, N0: int, rho0: float, p: float) -> float:
    """The excess-bias level that the polished-tail class is contained in:
    tau = L0 * K1 * K2(rho0 * N0) with the mildly-ill-posed constants."""
    consts = sigma_constants(p, rho=float(rho0) * float(N0), gamma=1.0, tau0=1.0)
    return float(L0) * consts.k1 * consts.k2


@dataclass(frozen=True)
class SigmaConstants:
    """Constants witnessing the noise-sequence conditions for sigma_i = eps*i^p."""

    p: float
    rho: float
    gamma: float
    tau0: float
    k1: float
    k2: float
    k3: float
    k4: float
    tau: float
    k5: float


def sigma_constants(p: float, rho: float = 2.0, gamma: float = 0.5, tau0: float = 2.0) -> SigmaConstants:
    if p < 0:
        raise ValueError(f"p must be nonnegative, got {p}")
    if rho < 1 or tau0 < 1:
        raise ValueError(f"rho and tau0 must be >= 1, got rho={rho}, tau0={tau0}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k3 = (
        4.0
        * (8.0 * p + 4.0) ** (2.0 * p)
        / ((math.e * gamma) ** (2.0 * p + 1.0) * (math.exp(gamma / 2.0) - 1.0))
    )
    return SigmaConstants(
        p=float(p),
        rho=float(rho),
        gamma=float(gamma),
        tau0=float(tau0),
        k1=2.0 * p + 1.0,
        k2=(rho + 1.0) ** (2.0 * p + 1.0),
        k3=k3,
        k4=0.5,
        tau=2.0 ** (1.0 + 1.0 / (2.0 * p + 1.0)),
        k5=(2.0 * tau0) ** (-2.0 * p),
    )


@dataclass(frozen=True)
class SigmaConditionReport:
    passed: bool
    constants: SigmaConstants
    n_max: int
    violations: tuple = ()
    margins: Mapping[str, float] = field(default_factory=dict)

    def __str__(self) -> str:  # pragma: no cover - convenience only
        status = "pass" if self.passed else f"FAIL ({len(self.violations)} violations)"
        return f"sigma-conditions up to n={self.n_max}: {status}"


# relative slack for comparisons that are exact equalities in the direct
# case (e.g. n*sigma_n^2 == Sigma(n) at p=0), where cumsum rounding can
# flip the comparison by a few ulps
_REL_TOL = 1e-9


def verify_sigma_conditions(
    model: ModelConfig,
    n_max: int,
    rho: float = 2.0,
    gamma: float = 0.5,
    tau0: float = 2.0,
) -> SigmaConditionReport:
    """Numerically check the five noise-sequence inequalities up to n_max.

    The sigma sequence is taken from the model's (epsilon, p) and extended
    past the truncation level as needed (condition (ii) looks at rho*n and
    condition (iii) sums an infinite series, truncated with an analytic
    remainder bound added before comparison).  Conditions (iv) and (v)
    quantify over real arguments; both sides are piecewise monotone between
    floor changes, so evaluating at every region left endpoint (integers and
    multiples of tau resp. tau0) covers all real arguments.

    A violation indicates an implementation bug, since the constants are
    proven for this noise shape.
    """
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    c = sigma_constants(model.p, rho=rho, gamma=gamma, tau0=tau0)
    eps2 = model.epsilon**2
    top = max(int(math.floor(rho * n_max)), n_max)
    i = np.arange(1, top + 1, dtype=float)
    sig2 = eps2 * i ** (2.0 * model.p)
    s = np.concatenate(([0.0], np.cumsum(sig2)))  # s[j] = Sigma(j)

    violations: list[tuple[str, float]] = []
    margins: dict[str, float] = {}

    def check(name: str, lhs: np.ndarray, rhs: np.ndarray, args: np.ndarray) -> None:
        lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        bad = lhs > rhs * (1.0 + _REL_TOL)
        for a in np.atleast_1d(args)[bad]:
            violations.append((name, float(a)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
        margins[name] = float(np.max(ratio))

    ns = np.arange(1, n_max + 1)

    # (i) n * sigma_n^2 <= K1 * Sigma(n)
    check("i", ns * sig2[ns - 1], c.k1 * s[ns], ns)

    # (ii) Sigma(rho*n) <= K2(rho) * Sigma(n)
    check("ii", s[np.floor(rho * ns).astype(int)], c.k2 * s[ns], ns)

    # (iii) sum_n exp(-gamma*n) * Sigma(n) <= K3(gamma) * sigma_1^2
    check("iii", _geometric_series_bound(model, gamma), c.k3 * eps2, np.array([0]))

    # (iv) Sigma(floor(m/tau)) <= (1 - K4) * Sigma(m), all real m >= tau
    m_pts = _region_points(c.tau, n_max)
    lhs_iv = s[np.floor(m_pts / c.tau).astype(int)]
    rhs_iv = (1.0 - c.k4) * s[np.floor(m_pts).astype(int)]
    check("iv", lhs_iv, rhs_iv, m_pts)

    # (v) l * sigma_{floor(l/tau0)}^2 >= K5(tau0) * sum_{floor(l/tau0) < i <= l}
    l_pts = _region_points(tau0, n_max)
    lo = np.floor(l_pts / tau0).astype(int)
    hi = np.floor(l_pts).astype(int)
    check("v", c.k5 * (s[hi] - s[lo]), l_pts * sig2[lo - 1], l_pts)

    return SigmaConditionReport(
        passed=not violations,
        constants=c,
        n_max=int(n_max),
        violations=tuple(violations),
        margins=margins,
    )


def _region_points(step: float, n_max: int) -> np.ndarray:
    """Left endpoints of the regions where both floor(x) and floor(x/step)
    are constant: integers and multiples of step, from step up to n_max."""
    ints = np.arange(math.ceil(step), n_max + 1, dtype=float)
    mults = step * np.arange(1, math.floor(n_max / step) + 1, dtype=float)
    pts = np.unique(np.concatenate((ints, mults)))
    return pts[pts >= step]


def _geometric_series_bound(model: ModelConfig, gamma: float) -> float:
    """Upper bound for sum_{n>=1} exp(-gamma*n) * Sigma(n): partial sum plus
    a geometric tail bound valid once the term ratio falls below e^{-gamma/2}."""
    eps2 = model.epsilon**2
    two_p1 = 2.0 * model.p + 1.0
    # term ratio <= e^{-gamma} (1+1/n)^{2p+1} <= e^{-gamma/2} for n >= n_ratio
    n_ratio = max(2, math.ceil(2.0 * two_p1 / gamma))
    total = 0.0
    term = 0.0
    start = 1
    sigma_cum = 0.0
    while True:
        stop = max(2 * start, n_ratio + 1, 1024)
        n = np.arange(start, stop + 1, dtype=float)
        sig2 = eps2 * n ** (2.0 * model.p)
        sigma_run = sigma_cum + np.cumsum(sig2)
        terms = np.exp(-gamma * n) * sigma_run
        total += float(terms.sum())
        sigma_cum = float(sigma_run[-1])
        term = float(terms[-1])
        start = stop + 1
        if stop >= n_ratio and term <= 1e-18 * max(total, eps2):
            break
        if stop > 50_000_000:  # pragma: no cover - safety valve
            raise RuntimeError("series truncation failed to converge")
    q = math.exp(-gamma / 2.0)
    return total + term * q / (1.0 - q)


def _validate_radii(a: np.ndarray) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.ndim != 1 or len(a) == 0:
        raise ValueError("class radii must be a nonempty one-dimensional sequence")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("class radii must be finite and nonnegative")
    if np.any(np.diff(a) > 0):
        raise ValueError("class radii must be nonincreasing")
    return a


@dataclass(frozen=True)
class Ellipsoid:
    """{theta : sum_i (theta_i / a_i)^2 <= 1} with nonincreasing radii a."""

    a: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _validate_radii(self.a))

    kind = "ellipsoid"

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        a = np.zeros(max(len(theta), len(self.a)))
        a[: len(self.a)] = self.a
        th = np.zeros_like(a)
        th[: len(theta)] = theta
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(th == 0.0, 0.0, (th / a) ** 2)  # 0/0 counts as 0
        if np.any(np.isinf(q) | np.isnan(q)):
            return False
        return bool(q.sum() <= 1.0 + 1e-12)


@dataclass(frozen=True)
class Hyperrectangle:
    """{theta : |theta_i| <= a_i for all i} with nonincreasing radii a."""

    a: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _validate_radii(self.a))

    kind = "hyperrect"

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        a = np.zeros(max(len(theta), len(self.a)))
        a[: len(self.a)] = self.a
        th = np.zeros_like(a)
        th[: len(theta)] = theta
        return bool(np.all(np.abs(th) <= a + 1e-15 * a))


def scale_class(name: str, params: Mapping[str, Any], n_trunc: int) -> Ellipsoid | Hyperrectangle:
    """The four standard smoothness scales as explicit classes.

    * ``sobolev-hyperrect``: a_i^2 = Q * i^{-(2*beta+1)}
    * ``sobolev-ellipsoid``: a_i^2 = Q * i^{-2*beta}
    * ``analytic-ellipsoid``: a_i^2 = Q * exp(-c * i^d)
    * ``parametric-hyperrect``: a_i^2 = Q * 1{i <= N0}
    """
    q = float(params.get("Q", 1.0))
    if q <= 0:
        raise ValueError(f"Q must be positive, got {q}")
    i = np.arange(1, n_trunc + 1, dtype=float)
    if name == "sobolev-hyperrect":
        beta = float(params.get("beta", 1.0))
        return Hyperrectangle(np.sqrt(q) * i ** (-(beta + 0.5)))
    if name == "sobolev-ellipsoid":
        beta = float(params.get("beta", 1.0))
        return Ellipsoid(np.sqrt(q) * i ** (-beta))
    if name == "analytic-ellipsoid":
        cc = float(params.get("c", 1.0))
        d = float(params.get("d", 1.0))
        return Ellipsoid(np.sqrt(q * np.exp(-cc * i**d)))
    if name == "parametric-hyperrect":
        n0 = int(params.get("N0", 1))
        a = np.zeros(n_trunc)
        a[:n0] = math.sqrt(q)
        return Hyperrectangle(a)
    raise ValueError(f"unknown scale {name!r}")


def _padded_radii(cls: Ellipsoid | Hyperrectangle, model: ModelConfig) -> np.ndarray:
    if cls.a[0] < model.epsilon:
        raise ValueError(
            f"largest class radius a_1={cls.a[0]:.4g} below the noise level "
            f"eps={model.epsilon:.4g}"
        )
    a = np.zeros(model.n_trunc)
    m = min(model.n_trunc, len(cls.a))
    a[:m] = cls.a[:m]
    return a


def minimax_rate(cls: Ellipsoid | Hyperrectangle, model: ModelConfig) -> float:
    """Projection-style global rate of the class.

    Ellipsoid: inf_I { Sigma(I) + a_{I+1}^2 }; hyperrectangle:
    inf_I { Sigma(I) + sum_{i>I} a_i^2 }.  The scan runs over I = 1..N with
    radii beyond the class length treated as exact zeros.
    """
    a = _padded_radii(cls, model)
    n = model.n_trunc
    var = model._sigma_sq_cumsum[1:]
    if isinstance(cls, Ellipsoid):
        a_next_sq = np.concatenate((a[1:], [0.0])) ** 2
        return float(np.min(var + a_next_sq))
    tail = np.zeros(n)
    tail[:-1] = (a[1:] ** 2)[::-1].cumsum()[::-1]
    return float(np.min(var + tail))


@dataclass(frozen=True)
class CoversReport:
    class_kind: str
    rate_sq: float
    threshold: float
    worst_ratio: float
    worst_sample: str
    n_samples: int
    passed: bool
    lambda_trials: int
    lambda_all_hold: bool
    lambda_worst_margin: float


def _rate_sq_at(theta_sq: np.ndarray, model: ModelConfig) -> float:
    """r^2(theta) by exhaustive scan, for a squared-coefficient vector."""
    tail = np.zeros(model.n_trunc + 1)
    tail[:-1] = theta_sq[::-1].cumsum()[::-1]
    return float(np.min(model._sigma_sq_cumsum[1:] + tail[1:]))


def covers_check(
    cls: Ellipsoid | Hyperrectangle,
    model: ModelConfig,
    n_samples: int = 200,
    seed: int | np.random.SeedSequence | np.random.Generator | None = 0,
    lambda_trials: int = 1000,
    lambda_dim: int = 50,
) -> CoversReport:
    """Check that the local radial rate never beats the global rate by more
    than the proven comparison constant, over boundary-biased samples.

    Also runs the monotone-linear-estimator comparison: for random
    nonincreasing weights lambda in [0,1]^N and random theta, the linear
    risk sum_i [sigma_i^2 lambda_i^2 + (1-lambda_i)^2 theta_i^2] must be at
    least a quarter of r^2(N_lambda, theta) where N_lambda is the last index
    with lambda_i >= 1/2.  Both inequalities are exact, so no tolerance is
    applied.
    """
    rng = as_generator(seed)
    a = _padded_radii(cls, model)
    n = model.n_trunc
    rate_global = minimax_rate(cls, model)
    threshold = ELLIPSOID_COVER_CONST if isinstance(cls, Ellipsoid) else HYPERRECT_COVER_CONST

    samples: list[tuple[str, np.ndarray]] = []  # (tag, theta_sq)
    pos = np.flatnonzero(a > 0)
    if isinstance(cls, Hyperrectangle):
        samples.append(("full-boundary", a**2))
        for _ in range(max(0, n_samples - 1)):
            u = rng.uniform(0.0, 1.0, size=n)
            boundary = rng.random(n) < 0.5
            u[boundary] = 1.0
            samples.append(("box-interior", (u * a) ** 2))
    else:
        # axis spikes are the extreme points of the ellipsoid for the
        # projection risk; take a log-spaced sweep of them
        if len(pos):
            js = np.unique(np.geomspace(1, len(pos), num=min(40, len(pos))).astype(int)) - 1
            for j in pos[js]:
                th2 = np.zeros(n)
                th2[j] = a[j] ** 2
                samples.append((f"axis-{j + 1}", th2))
        for _ in range(max(0, n_samples - len(samples))):
            k = int(rng.choice([1, 2, 4, 8, 16]))
            idx = rng.choice(pos, size=min(k, len(pos)), replace=False) if len(pos) else []
            w = rng.standard_normal(len(idx)) ** 2
            w /= w.sum()
            scale = math.sqrt(float(rng.uniform(0.0, 1.0))) if rng.random() < 0.3 else 1.0
            th2 = np.zeros(n)
            th2[idx] = scale**2 * w * a[idx] ** 2
            samples.append(("boundary-mix", th2))

    worst_ratio = -math.inf
    worst_tag = ""
    for tag, th2 in samples:
        ratio = _rate_sq_at(th2, model) / rate_global
        if ratio > worst_ratio:
            worst_ratio, worst_tag = ratio, tag

    # monotone-weights comparison, independent of the class
    dim = min(lambda_dim, n)
    sig2 = model.sigma_sq[:dim]
    var_cum = np.concatenate(([0.0], np.cumsum(sig2)))
    all_hold = True
    worst_margin = math.inf
    for _ in range(lambda_trials):
        lam = np.sort(rng.uniform(0.0, 1.0, size=dim))[::-1]
        theta = rng.standard_normal(dim) * rng.choice([0.1, 1.0, 10.0])
        th2 = theta**2
        risk_lin = float(np.sum(sig2 * lam**2 + (1.0 - lam) ** 2 * th2))
        n_lam = int(np.flatnonzero(lam >= 0.5)[-1] + 1) if np.any(lam >= 0.5) else 0
        r2 = float(var_cum[n_lam] + th2[n_lam:].sum())
        margin = risk_lin - 0.25 * r2
        worst_margin = min(worst_margin, margin)
        if margin < 0:
            all_hold = False

    return CoversReport(
        class_kind=cls.kind,
        rate_sq=rate_global,
        threshold=threshold,
        worst_ratio=float(worst_ratio),
        worst_sample=worst_tag,
        n_samples=len(samples),
        passed=bool(worst_ratio <= threshold),
        lambda_trials=lambda_trials,
        lambda_all_hold=all_hold,
        lambda_worst_margin=float(worst_margin),
    )
