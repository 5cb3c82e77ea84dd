"""Observation model and signal families for the Gaussian sequence problem.

The model observes X_i ~ N(theta_i, sigma_i^2) independently, with noise
levels sigma_i = eps * i^p growing polynomially in the coordinate index
(the mildly ill-posed regime; p = 0 is the direct problem).  Signals are
finite coefficient sequences with an exact zero tail beyond the truncation
level, which keeps every tail sum downstream exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

__all__ = [
    "ModelConfig",
    "Signal",
    "ObservedData",
    "make_model",
    "generate_signal",
    "simulate",
    "as_generator",
]

SIGNAL_KINDS = (
    "zero",
    "sobolev-boundary",
    "sobolev-random",
    "analytic",
    "parametric",
    "deceptive",
    "custom",
)


def as_generator(seed: int | np.random.SeedSequence | np.random.Generator | None) -> np.random.Generator:
    """Coerce an int seed, a SeedSequence, a Generator, or None to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Noise specification sigma_i = epsilon * i^p for i = 1..n_trunc."""

    epsilon: float
    p: float
    n_trunc: int

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.p < 0:
            raise ValueError(f"p must be nonnegative, got {self.p}")
        if not isinstance(self.n_trunc, int) or self.n_trunc < 1:
            raise ValueError(f"n_trunc must be a positive integer, got {self.n_trunc}")

    @cached_property
    def sigma(self) -> np.ndarray:
        """Noise standard deviations (sigma_1, ..., sigma_N), sigma_i = eps * i^p."""
        i = np.arange(1, self.n_trunc + 1, dtype=float)
        return _readonly(self.epsilon * i**self.p)

    @cached_property
    def sigma_sq(self) -> np.ndarray:
        return _readonly(self.sigma**2)

    @cached_property
    def _sigma_sq_cumsum(self) -> np.ndarray:
        # index j holds Sigma(j) = sum_{i<=j} sigma_i^2, with Sigma(0) = 0
        return _readonly(np.concatenate(([0.0], np.cumsum(self.sigma_sq))))

    def variance_sum(self, a: float) -> float:
        """Sigma(a) = sum of sigma_i^2 over i <= a; empty sums are 0.

        Accepts real arguments (the sum runs to floor(a)) and clips at the
        truncation level.
        """
        j = int(math.floor(a))
        if j <= 0:
            return 0.0
        return float(self._sigma_sq_cumsum[min(j, self.n_trunc)])


def make_model(epsilon: float, p: float, n_trunc: int = 4096) -> ModelConfig:
    """Build a ModelConfig; rejects epsilon <= 0, p < 0, n_trunc < 1."""
    return ModelConfig(epsilon=float(epsilon), p=float(p), n_trunc=int(n_trunc))


@dataclass(frozen=True)
class Signal:
    """A finite coefficient sequence together with its generator metadata.

    Coefficients beyond len(coeffs) are exactly zero by convention.
    """

    coeffs: np.ndarray
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if arr.ndim != 1:
            raise ValueError("signal coefficients must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal coefficients must be finite")
        object.__setattr__(self, "coeffs", _readonly(arr))
        object.__setattr__(self, "params", dict(self.params))

    def __len__(self) -> int:
        return len(self.coeffs)

    def padded(self, n: int) -> np.ndarray:
        """Coefficients padded with exact zeros (or truncated) to length n."""
        out = np.zeros(n)
        m = min(n, len(self.coeffs))
        out[:m] = self.coeffs[:m]
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params), "coeffs": self.coeffs.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Signal":
        return cls(coeffs=np.asarray(d["coeffs"], dtype=float), kind=d["kind"], params=d.get("params", {}))

    @classmethod
    def from_json(cls, s: str) -> "Signal":
        return cls.from_dict(json.loads(s))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def generate_signal(
    kind: str,
    params: Mapping[str, Any] | None = None,
    n_trunc: int = 4096,
    seed: int | np.random.SeedSequence | np.random.Generator | None = None,
) -> Signal:
    """Generate a signal from one of the named families.

    Kinds and parameters:

    * ``zero``: all-zero coefficients.
    * ``sobolev-boundary`` (beta > 0, Q > 0): theta_i = sqrt(Q) * i^{-(beta+1/2)},
      sitting exactly on the hyperrectangle bound a_i^2 = Q * i^{-(2*beta+1)}.
    * ``sobolev-random`` (beta, Q): theta_i drawn uniformly in [-a_i, a_i]
      with the same a_i (seeded).
    * ``analytic`` (c > 0, d > 0, Q > 0): theta_i = sqrt(Q * exp(-c * i^d)).
    * ``parametric`` (Q > 0, 1 <= N0 <= n_trunc): theta_i = sqrt(Q) for
      i <= N0, zero after.
    * ``deceptive`` (epsilon > 0, p >= 0): zero base plus a single spike of
      squared mass m = 10 * eps^2 * j^{2p} at j = ceil(2 / eps^{2/(2p+1)}).
      The constructor verifies that the result fails the excess-bias check
      at tau = 1 and raises otherwise.
    * ``custom`` (coeffs): coefficients passed through verbatim.
    """
    params = dict(params or {})
    _require(isinstance(n_trunc, int) and n_trunc >= 1, f"n_trunc must be a positive integer, got {n_trunc}")

    if kind == "zero":
        return Signal(np.zeros(n_trunc), kind, {})

    if kind in ("sobolev-boundary", "sobolev-random"):
        beta = float(params.get("beta", 1.0))
        q = float(params.get("Q", 1.0))
        _require(beta > 0, f"beta must be positive, got {beta}")
        _require(q > 0, f"Q must be positive, got {q}")
        i = np.arange(1, n_trunc + 1, dtype=float)
        a = np.sqrt(q) * i ** (-(beta + 0.5))
        if kind == "sobolev-boundary":
            coeffs = a
        else:
            rng = as_generator(seed)
            coeffs = rng.uniform(-a, a)
        return Signal(coeffs, kind, {"beta": beta, "Q": q})

    if kind == "analytic":
        c = float(params.get("c", 1.0))
        d = float(params.get("d", 1.0))
        q = float(params.get("Q", 1.0))
        _require(c > 0 and d > 0, f"c and d must be positive, got c={c}, d={d}")
        _require(q > 0, f"Q must be positive, got {q}")
        i = np.arange(1, n_trunc + 1, dtype=float)
        coeffs = np.sqrt(q * np.exp(-c * i**d))
        return Signal(coeffs, kind, {"c": c, "d": d, "Q": q})

    if kind == "parametric":
        q = float(params.get("Q", 1.0))
        n0 = int(params.get("N0", 1))
        _require(q > 0, f"Q must be positive, got {q}")
        _require(1 <= n0 <= n_trunc, f"N0 must be in [1, {n_trunc}], got {n0}")
        coeffs = np.zeros(n_trunc)
        coeffs[:n0] = math.sqrt(q)
        return Signal(coeffs, kind, {"Q": q, "N0": n0})

    if kind == "deceptive":
        eps = float(params["epsilon"])
        p = float(params.get("p", 0.0))
        _require(eps > 0, f"epsilon must be positive, got {eps}")
        _require(p >= 0, f"p must be nonnegative, got {p}")
        j = math.ceil(2.0 / eps ** (2.0 / (2.0 * p + 1.0)))
        if j > n_trunc:
            raise ValueError(
                f"deceptive spike index {j} exceeds the truncation level {n_trunc}; "
                f"use a larger n_trunc or a larger epsilon"
            )
        mass = 10.0 * eps**2 * float(j) ** (2.0 * p)
        coeffs = np.zeros(n_trunc)
        coeffs[j - 1] = math.sqrt(mass)
        sig = Signal(coeffs, kind, {"epsilon": eps, "p": p, "spike_index": j, "spike_mass": mass})
        # the whole point of this signal is to sit outside the excess-bias
        # class; refuse to hand out one that does not.  Import the submodule
        # explicitly: the package namespace rebinds the name "oracle" to a
        # function of the same name.
        from .oracle import ebr_check

        check = ebr_check(sig, make_model(eps, p, n_trunc), tau=1.0)
        if check.member:
            raise ValueError(
                f"deceptive construction failed: excess-bias ratio {check.ratio:.4g} <= 1"
            )
        return sig

    if kind == "custom":
        _require("coeffs" in params, "custom signals need a 'coeffs' parameter")
        coeffs = np.asarray(params["coeffs"], dtype=float)
        _require(len(coeffs) <= n_trunc, f"custom coefficients longer than n_trunc={n_trunc}")
        out = np.zeros(n_trunc)
        out[: len(coeffs)] = coeffs
        return Signal(out, kind, {})

    raise ValueError(f"unknown signal kind {kind!r}; expected one of {SIGNAL_KINDS}")


@dataclass(frozen=True)
class ObservedData:
    """One simulated draw X_i = theta_i + sigma_i * Z_i, i = 1..n_trunc."""

    x: np.ndarray
    model: ModelConfig
    seed: int | None

    def __post_init__(self) -> None:
        arr = np.asarray(self.x, dtype=float)
        if arr.shape != (self.model.n_trunc,):
            raise ValueError(
                f"data length {arr.shape} does not match n_trunc={self.model.n_trunc}"
            )
        object.__setattr__(self, "x", _readonly(arr))

    def __len__(self) -> int:
        return len(self.x)


def simulate(model: ModelConfig, signal: Signal, seed: int) -> ObservedData:
    """Draw X ~ N(theta, diag(sigma^2)) with a fixed integer seed.

    The signal is zero-padded to the model truncation level; signals longer
    than the model are rejected.  Identical (model, signal, seed) gives a
    bit-identical result.
    """
    if len(signal) > model.n_trunc:
        raise ValueError(
            f"signal length {len(signal)} exceeds model truncation {model.n_trunc}"
        )
    seed = int(seed)
    rng = np.random.default_rng(seed)
    theta = signal.padded(model.n_trunc)
    x = theta + model.sigma * rng.standard_normal(model.n_trunc)
    return ObservedData(x=x, model=model, seed=seed)
