"""Environments: one offspring law per generation, plus composition.

An environment assigns a law f_n to each generation n >= 1.  The
distribution of the population started from one individual is governed
by the composed generating functions

    f_{k,n} = f_{k+1} o f_{k+2} o ... o f_n,      f_{n,n}(s) = s,

evaluated innermost first.  This module provides the environment
containers (constant, explicit prefix, named families), composition of
values and first two derivatives, mean-product profiles in linear and
log scale, and exact truncated population distributions obtained by
composing power-series coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .laws import (
    BudgetError,
    FiniteSupport,
    InvalidLawError,
    LinearFractional,
    OffspringLaw,
    PreconditionError,
    law_from_dict,
)

__all__ = [
    "Environment",
    "Constant",
    "Prefix",
    "NamedFamily",
    "environment_from_dict",
    "composed_points",
    "compose_eval",
    "MuProfile",
    "mu_profile",
    "DistVector",
    "compose_coeffs",
]


class Environment:
    """Base class: a map from generation index n >= 1 to an offspring law."""

    def law(self, n: int) -> OffspringLaw:
        raise NotImplementedError

    @property
    def series_meta(self) -> dict[str, str]:
        """Analytic convergence tags for criterion series, when known.

        Maps criterion id -> "converges" | "diverges".  For infimum /
        supremum criteria "converges" means the condition holds (infimum
        positive, supremum finite).  Empty when nothing is known; the
        numeric slope heuristic then decides.
        """
        return {}

    def shift(self, by: int) -> "Environment":
        """Environment seen from generation ``by``: law(n) = self.law(n + by)."""
        if by == 0:
            return self
        return _Shifted(self, by)

    def normalized(self) -> "Environment":
        """Environment of survival-conditioned laws f_n(s)/f_n(1)."""
        return _Normalized(self)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Environment):
    """The same law at every generation."""

    base: OffspringLaw

    def law(self, n: int) -> OffspringLaw:
        if n < 1:
            raise ValueError("generation index starts at 1")
        return self.base

    def to_dict(self) -> dict:
        return {"kind": "constant", "law": self.base.to_dict()}


@dataclass(frozen=True)
class Prefix(Environment):
    """Explicit laws for the first generations, one tail law afterwards."""

    laws: tuple[OffspringLaw, ...]
    tail: OffspringLaw

    def __post_init__(self) -> None:
        object.__setattr__(self, "laws", tuple(self.laws))

    def law(self, n: int) -> OffspringLaw:
        if n < 1:
            raise ValueError("generation index starts at 1")
        return self.laws[n - 1] if n <= len(self.laws) else self.tail

    def to_dict(self) -> dict:
        return {
            "kind": "prefix",
            "laws": [lw.to_dict() for lw in self.laws],
            "tail": self.tail.to_dict(),
        }


_META_SINGLE_CHILD = {
    # single-child families: no mass at {2,3,...}, so the second-moment
    # series and the tail-ratio supremum are trivially fine
    "var_mean_series": "converges",
    "tail_ratio_sup": "converges",
}

_NAMED_META: dict[str, dict[str, str]] = {
    "example-1a": {
        **_META_SINGLE_CHILD,
        "one_child_gap": "diverges",
        "mean_product_infimum": "diverges",
        "defect_mean_series": "converges",
    },
    "example-1b": {
        **_META_SINGLE_CHILD,
        "one_child_gap": "converges",
        "mean_product_infimum": "converges",
        "defect_mean_series": "converges",
    },
    "example-2a": {
        "one_child_gap": "diverges",
        "mean_product_infimum": "converges",
        "defect_mean_series": "diverges",
        "var_mean_series": "converges",
        "tail_ratio_sup": "converges",
    },
    "example-2b": {
        "one_child_gap": "diverges",
        "mean_product_infimum": "converges",
        "defect_mean_series": "converges",
        "var_mean_series": "converges",
        "tail_ratio_sup": "converges",
    },
}


@dataclass(frozen=True)
class NamedFamily(Environment):
    """Built-in law families.

    Ids:
        example-1a: f_1(s) = s/2, f_n(s) = (1 - 1/n) s for n >= 2.
        example-1b: f_1(s) = s/2, f_n(s) = (1 - 1/n^2) s for n >= 2.
        example-2a: f_n(s) = (1 - 1/(n 2^n)) s^2.
        example-2b: f_n(s) = (1 - 1/(n^2 2^n)) s^2.
        power-defect: f_n(s) = (1 - a n^(-b)) s^m with params a in (0,1),
            b > 0, arity m >= 1.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in ("example-1a", "example-1b", "example-2a",
                               "example-2b", "power-defect"):
            raise InvalidLawError(f"unknown family {self.family!r}")
        if self.family == "power-defect":
            a = float(self.params.get("a", 0.0))
            b = float(self.params.get("b", 0.0))
            m = int(self.params.get("arity", 1))
            if not (0.0 < a < 1.0 and b > 0.0 and m >= 1):
                raise InvalidLawError("power-defect needs 0 < a < 1, b > 0, arity >= 1")

    def law(self, n: int) -> OffspringLaw:
        if n < 1:
            raise ValueError("generation index starts at 1")
        fam = self.family
        if fam == "example-1a":
            c = 0.5 if n == 1 else 1.0 - 1.0 / n
            return _single_child(c)
        if fam == "example-1b":
            c = 0.5 if n == 1 else 1.0 - 1.0 / n**2
            return _single_child(c)
        if fam == "example-2a":
            return _pure_arity(1.0 - 0.5**n / n, 2)
        if fam == "example-2b":
            return _pure_arity(1.0 - 0.5**n / n**2, 2)
        a = float(self.params["a"])
        b = float(self.params["b"])
        m = int(self.params.get("arity", 1))
        return _pure_arity(1.0 - a * float(n) ** (-b), m)

    @property
    def series_meta(self) -> dict[str, str]:
        return dict(_NAMED_META.get(self.family, {}))

    def to_dict(self) -> dict:
        out: dict = {"kind": "named", "id": self.family}
        if self.params:
            out["params"] = dict(self.params)
        return out


def _single_child(c: float) -> FiniteSupport:
    return FiniteSupport([0.0, c])


def _pure_arity(c: float, m: int) -> FiniteSupport:
    w = np.zeros(m + 1)
    w[m] = c
    return FiniteSupport(w)


class _Shifted(Environment):
    def __init__(self, base: Environment, by: int) -> None:
        self._base = base
        self._by = by

    def law(self, n: int) -> OffspringLaw:
        return self._base.law(n + self._by)

    def shift(self, by: int) -> Environment:
        return self._base.shift(self._by + by)

    def __repr__(self) -> str:
        return f"{self._base!r}.shift({self._by})"


class _Normalized(Environment):
    def __init__(self, base: Environment) -> None:
        self._base = base

    def law(self, n: int) -> OffspringLaw:
        return self._base.law(n).normalize()

    def __repr__(self) -> str:
        return f"{self._base!r}.normalized()"


def environment_from_dict(obj: dict) -> Environment:
    """Build an environment from its JSON literal form."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InvalidLawError("environment literal must be an object with a 'kind'")
    kind = obj["kind"]
    if kind == "constant":
        return Constant(law_from_dict(obj["law"]))
    if kind == "prefix":
        laws = tuple(law_from_dict(o) for o in obj["laws"])
        return Prefix(laws, law_from_dict(obj["tail"]))
    if kind == "named":
        return NamedFamily(obj["id"], dict(obj.get("params", {})))
    raise InvalidLawError(f"unknown environment kind {kind!r}")


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def _check_window(k: int, n: int) -> None:
    if not (0 <= k <= n):
        raise PreconditionError(f"need 0 <= k <= n, got k={k}, n={n}")


def composed_points(env: Environment, k: int, n: int, s) -> np.ndarray:
    """Intermediate values t_i = f_{i,n}(s) for i = k..n.

    Computed innermost first: t_n = s, t_{i-1} = f_i(t_i).  Index j of
    the returned array holds t_{k+j}; in particular out[0] = f_{k,n}(s)
    and out[-1] = s.  Vectorized over s.
    """
    _check_window(k, n)
    s_ = np.asarray(s, dtype=float)
    out = np.empty((n - k + 1,) + s_.shape)
    out[n - k] = s_
    for i in range(n, k, -1):
        out[i - k - 1] = env.law(i).pgf(out[i - k])
    return out


def compose_eval(env: Environment, k: int, n: int, s, order: int = 0):
    """Evaluate f_{k,n}(s) or its first or second derivative.

    Derivatives follow the chain rule along the same innermost-first
    sweep: with v = f_{i,n}(s),

        (f_{i-1,n})'(s)  = f_i'(v) v'
        (f_{i-1,n})''(s) = f_i''(v) (v')^2 + f_i'(v) v''.

    Vectorized over s; scalar s gives a float.
    """
    _check_window(k, n)
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    scalar = np.ndim(s) == 0
    v = np.asarray(s, dtype=float).copy()
    d1 = np.ones_like(v)
    d2 = np.zeros_like(v)
    for i in range(n, k, -1):
        law = env.law(i)
        if order >= 1:
            fp = law.pgf(v, 1)
            if order == 2:
                d2 = law.pgf(v, 2) * d1 * d1 + fp * d2
            d1 = fp * d1
        v = law.pgf(v)
    out = (v, d1, d2)[order]
    return float(out) if scalar else out


@dataclass(frozen=True)
class MuProfile:
    """Mean products along a horizon, in linear and log scale.

    Attributes:
        n: horizon.
        s: evaluation point for the ``_at_s`` fields.
        log_mu: log prod_{i<=n} f_i'(1); ``mu`` is its exp (may overflow
            to inf / underflow to 0; the log field is authoritative).
        log_mu_at_s / mu_at_s: same with derivatives taken at s.
        log_nu_at_s / nu_at_s: nu_n(s) = sum_{i<=n} 1 / mu_i(s).
        ladder: mu_{j,n} = prod_{i<=j} f_i'(f_{i,n}(1)) for j = 0..n,
            the mean of generation j inside an n-horizon composition;
            ladder[n] = E[Z_n].  ``log_ladder`` is the log version.
    """

    n: int
    s: float
    log_mu: float
    log_mu_at_s: float
    log_nu_at_s: float
    ladder: np.ndarray
    log_ladder: np.ndarray

    @property
    def mu(self) -> float:
        return float(np.exp(self.log_mu))

    @property
    def mu_at_s(self) -> float:
        return float(np.exp(self.log_mu_at_s))

    @property
    def nu_at_s(self) -> float:
        return float(np.exp(self.log_nu_at_s))

    @property
    def mean(self) -> float:
        """E[Z_n] = ladder[n]."""
        return float(self.ladder[-1])


def mu_profile(env: Environment, n: int, s: float = 1.0) -> MuProfile:
    """Mean products mu_n, mu_n(s), nu_n(s) and the ladder mu_{j,n}.

    All products are accumulated as sums of logs; linear values are
    exposed as exp of those sums so that overflow degrades to inf
    rather than corrupting neighbours.
    """
    _check_window(0, n)
    t = composed_points(env, 0, n, 1.0)  # t[i] = f_{i,n}(1)
    log_mu = 0.0
    log_mu_s = 0.0
    neg_logs = np.empty(n)  # -log mu_i(s), feeding nu
    log_ladder = np.empty(n + 1)
    log_ladder[0] = 0.0
    with np.errstate(divide="ignore"):
        for i in range(1, n + 1):
            law = env.law(i)
            log_mu += _log(law.mean)
            log_mu_s += _log(law.pgf(s, 1))
            neg_logs[i - 1] = -log_mu_s
            log_ladder[i] = log_ladder[i - 1] + _log(law.pgf(t[i], 1))
    log_nu = _logsumexp(neg_logs) if n else -math.inf
    return MuProfile(
        n=n,
        s=float(s),
        log_mu=log_mu,
        log_mu_at_s=log_mu_s,
        log_nu_at_s=log_nu,
        ladder=np.exp(log_ladder),
        log_ladder=log_ladder,
    )


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


@dataclass(frozen=True)
class DistVector:
    """Truncated distribution of the population at a horizon.

    probs[k] = P[Z_n = k] for k = 0..degree (exact power-series
    coefficients of the composed pgf up to geometric-tail truncation of
    linear-fractional steps), delta_mass = P[killed by n], tail_mass =
    P[Z_n > degree] plus whatever the step truncation shaved off.
    """

    horizon: int
    degree: int
    probs: np.ndarray
    delta_mass: float
    tail_mass: float
    dropped: float  # accumulated per-step truncation mass (lf laws only)

    def __post_init__(self) -> None:
        total = float(self.probs.sum()) + self.delta_mass + self.tail_mass
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise PreconditionError(f"distribution mass {total} != 1")

    def pgf_bracket(self, s: float) -> tuple[float, float]:
        """Bounds on f_{0,n}(s) from the truncated coefficients."""
        lo = float(np.polynomial.polynomial.polyval(s, self.probs))
        return lo, lo + self.tail_mass * s ** (self.degree + 1)


def compose_coeffs(
    env: Environment,
    n: int,
    degree: int,
    rel_tail: float = 1e-14,
    budget: int = 1 << 24,
) -> DistVector:
    """Exact coefficients of f_{0,n} up to ``degree``.

    Works innermost first: the polynomial Q_i carrying f_{i,n}'s
    coefficients (truncated at ``degree``) is substituted into f_i via
    Horner's scheme, one convolution per support point.  Truncating at
    ``degree`` each step is exact for the kept coefficients: the low
    coefficients of a composition never involve the discarded high ones.
    Linear-fractional steps are truncated to a finite support carrying
    all but ``rel_tail`` of their mass; the dropped amount is recorded
    and conservatively surfaces inside ``tail_mass``.
    """
    _check_window(0, n)
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if (degree + 1) * max(n, 1) > budget:
        raise BudgetError(
            f"compose_coeffs work (degree+1)*n = {(degree + 1) * n} exceeds budget {budget}"
        )
    q = np.zeros(degree + 1)
    q[1] = 1.0
    dropped = 0.0
    for i in range(n, 0, -1):
        law = env.law(i)
        w = law.coeff_vector(rel_tail)
        dropped += max(0.0, law.mass - float(w.sum()))
        q = _substitute(w, q, degree)
    mass = compose_eval(env, 0, n, 1.0)
    tail = max(0.0, mass - float(q.sum()))
    return DistVector(
        horizon=n,
        degree=degree,
        probs=q,
        delta_mass=1.0 - mass,
        tail_mass=tail,
        dropped=dropped,
    )


def _substitute(w: np.ndarray, q: np.ndarray, degree: int) -> np.ndarray:
    """Coefficients of s -> sum_k w[k] Q(s)^k, truncated at ``degree``."""
    out = np.array([w[-1]])
    for k in range(w.size - 2, -1, -1):
        out = np.convolve(out, q)[: degree + 1]
        out[0] += w[k]
    if out.size < degree + 1:
        out = np.pad(out, (0, degree + 1 - out.size))
    return out
