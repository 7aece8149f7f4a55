"""Offspring-count distributions on the non-negative integers.

Three families are supported: Poisson, Geometric (support {0, 1, ...},
parameterized by its mean) and finite pmfs.  Every family is closed under
binomial thinning, which is what the proportion-dependent laws use to
couple a sample to its dominating draw.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

# E[(xi - K)^+] below this is treated as zero when evaluating E[min(xi, c)].
TAIL_TOL = 1e-10
_SUM_TOL = 1e-12


class Distribution:
    """Common interface; subclasses are frozen dataclasses."""

    mean: float

    @property
    def variance(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean**2

    @property
    def prob_zero(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def thinned(self, q: float) -> "Distribution":
        """Law of Binomial(X, q) for X ~ self."""
        raise NotImplementedError

    def finite_pmf(self) -> dict[int, float] | None:
        """Exact pmf when the support is finite, else None."""
        return None

    def _sf_table(self) -> np.ndarray:
        """P(X > k) for k = 0..K, with P(X > K) negligible."""
        raise NotImplementedError

    @cached_property
    def _min_tables(self):
        sf = self._sf_table()
        # excess[k] = E[(X - k)^+] = sum_{j >= k} P(X > j)
        excess = np.cumsum(sf[::-1])[::-1]
        below = np.nonzero(excess < TAIL_TOL)[0]
        k_tail = int(below[0]) if below.size else len(sf)
        return sf, excess, k_tail

    def expected_min(self, cap: float) -> float:
        """E[min(X, cap)] for a real cap >= 0 (error below TAIL_TOL)."""
        if cap <= 0:
            return 0.0
        sf, excess, k_tail = self._min_tables
        f = math.floor(cap)
        if f >= k_tail:
            return self.mean
        return self.mean - float(excess[f]) + (cap - f) * float(sf[f])


def _check_mean(mean: float) -> None:
    if not (math.isfinite(mean) and mean >= 0):
        raise ValueError(f"mean must be finite and >= 0, got {mean}")


@dataclass(frozen=True)
class Poisson(Distribution):
    mean: float

    def __post_init__(self):
        _check_mean(self.mean)

    @property
    def variance(self) -> float:
        return self.mean

    @property
    def prob_zero(self) -> float:
        return math.exp(-self.mean)

    def sample(self, rng):
        return int(rng.poisson(self.mean))

    def thinned(self, q):
        return Poisson(self.mean * q)

    def _sf_table(self):
        if self.mean == 0:
            return np.zeros(1)
        kmax = int(stats.poisson.ppf(1 - 1e-16, self.mean)) + 40
        return stats.poisson.sf(np.arange(kmax + 1), self.mean)

    def __str__(self):
        return f"poisson {self.mean!r}"


@dataclass(frozen=True)
class Geometric(Distribution):
    """P(X = k) = (1 - r) r^k on {0, 1, ...} with r = mean / (1 + mean)."""

    mean: float

    def __post_init__(self):
        _check_mean(self.mean)

    @property
    def ratio(self) -> float:
        return self.mean / (1.0 + self.mean)

    @property
    def variance(self) -> float:
        return self.mean * (1.0 + self.mean)

    @property
    def prob_zero(self) -> float:
        return 1.0 / (1.0 + self.mean)

    def sample(self, rng):
        return int(rng.geometric(1.0 / (1.0 + self.mean))) - 1

    def thinned(self, q):
        return Geometric(self.mean * q)

    def _sf_table(self):
        r = self.ratio
        if r == 0:
            return np.zeros(1)
        kmax = int(math.ceil(math.log(1e-18) / math.log(r))) + 1
        return r ** (np.arange(kmax + 1) + 1.0)

    def __str__(self):
        return f"geometric {self.mean!r}"


@dataclass(frozen=True)
class FinitePMF(Distribution):
    """Distribution on a finite set of non-negative integers.

    Build with ``FinitePMF.from_dict({0: 0.25, 2: 0.75})``; the stored
    representation is a sorted tuple of ``(value, probability)`` pairs.
    """

    items: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.items:
            raise ValueError("empty pmf")
        total = 0.0
        seen = set()
        for k, p in self.items:
            if int(k) != k or k < 0:
                raise ValueError(f"pmf support must be non-negative integers, got {k}")
            if k in seen:
                raise ValueError(f"duplicate support point {k}")
            if not (p >= 0 and math.isfinite(p)):
                raise ValueError(f"invalid probability {p} at {k}")
            seen.add(k)
            total += p
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"pmf sums to {total!r}, not 1")

    @classmethod
    def from_dict(cls, pmf: dict[int, float]) -> "FinitePMF":
        return cls(tuple(sorted((int(k), float(p)) for k, p in pmf.items() if p > 0)))

    @cached_property
    def _cdf(self):
        values = [k for k, _ in self.items]
        cum = list(np.cumsum([p for _, p in self.items]))
        return values, cum

    @cached_property
    def mean(self) -> float:  # type: ignore[override]
        return math.fsum(k * p for k, p in self.items)

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum(p * (k - m) ** 2 for k, p in self.items)

    @property
    def prob_zero(self) -> float:
        return dict(self.items).get(0, 0.0)

    def sample(self, rng):
        values, cum = self._cdf
        i = bisect.bisect_right(cum, rng.random())
        return values[min(i, len(values) - 1)]

    def thinned(self, q):
        if q >= 1.0:
            return self
        out: dict[int, float] = {}
        for k, p in self.items:
            for j, pj in enumerate(stats.binom.pmf(np.arange(k + 1), k, q)):
                out[j] = out.get(j, 0.0) + p * float(pj)
        total = math.fsum(out.values())
        return FinitePMF.from_dict({k: v / total for k, v in out.items()})

    def finite_pmf(self):
        return dict(self.items)

    def _sf_table(self):
        kmax = self.items[-1][0]
        pmf = np.zeros(kmax + 2)
        for k, p in self.items:
            pmf[k] = p
        return np.clip(1.0 - np.cumsum(pmf), 0.0, 1.0)

    def __str__(self):
        return "pmf " + " ".join(f"{k}:{p!r}" for k, p in self.items)


def constant(k: int) -> FinitePMF:
    """Point mass at ``k``."""
    return FinitePMF(((int(k), 1.0),))


def parse_distribution(text: str) -> Distribution:
    """Parse ``poisson 1.5``, ``geometric 0.8``, ``pmf 0:0.25 2:0.75`` or ``const 1``."""
    parts = text.split()
    if not parts:
        raise ValueError("empty distribution")
    name, args = parts[0].lower(), parts[1:]
    try:
        if name == "poisson" and len(args) == 1:
            return Poisson(float(args[0]))
        if name == "geometric" and len(args) == 1:
            return Geometric(float(args[0]))
        if name == "const" and len(args) == 1:
            return constant(int(args[0]))
        if name == "pmf" and args:
            pmf = {}
            for token in args:
                k, p = token.split(":")
                pmf[int(k)] = pmf.get(int(k), 0.0) + float(p)
            return FinitePMF(tuple(sorted(pmf.items())))
    except ValueError as exc:
        raise ValueError(f"bad distribution {text!r}: {exc}") from None
    raise ValueError(f"bad distribution {text!r}")
