import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bpsa.distributions import (FinitePMF, Geometric, Poisson, constant, parse_distribution)
from bpsa.errors import LawContractError


def _brute_min(pmf, cap):
    return sum(p * min(k, cap) for k, p in pmf.items())


def test_poisson_moments_match_scipy():
    d = Poisson(1.5)
    assert d.variance == pytest.approx(stats.poisson(1.5).var())
    assert d.second_moment == pytest.approx(1.5 + 1.5**2)
    assert d.prob_zero == pytest.approx(math.exp(-1.5))


def test_geometric_convention():
    d = Geometric(0.8)
    ref = stats.geom(1 / 1.8, loc=-1)  # support {0, 1, ...}
    assert ref.mean() == pytest.approx(0.8)
    assert d.variance == pytest.approx(ref.var())
    assert d.prob_zero == pytest.approx(ref.pmf(0))
    rng = np.random.default_rng(3)
    draws = np.array([d.sample(rng) for _ in range(50_000)])
    assert draws.min() == 0
    assert abs(draws.mean() - 0.8) < 4 * math.sqrt(d.variance / len(draws))


def test_finite_pmf_validation():
    assert FinitePMF.from_dict({0: 0.25, 2: 0.75}).mean == 1.5
    with pytest.raises((ValueError, LawContractError)):
        FinitePMF.from_dict({0: 0.5, 1: 0.4})
    with pytest.raises((ValueError, LawContractError)):
        FinitePMF.from_dict({-1: 0.5, 1: 0.5})
    with pytest.raises(ValueError):
        Poisson(-1.0)


@pytest.mark.parametrize("dist", [Poisson(1.3), Geometric(0.9), Poisson(0.0)])
@pytest.mark.parametrize("cap", [0, 0.5, 1, 2.25, 3, 7.5, 40])
def test_expected_min_against_truncated_sum(dist, cap):
    if isinstance(dist, Poisson):
        pmf = {k: stats.poisson(dist.mean).pmf(k) for k in range(200)}
    else:
        r = dist.mean / (1 + dist.mean)
        pmf = {k: (1 - r) * r**k for k in range(400)}
    assert dist.expected_min(cap) == pytest.approx(_brute_min(pmf, cap), abs=1e-10)


def test_expected_min_finite_pmf_example():
    d = FinitePMF.from_dict({0: 0.5, 3: 0.5})
    assert d.expected_min(2) == pytest.approx(1.0, abs=1e-15)
    assert d.expected_min(1.5) == pytest.approx(0.75, abs=1e-15)
    assert d.expected_min(10) == pytest.approx(1.5, abs=1e-15)


def test_thinned_pmf_is_binomial_mixture():
    d = FinitePMF.from_dict({0: 0.2, 3: 0.8})
    t = d.thinned(0.25).finite_pmf()
    ref = {j: 0.8 * stats.binom(3, 0.25).pmf(j) for j in range(4)}
    ref[0] += 0.2
    assert set(t) == set(ref)
    for k in ref:
        assert t[k] == pytest.approx(ref[k], abs=1e-14)
    assert Poisson(1.8).thinned(0.5) == Poisson(0.9)
    assert Geometric(2.0).thinned(0.25).mean == pytest.approx(0.5)


@settings(max_examples=50)
@given(st.dictionaries(st.integers(0, 12), st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_parse_roundtrip(raw):
    total = sum(raw.values())
    d = FinitePMF.from_dict({k: v / total for k, v in raw.items()})
    assert parse_distribution(str(d)) == d


@pytest.mark.parametrize("text", ["poisson 1.5", "geometric 0.8", "const 2", "pmf 0:0.25 2:0.75"])
def test_parse_examples(text):
    d = parse_distribution(text)
    assert parse_distribution(str(d)) == d


@pytest.mark.parametrize("text", ["", "poisson", "poisson x", "pmf 0:0.5", "binomial 3 0.5"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_distribution(text)


def test_constant_and_sampling():
    rng = np.random.default_rng(0)
    assert all(constant(2).sample(rng) == 2 for _ in range(10))
    d = FinitePMF.from_dict({0: 0.25, 2: 0.75})
    draws = np.array([d.sample(rng) for _ in range(40_000)])
    assert abs(np.mean(draws == 0) - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 40_000)
