"""Lattice laws for both value domains, with a randomized oracle sweep."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from ctrd.lattice import (
    DomainMismatch, GSet, NatMax, lat_join, lat_leq, lat_lt, lat_meet,
)

nats = st.builds(NatMax, st.integers(min_value=0, max_value=50))
gsets = st.builds(GSet, st.frozensets(st.sampled_from("abcdef"), max_size=4))


def test_nat_join_is_max():
    assert lat_join(NatMax(3), NatMax(5)) == NatMax(5)


def test_gset_join_is_union():
    assert lat_join(GSet(frozenset("a")), GSet(frozenset("b"))) == GSet(frozenset("ab"))


def test_nat_meet_is_min():
    assert lat_meet(NatMax(3), NatMax(5)) == NatMax(3)


def test_gset_meet_is_intersection():
    assert lat_meet(GSet(frozenset("ab")), GSet(frozenset("bc"))) == GSet(frozenset("b"))


def test_leq_reflexive_and_subset():
    assert lat_leq(NatMax(3), NatMax(3))
    assert lat_leq(GSet(frozenset("a")), GSet(frozenset("ab")))
    assert not lat_leq(GSet(frozenset("a")), GSet(frozenset("b")))   # incomparable
    assert not lat_leq(GSet(frozenset("b")), GSet(frozenset("a")))


def test_lt_is_strict():
    assert lat_lt(NatMax(1), NatMax(2))
    assert not lat_lt(NatMax(2), NatMax(2))


def test_domain_mismatch():
    with pytest.raises(DomainMismatch):
        lat_join(NatMax(1), GSet(frozenset()))


@given(nats, nats, nats)
def test_nat_join_reassociates(a, b, c):
    assert lat_join(lat_join(a, b), c) == lat_join(a, lat_join(b, c))


@given(gsets, gsets)
def test_gset_absorption(a, b):
    assert lat_join(a, lat_meet(a, b)) == a
    assert lat_meet(a, lat_join(a, b)) == a


def _random_value(rng: random.Random):
    if rng.random() < 0.5:
        return NatMax(rng.randrange(0, 40))
    return GSet(frozenset(rng.sample("abcdefgh", rng.randrange(0, 5))))


def _same_domain_pair(rng):
    a = _random_value(rng)
    while True:
        b = _random_value(rng)
        if type(b) is type(a):
            return a, b


def test_lattice_laws_randomized_sweep():
    """Join/meet commutativity, associativity, idempotence, absorption, and
    the leq/join coherence, over ten thousand random same-domain cases."""
    rng = random.Random(1234)
    for _ in range(10_000):
        a, b = _same_domain_pair(rng)
        c = _random_value(rng)
        if type(c) is not type(a):
            c = a
        assert lat_join(a, b) == lat_join(b, a)
        assert lat_meet(a, b) == lat_meet(b, a)
        assert lat_join(a, a) == a and lat_meet(a, a) == a
        assert lat_join(lat_join(a, b), c) == lat_join(a, lat_join(b, c))
        assert lat_meet(lat_meet(a, b), c) == lat_meet(a, lat_meet(b, c))
        assert lat_join(a, lat_meet(a, b)) == a
        assert lat_meet(a, lat_join(a, b)) == a
        assert lat_leq(a, b) == (lat_join(a, b) == b)
        assert lat_leq(a, lat_join(a, b))   # monotonicity
