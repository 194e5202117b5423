"""Local reduction: decomposition, the per-client rules, and effect frames."""

from __future__ import annotations

import pytest

from ctrd.lattice import NatMax
from ctrd.parser import parse_term
from ctrd.runtime_local import (
    Blocked, CtrdRuntimeError, Finished, NeedsCloud, Redex, Stepped, Update,
    Req, decompose, initial_client, step_local,
)
from ctrd.syntax import (
    AVA, CON, Duplicated, Identifier, LatOp, Lit, Location, LOC, OAC, OrdOp,
    Plain, Ref, Restrict,
)


def client_at(src: str, cid: int = 1):
    return initial_client(cid, parse_term(src))


def run_locally(src: str, max_steps: int = 100, global_ids=None):
    c = client_at(src)
    actions = []
    for _ in range(max_steps):
        out = step_local(c, global_ids or {})
        if isinstance(out, Finished):
            return c, out.value, actions
        assert isinstance(out, Stepped), out
        actions.append((out.rule, out.action))
        c = out.client
    raise AssertionError("did not finish")


# ---------------------------------------------------------------------------
# decomposition

def test_decompose_leftmost_innermost():
    t = parse_term("(nat 1 @loc \\/ nat 2 @loc) <= nat 3 @loc")
    d = decompose(t, {}, {})
    assert isinstance(d, Redex)
    assert isinstance(d.term, LatOp)
    rebuilt = d.rebuild(Lit(Plain(NatMax(9), LOC)))
    assert isinstance(rebuilt, OrdOp)


def test_decompose_value():
    assert decompose(parse_term("unit @con"), {}, {}) is None


def test_decompose_blocked_await():
    d = decompose(parse_term("!await((ava,1))"), {}, {})
    assert isinstance(d, Blocked)
    assert d.ident == Identifier(AVA, 1)


def test_decompose_effect_accumulates_through_frames():
    t = Restrict(Restrict(parse_term("nat 1 @loc \\/ nat 2 @loc"), CON), AVA)
    d = decompose(t, {}, {})
    assert isinstance(d, Redex)
    assert d.effect == AVA


# ---------------------------------------------------------------------------
# pure rules

def test_latop_joins_values_and_labels():
    _, v, _ = run_locally("nat 1 @loc \\/ nat 2 @con")
    assert v == Plain(NatMax(2), CON)


def test_ordop_comparison():
    _, v, _ = run_locally("nat 3 @loc <= nat 3 @loc")
    assert v.raw.value is True and v.label == LOC


def test_beta_wraps_body_in_own_label_frame():
    c = client_at("(fn@ava(x: Lat@loc) => x)[con] (nat 1 @loc)")
    # one step collapses the restriction onto the closure value
    out = step_local(c, {})
    out = step_local(out.client, {})
    assert out.rule == "E-BETA"
    assert isinstance(out.client.term, Restrict) and out.client.term.label == CON
    _, v, _ = run_locally("(fn@ava(x: Lat@loc) => x)[con] (nat 1 @loc)")
    assert v == Plain(NatMax(1), CON)   # result joined with the closure label


def test_if_branch_runs_under_guard_label():
    c = client_at("if true @ava then { nat 1 @loc } else { nat 0 @loc }")
    out = step_local(c, {})
    assert out.rule == "E-IF-TRUE"
    assert isinstance(out.client.term, Restrict) and out.client.term.label == AVA
    _, v, _ = run_locally("if true @ava then { nat 1 @loc } else { nat 0 @loc }")
    assert v == Plain(NatMax(1), AVA)


def test_restriction_joins_label():
    _, v, _ = run_locally("(nat 2 @con)[oac]")
    assert v == Plain(NatMax(2), OAC)


def test_record_and_projection():
    _, v, _ = run_locally("{b = nat 2 @loc, a = nat 1 @loc}@con . a")
    assert v == Plain(NatMax(1), CON)


# ---------------------------------------------------------------------------
# local references

def test_local_ref_stamps_effect_and_binds_id():
    c, v, _ = run_locally("ref@loc(nat 3 @loc, (loc,1))")
    assert Identifier(LOC, 1) in c.idmap
    o = c.idmap[Identifier(LOC, 1)]
    assert c.store[o] == Plain(NatMax(3), LOC)


def test_local_ref_under_frame_joins_effect():
    # a restriction frame raises the running effect, which stamps the store
    c, _, _ = run_locally("(ref@loc(nat 3 @loc, (loc,1)))[con]")
    o = c.idmap[Identifier(LOC, 1)]
    assert c.store[o] == Plain(NatMax(3), CON)


def test_ref_dup_on_taken_identifier():
    src = "let a = ref@loc(nat 1 @loc, (loc,1)) in ref@loc(nat 2 @loc, (loc,1))"
    _, v, actions = run_locally(src)
    assert isinstance(v, Duplicated)
    assert any(rule == "E-REF-DUP" for rule, _ in actions)


def test_ava_ref_buffers_update_and_stamps_ava():
    c, v, actions = run_locally("ref@ava(nat 3 @loc, (ava,1))")
    assert isinstance(v.raw, Location) and v.label == AVA
    o = v.raw
    assert c.store[o] == Plain(NatMax(3), AVA)
    assert len(c.buffer) == 1
    (m,) = c.buffer
    assert isinstance(m, Update)
    assert m.value == Plain(NatMax(3), LOC)          # payload is unstamped
    assert m.delivered == frozenset()
    (ref_act,) = [a for r, a in actions if r == "E-AVAREF"]
    assert ref_act.kind == "ref" and ref_act.label == AVA


def test_ava_deref_local_merges_and_requests():
    src = ("let a = ref@ava(nat 5 @ava, (ava,1)) in !a")
    c, v, actions = run_locally(src)
    assert v == Plain(NatMax(5), AVA)
    kinds = [type(m) for m in c.buffer]
    assert kinds == [Update, Req]
    (rd,) = [a for r, a in actions if r == "E-AVADEREF1"]
    assert rd.source == ("local", 1) and rd.snapshot == ()


def test_ava_assign_merges_with_store():
    # merge keeps the lattice maximum of the held and written values
    src = "let a = ref@ava(nat 5 @ava, (ava,1)) in a := nat 3 @ava"
    c, v, actions = run_locally(src)
    o = c.idmap[Identifier(AVA, 1)]
    assert c.store[o] == Plain(NatMax(5), AVA)
    updates = [m for m in c.buffer if isinstance(m, Update)]
    assert len(updates) == 2 and updates[1].value == Plain(NatMax(3), AVA)


def test_await_resolves_locally():
    src = "let a = ref@loc(nat 1 @loc, (loc,1)) in await((loc,1))"
    c, v, _ = run_locally(src)
    assert v == Plain(c.idmap[Identifier(LOC, 1)], LOC)


def test_deref_duplicated_raises():
    src = ("let a = ref@loc(nat 1 @loc, (loc,1)) in "
           "let b = ref@loc(nat 2 @loc, (loc,1)) in !b")
    with pytest.raises(CtrdRuntimeError) as exc:
        run_locally(src)
    assert exc.value.kind == "DuplicatedIdentifier"


def test_con_redex_is_a_cloud_matter():
    c = client_at("ref@con(nat 1 @con, (con,1))")
    out = step_local(c, {})
    assert isinstance(out, NeedsCloud)
    assert isinstance(out.redex, Ref)


def test_step_local_never_mutates_input():
    c = client_at("ref@ava(nat 3 @loc, (ava,1))")
    before = c.key()
    step_local(c, {})
    assert c.key() == before
