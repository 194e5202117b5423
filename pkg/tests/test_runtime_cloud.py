"""Configuration-level stepping: enabled choices, the distributed rules,
schedulers, quiescence, and well-formedness."""

from __future__ import annotations

import pytest

from conftest import checked_config, corpus_files, load
from ctrd.lattice import NatMax
from ctrd.runtime_cloud import (
    ClientStep, ConRead, DeliverUpdate, GcUpdate, IllegalChoice, SplitMix64,
    check_wf, enabled, explore, make_scheduler, quiescent, run, step_cloud,
)
from ctrd.runtime_local import Update
from ctrd.syntax import AVA, BoolVal, CON, Identifier, Location, Plain


def drive(cfg, rules, max_steps=200, sched=None):
    sched = sched or make_scheduler("drain-fair")
    res = run(cfg, sched, max_steps)
    got = [e.rule for e in res.trace]
    for rule in rules:
        assert rule in got, (rule, got)
    return res


# ---------------------------------------------------------------------------
# enabled()

def test_enabled_empty_when_done():
    _, _, cfg = checked_config("servers 3; client 1 { unit @loc }")
    res = run(cfg, make_scheduler("drain-fair"), 10)
    assert enabled(res.config) == []
    assert quiescent(res.config)


def test_enabled_partial_delivery_choices():
    _, _, cfg = checked_config("servers 3; client 1 { ref@ava(nat 1 @ava, (ava,1)) }")
    res = run(cfg, make_scheduler("drain-fair"), 2)   # avaref + send
    (m,) = res.config.mailbox
    cfg2, _ = step_cloud(res.config, DeliverUpdate(m.key(), 0))
    choices = enabled(cfg2)
    delivers = [c for c in choices if isinstance(c, DeliverUpdate)]
    assert {c.server for c in delivers} == {1, 2}
    assert not any(isinstance(c, GcUpdate) for c in choices)


def test_enabled_con_read_per_server():
    src = """servers 3;
    client 1 { let c = ref@con(nat 1 @con, (con,1)) in !c }"""
    _, _, cfg = checked_config(src)
    cfg, _ = step_cloud(cfg, ClientStep(1))   # conref
    cfg, _ = step_cloud(cfg, ClientStep(1))   # let
    reads = [c for c in enabled(cfg) if isinstance(c, ConRead)]
    assert {c.server for c in reads} == {0, 1, 2}


def test_illegal_choice_rejected():
    _, _, cfg = checked_config("servers 3; client 1 { unit @loc }")
    with pytest.raises(IllegalChoice):
        step_cloud(cfg, ClientStep(1))


# ---------------------------------------------------------------------------
# distributed rules

def test_conref_atomic_across_servers():
    _, _, cfg = checked_config("servers 3; client 1 { ref@con(nat 1 @con, (con,1)) }")
    res = run(cfg, make_scheduler("drain-fair"), 10)
    assert res.status == "quiescent" and res.steps <= 3
    assert len(res.config.global_ids) == 1
    o = res.config.global_ids[Identifier(CON, 1)]
    nus = {s.seq[0] for s in res.config.servers}
    assert len(nus) == 1                        # one shared event at every head
    assert all(s.store[o] == Plain(NatMax(1), CON) for s in res.config.servers)


def test_conassign_updates_all_servers_in_one_step():
    src = "servers 3; client 1 { let c = ref@con(nat 1 @con, (con,1)) in c := nat 9 @con }"
    _, _, cfg = checked_config(src)
    res = drive(cfg, ["E-CONASSIGN"])
    o = res.config.global_ids[Identifier(CON, 1)]
    assert all(s.store[o] == Plain(NatMax(9), CON) for s in res.config.servers)
    heads = {s.seq[0] for s in res.config.servers}
    assert len(heads) == 1


def test_process_update_joins_into_server_state():
    # a stale write merges by join: the larger value is kept
    src = """servers 3;
    client 1 { let a = ref@ava(nat 7 @ava, (ava,1)) in a := nat 2 @ava }"""
    _, _, cfg = checked_config(src)
    res = drive(cfg, ["E-PROCESS-UPDATE", "E-GC"])
    assert res.status == "quiescent"
    o = res.config.global_ids[Identifier(AVA, 1)]
    assert all(s.store[o].raw == NatMax(7) for s in res.config.servers)
    assert res.config.mailbox == ()


def test_gc_only_after_full_delivery():
    _, _, cfg = checked_config("servers 3; client 1 { ref@ava(nat 1 @ava, (ava,1)) }")
    res = run(cfg, make_scheduler("drain-fair"), 2)
    (m,) = res.config.mailbox
    with pytest.raises(IllegalChoice):
        step_cloud(res.config, GcUpdate(m.key()))
    deliveries = 0
    cfg2 = res.config
    while True:
        delivers = [c for c in enabled(cfg2) if isinstance(c, DeliverUpdate)]
        if not delivers:
            break
        cfg2, _ = step_cloud(cfg2, delivers[0])
        deliveries += 1
    assert deliveries == 3                      # one per server, never more
    cfg2, entry = step_cloud(cfg2, GcUpdate(m.key()))
    assert entry.rule == "E-GC" and cfg2.mailbox == ()


def test_process_request_pushes_state_back():
    src = """servers 3;
    client 1 { let a = ref@ava(nat 1 @ava, (ava,1)) in !a }"""
    _, _, cfg = checked_config(src)
    res = drive(cfg, ["E-AVADEREF1", "E-PROCESS-REQUEST"])
    assert res.status == "quiescent"


def test_oacref_lands_locally_and_remotely():
    from ctrd.syntax import OAC
    _, _, cfg = checked_config("servers 3; client 1 { ref@oac(nat 1 @con, (oac,1)) }")
    res = drive(cfg, ["E-OACREF"])
    o = res.config.global_ids[Identifier(OAC, 1)]
    assert o in res.config.clients[1].store
    assert all(o in s.store for s in res.config.servers)


def test_await2_resolves_via_global_map():
    src = """servers 3;
    client 1 { ref@con(nat 1 @con, (con,1)) }
    client 2 { let p = await((con,1)) in !p }"""
    _, _, cfg = checked_config(src)
    res = drive(cfg, ["E-AWAIT2", "E-CONDEREF"])
    assert res.status == "quiescent"


def test_flexrd_con_merges_replicas():
    src = """servers 3;
    client 1 { let p = ref@oac(nat 1 @con, (oac,1)) in
               let w = flexwrite@ava(p, nat 6 @con) in
               flexread@con(p) }"""
    _, _, cfg = checked_config(src)
    res = drive(cfg, ["E-FLEXRD-CON"])
    assert res.status == "quiescent"
    final = res.config.clients[1].term.value
    assert final.raw == NatMax(6) and final.label == CON
    o = res.config.global_ids[list(res.config.global_ids)[0]]
    assert all(s.store[o].raw == NatMax(6) for s in res.config.servers)


# ---------------------------------------------------------------------------
# stepping is pure

def test_step_cloud_does_not_mutate_input():
    _, _, cfg = checked_config("servers 3; client 1 { ref@con(nat 1 @con, (con,1)) }")
    before = cfg.key()
    step_cloud(cfg, ClientStep(1))
    assert cfg.key() == before


# ---------------------------------------------------------------------------
# schedulers and runs

def test_run_deadlock_on_unresolvable_await():
    # (loc,9) is another client's local identifier: it never reaches the
    # global map, so client 2 blocks forever
    _, _, cfg = checked_config("""servers 3;
    client 1 { ref@loc(nat 1 @loc, (loc,9)) }
    client 2 { await((loc,9)) }""")
    res = run(cfg, make_scheduler("drain-fair"), 100)
    assert res.status == "deadlock"


def test_run_step_limit():
    _, _, cfg = checked_config("servers 3; client 1 { ref@con(nat 1 @con, (con,1)) }")
    res = run(cfg, make_scheduler("drain-fair"), 0)
    assert res.status == "step-limit"


def test_drain_fair_terminates_cross_client_await():
    src = """servers 3;
    client 1 { await((ava,1)) }
    client 2 { ref@ava(nat 1 @ava, (ava,1)) }"""
    _, _, cfg = checked_config(src)
    for name in ("drain-fair", "round-robin"):
        _, _, cfg = checked_config(src)
        res = run(cfg, make_scheduler(name), 200)
        assert res.status == "quiescent", name


def test_seeded_runs_reproducible():
    src = load(corpus_files("run")[2])
    for seed in (0, 42, 7):
        _, _, cfg_a = checked_config(src)
        _, _, cfg_b = checked_config(src)
        res_a = run(cfg_a, make_scheduler("random", seed), 500)
        res_b = run(cfg_b, make_scheduler("random", seed), 500)
        assert [e.rule for e in res_a.trace] == [e.rule for e in res_b.trace]
        assert res_a.config.key() == res_b.config.key()


def test_splitmix_reference_values():
    rng = SplitMix64(0)
    first = [rng.next() for _ in range(3)]
    rng2 = SplitMix64(0)
    assert first == [rng2.next() for _ in range(3)]
    assert all(0 <= x < 2 ** 64 for x in first)
    assert len(set(first)) == 3


# ---------------------------------------------------------------------------
# explore

def test_explore_single_deterministic_trace():
    src = "servers 3; client 1 { nat 1 @loc \\/ nat 2 @loc }"
    _, _, cfg = checked_config(src)
    s = explore(cfg, 10)
    assert s.traces == 1 and s.truncated == 0


def test_explore_depth_zero():
    _, _, cfg = checked_config("servers 3; client 1 { ref@con(nat 1 @con, (con,1)) }")
    s = explore(cfg, 0)
    assert s.traces == 1 and s.truncated == 1


# ---------------------------------------------------------------------------
# well-formedness

def test_wf_initial_and_final():
    for path in corpus_files("run"):
        _, _, cfg = checked_config(load(path))
        assert check_wf(cfg).ok, path.name
        res = run(cfg, make_scheduler("drain-fair"), 500)
        assert check_wf(res.config).ok, path.name


def test_wf_detects_corrupted_store():
    _, _, cfg = checked_config("servers 3; client 1 { ref@con(nat 1 @con, (con,1)) }")
    res = run(cfg, make_scheduler("drain-fair"), 10)
    bad = res.config.copy()
    o = bad.global_ids[Identifier(CON, 1)]
    bad.servers[0].store[o] = Plain(BoolVal(True), CON)   # Bool at a Lat cell
    report = check_wf(bad)
    assert not report.ok
    assert any("server 0" in p for p in report.problems)


def test_wf_detects_untyped_location():
    _, _, cfg = checked_config("servers 3; client 1 { unit @loc }")
    bad = cfg.copy()
    bad.servers[1].store[Location(9, 9, True)] = Plain(NatMax(1), CON)
    assert not check_wf(bad).ok
