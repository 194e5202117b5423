"""Distributed reduction over the whole configuration.

A configuration is a set of clients, a multiset of in-flight messages, a set
of replica servers, and a global identifier map. Consistent operations touch
every server in one atomic step (consensus is abstracted to that step);
available operations go through buffered update messages delivered one
server at a time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .clone import clone_step
from .runtime_local import (
    Action, Blocked, ClientState, CtrdRuntimeError, EventId, Message,
    NeedsCloud, Redex, Req, Stepped, Update, decompose, eps, initial_client,
    merge_values, step_local,
)
from .syntax import (
    Assign, AVA, Await, Clone, CON, Deref, Duplicated, FlexRead, FlexWrite,
    Identifier, Lit, Location, LOC, OAC, Plain, Program, Ref, Term, Type,
    UNIT, label_join, pretty, raise_label,
)
from .typecheck import (CheckError, TypeEnv, type_of_value,
                        typecheck as typecheck_term)


class IllegalChoice(Exception):
    """A scheduler picked a step whose rule premises do not hold."""


class StateSpaceLimit(Exception):
    """Exploration exceeded the configured state budget."""


# ---------------------------------------------------------------------------
# Servers and configurations

@dataclass
class Server:
    store: dict[Location, object]       # Location -> LabeledValue
    seq: tuple[EventId, ...]            # newest first

    def copy(self) -> "Server":
        return Server(dict(self.store), self.seq)

    def key(self):
        return (tuple(sorted(self.store.items(), key=lambda kv: kv[0].sort_key())),
                self.seq)


@dataclass
class CloudConfig:
    clients: dict[int, ClientState]
    mailbox: tuple[Message, ...]
    servers: list[Server]
    global_ids: dict[Identifier, Location]
    store_typing: dict[Location, Type]
    id_typing: dict[Identifier, Type]

    def copy(self) -> "CloudConfig":
        return CloudConfig(
            {cid: c.copy() for cid, c in self.clients.items()},
            self.mailbox,
            [s.copy() for s in self.servers],
            dict(self.global_ids),
            dict(self.store_typing),
            self.id_typing,      # static; shared
        )

    def key(self):
        return (
            tuple(self.clients[cid].key() for cid in sorted(self.clients)),
            tuple(sorted((m.key(), m) for m in self.mailbox)),
            tuple(s.key() for s in self.servers),
            tuple(sorted(((i.sort_key(), i), o)
                         for i, o in self.global_ids.items())),
            tuple(sorted(((o.sort_key(), o), t)
                         for o, t in self.store_typing.items())),
        )


def initial_config(program: Program, id_types: dict[Identifier, Type],
                   servers: Optional[int] = None) -> CloudConfig:
    n = servers if servers is not None else program.servers
    return CloudConfig(
        clients={cid: initial_client(cid, term) for cid, term in program.clients},
        mailbox=(),
        servers=[Server({}, ()) for _ in range(n)],
        global_ids={},
        store_typing={},
        id_typing=dict(id_types),
    )


# ---------------------------------------------------------------------------
# Step choices

@dataclass(frozen=True)
class ClientStep:
    client: int

    def sort_key(self):
        return (0, self.client, 0, 0)


@dataclass(frozen=True)
class AwaitResolve:
    client: int

    def sort_key(self):
        return (1, self.client, 0, 0)


@dataclass(frozen=True)
class ConRead:
    client: int
    server: int

    def sort_key(self):
        return (2, self.client, self.server, 0)


@dataclass(frozen=True)
class AvaRemoteRead:
    client: int
    server: int

    def sort_key(self):
        return (3, self.client, self.server, 0)


@dataclass(frozen=True)
class Send:
    client: int

    def sort_key(self):
        return (4, self.client, 0, 0)


@dataclass(frozen=True)
class DeliverUpdate:
    message: tuple      # message key
    server: int

    def sort_key(self):
        return (5,) + self.message + (self.server,)


@dataclass(frozen=True)
class ProcessReq:
    message: tuple
    server: int

    def sort_key(self):
        return (6,) + self.message + (self.server,)


@dataclass(frozen=True)
class GcUpdate:
    message: tuple

    def sort_key(self):
        return (7,) + self.message + (0,)


StepChoice = Union[ClientStep, AwaitResolve, ConRead, AvaRemoteRead, Send,
                   DeliverUpdate, ProcessReq, GcUpdate]

CATEGORY_COUNT = 8


def _find_message(config: CloudConfig, key: tuple) -> Optional[Message]:
    for m in config.mailbox:
        if m.key() == key:
            return m
    return None


def enabled(config: CloudConfig) -> list[StepChoice]:
    """Every rule instance whose premises hold, deterministically ordered."""
    out: list[StepChoice] = []
    for cid in sorted(config.clients):
        client = config.clients[cid]
        if client.buffer:
            out.append(Send(cid))
        d = decompose(client.term, client.idmap, config.global_ids)
        if d is None or isinstance(d, Blocked):
            continue
        r = d.term
        match r:
            case Await(ident=ident):
                if ident in client.idmap:
                    out.append(ClientStep(cid))
                elif ident in config.global_ids:
                    out.append(AwaitResolve(cid))
            case Deref(term=Lit(value=Plain(raw=Location() as o, label=lab))):
                if lab == CON:
                    out.extend(ConRead(cid, i) for i, s in enumerate(config.servers)
                               if o in s.store)
                elif lab == AVA and o not in client.store:
                    out.extend(AvaRemoteRead(cid, i) for i, s in enumerate(config.servers)
                               if o in s.store)
                else:
                    out.append(ClientStep(cid))
            case FlexRead(term=Lit(value=Plain(raw=Location() as o, label=OAC_)), label=lab) if OAC_ == OAC:
                if lab == AVA and o not in client.store:
                    out.extend(AvaRemoteRead(cid, i) for i, s in enumerate(config.servers)
                               if o in s.store)
                else:
                    out.append(ClientStep(cid))
            case _:
                out.append(ClientStep(cid))
    all_servers = frozenset(range(len(config.servers)))
    for m in config.mailbox:
        if isinstance(m, Update):
            if m.delivered == all_servers:
                out.append(GcUpdate(m.key()))
            else:
                out.extend(DeliverUpdate(m.key(), r)
                           for r in sorted(all_servers - m.delivered))
        else:
            ident = m.ident
            if ident in config.global_ids and m.origin in config.clients:
                o = config.global_ids[ident]
                out.extend(ProcessReq(m.key(), r)
                           for r, s in enumerate(config.servers) if o in s.store)
    return sorted(out, key=lambda c: c.sort_key())


# ---------------------------------------------------------------------------
# Trace entries

@dataclass
class TraceEntry:
    step: int
    rule: str
    action: Action
    client: Optional[int] = None
    server: Optional[int] = None
    node_count: Optional[int] = None


def _common_seq(servers: list[Server]) -> tuple[EventId, ...]:
    """Events present in every server's log, deterministically ordered."""
    if not servers:
        return ()
    common = set(servers[0].seq)
    for s in servers[1:]:
        common &= set(s.seq)
    return tuple(sorted(common, key=lambda e: e.sort_key()))


def _sync_write(config: CloudConfig, o: Location, v, nu: EventId) -> None:
    for s in config.servers:
        s.store[o] = v
        s.seq = (nu,) + s.seq


# ---------------------------------------------------------------------------
# Configuration stepping

def step_cloud(config: CloudConfig, choice: StepChoice) -> tuple[CloudConfig, TraceEntry]:
    """Apply one enabled rule instance; returns the new configuration and
    the trace record of what fired."""
    cfg = config.copy()
    match choice:
        case ClientStep(client=cid):
            return _client_step(cfg, cid)
        case AwaitResolve(client=cid):
            return _await_resolve(cfg, cid)
        case ConRead(client=cid, server=r):
            return _con_read(cfg, cid, r)
        case AvaRemoteRead(client=cid, server=r):
            return _ava_remote_read(cfg, cid, r)
        case Send(client=cid):
            return _send(cfg, cid)
        case DeliverUpdate(message=key, server=r):
            return _deliver_update(cfg, key, r)
        case ProcessReq(message=key, server=r):
            return _process_req(cfg, key, r)
        case GcUpdate(message=key):
            return _gc_update(cfg, key)
    raise IllegalChoice(f"unknown choice {choice!r}")


def _client_step(cfg: CloudConfig, cid: int) -> tuple[CloudConfig, TraceEntry]:
    client = cfg.clients[cid]
    before_ids = set(client.idmap)
    out = step_local(client, cfg.global_ids)
    if isinstance(out, Stepped):
        cfg.clients[cid] = out.client
        # new identifier bindings are fresh allocations; record their typing
        for ident in set(out.client.idmap) - before_ids:
            o = out.client.idmap[ident]
            if ident in cfg.id_typing:
                cfg.store_typing.setdefault(o, cfg.id_typing[ident])
        return cfg, TraceEntry(0, out.rule, out.action, client=cid)
    if isinstance(out, NeedsCloud):
        return _cloud_redex(cfg, cid, out)
    raise IllegalChoice(f"client {cid} has no enabled local step")


def _cloud_redex(cfg: CloudConfig, cid: int, need: NeedsCloud) -> tuple[CloudConfig, TraceEntry]:
    client = cfg.clients[cid].copy()
    cfg.clients[cid] = client
    r, eff, rebuild = need.redex, need.effect, need.rebuild
    pre_common = _common_seq(cfg.servers)

    def finish(result: Term, action: Action, rule: str,
               node_count: Optional[int] = None) -> tuple[CloudConfig, TraceEntry]:
        client.term = rebuild(result)
        return cfg, TraceEntry(0, rule, action, client=cid, node_count=node_count)

    match r:
        case Ref(label=lab, init=Lit(value=v), ident=ident) if lab in (CON, OAC):
            if ident in cfg.global_ids:
                return finish(Lit(Duplicated(r)), eps(eff), "E-CONREF-DUP")
            o = client.fresh_location(remote=True)
            nu = client.fresh_event()
            stamped = raise_label(v, label_join(eff, lab))
            _sync_write(cfg, o, stamped, nu)
            cfg.global_ids[ident] = o
            if ident in cfg.id_typing:
                cfg.store_typing.setdefault(o, cfg.id_typing[ident])
            act = Action(eff, "ref", lab, nu, o, v, snapshot=pre_common, synced=True)
            if lab == OAC:
                # on-demand refs also land in the local store for fast reads
                client.store[o] = stamped
                client.idmap[ident] = o
                return finish(Lit(Plain(o, OAC)), act, "E-OACREF")
            return finish(Lit(Plain(o, CON)), act, "E-CONREF")

        case Assign(target=Lit(value=Plain(raw=Location() as o, label=lab)),
                    value=Lit(value=v)) if lab == CON:
            nu = client.fresh_event()
            stamped = raise_label(v, label_join(eff, CON))
            _sync_write(cfg, o, stamped, nu)
            act = Action(eff, "wr", CON, nu, o, v, snapshot=pre_common, synced=True)
            return finish(Lit(Plain(UNIT, CON)), act, "E-CONASSIGN")

        case FlexWrite(label=lab, target=Lit(value=tv), value=Lit(value=v)):
            if isinstance(tv, Duplicated):
                raise CtrdRuntimeError("DuplicatedIdentifier",
                                       "flexwrite through a duplicated marker")
            o = tv.raw
            if not isinstance(o, Location):
                raise CtrdRuntimeError("Stuck", "flexwrite to a non-location")
            nu = client.fresh_event()
            if lab == AVA:
                if o in client.store:
                    merged = merge_values(client.store[o], v)
                else:
                    merged = v
                client.store[o] = raise_label(merged, label_join(eff, AVA))
                ident = client.getkey(o)
                client.buffer = client.buffer + (Update(o, ident, v, cid, frozenset(), nu, eff),)
                # the rule spells the action label con; semantically this is
                # the buffered (available) write
                act = Action(eff, "wr", AVA, nu, o, v, literal_label=CON)
                return finish(Lit(Plain(UNIT, AVA)), act, "E-FLEXWRT-AVA")
            stamped = raise_label(v, label_join(eff, CON))
            client.store[o] = stamped
            _sync_write(cfg, o, stamped, nu)
            act = Action(eff, "wr", CON, nu, o, v, snapshot=pre_common, synced=True)
            return finish(Lit(Plain(UNIT, CON)), act, "E-FLEXWRT-CON")

        case FlexRead(label=lab, term=Lit(value=tv)):
            if isinstance(tv, Duplicated):
                raise CtrdRuntimeError("DuplicatedIdentifier",
                                       "flexread through a duplicated marker")
            o = tv.raw
            if not isinstance(o, Location):
                raise CtrdRuntimeError("Stuck", "flexread of a non-location")
            nu = client.fresh_event()
            if lab == AVA:
                if o not in client.store:
                    raise IllegalChoice("remote flexread must pick a server")
                result = raise_label(client.store[o], AVA)
                act = Action(eff, "rd", AVA, nu, o, result,
                             source=("local", cid), snapshot=())
                return finish(Lit(result), act, "E-FLEXRD-AVA")
            # consistent read: merge every replica, install the merged state
            states = [s.store[o] for s in cfg.servers if o in s.store]
            if len(states) != len(cfg.servers):
                raise CtrdRuntimeError("DanglingLocation", f"{o} missing from some server")
            merged = states[0]
            for v2 in states[1:]:
                merged = merge_values(merged, v2)
            for s in cfg.servers:
                s.store[o] = merged
            client.store[o] = merged
            result = Plain(merged.raw, CON)
            act = Action(eff, "rd", CON, nu, o, result,
                         source=("servers",), snapshot=pre_common)
            return finish(Lit(result), act, "E-FLEXRD-CON")

        case Clone(label=lab, term=Lit(value=tv), ident=ident):
            if lab != CON:
                raise CtrdRuntimeError("Stuck", f"clone label {lab} unsupported")
            if isinstance(tv, Duplicated) or not isinstance(tv.raw, Location):
                raise CtrdRuntimeError("Stuck", "clone of a non-location")
            result, act, nodes = clone_step(cfg, client, tv.raw, ident, eff, pre_common)
            if result is None:
                return finish(Lit(Duplicated(r)), eps(eff), "E-CONREF-DUP")
            return finish(Lit(result), act, "E-CLONE", node_count=nodes)

        case Await(ident=ident):
            raise IllegalChoice("await resolution is its own choice")

    raise IllegalChoice(f"no cloud rule applies to {pretty(r)}")


def _await_resolve(cfg: CloudConfig, cid: int) -> tuple[CloudConfig, TraceEntry]:
    client = cfg.clients[cid].copy()
    cfg.clients[cid] = client
    d = decompose(client.term, client.idmap, cfg.global_ids)
    if not isinstance(d, Redex) or not isinstance(d.term, Await):
        raise IllegalChoice(f"client {cid} is not at an await")
    ident = d.term.ident
    if ident not in cfg.global_ids:
        raise IllegalChoice(f"{ident} is not globally bound")
    o = cfg.global_ids[ident]
    client.idmap[ident] = o
    client.term = d.rebuild(Lit(Plain(o, ident.label)))
    return cfg, TraceEntry(0, "E-AWAIT2", eps(d.effect), client=cid)


def _read_redex(cfg: CloudConfig, cid: int):
    client = cfg.clients[cid].copy()
    cfg.clients[cid] = client
    d = decompose(client.term, client.idmap, cfg.global_ids)
    if not isinstance(d, Redex):
        raise IllegalChoice(f"client {cid} has no redex")
    return client, d


def _con_read(cfg: CloudConfig, cid: int, r: int) -> tuple[CloudConfig, TraceEntry]:
    client, d = _read_redex(cfg, cid)
    match d.term:
        case Deref(term=Lit(value=Plain(raw=Location() as o, label=lab))) if lab == CON:
            server = cfg.servers[r]
            if o not in server.store:
                raise IllegalChoice(f"server {r} does not hold {o}")
            result = raise_label(server.store[o], CON)
            nu = client.fresh_event()
            act = Action(d.effect, "rd", CON, nu, o, result,
                         source=("server", r), snapshot=server.seq)
            client.term = d.rebuild(Lit(result))
            return cfg, TraceEntry(0, "E-CONDEREF", act, client=cid, server=r)
    raise IllegalChoice(f"client {cid} is not at a consistent read")


def _ava_remote_read(cfg: CloudConfig, cid: int, r: int) -> tuple[CloudConfig, TraceEntry]:
    client, d = _read_redex(cfg, cid)
    server = cfg.servers[r]
    match d.term:
        case Deref(term=Lit(value=Plain(raw=Location() as o, label=lab))) if lab == AVA:
            if o in client.store or o not in server.store:
                raise IllegalChoice("remote available read premises violated")
            v = server.store[o]
            client.store[o] = v
            result = raise_label(v, AVA)
            nu = client.fresh_event()
            act = Action(d.effect, "rd", AVA, nu, o, result,
                         source=("server", r), snapshot=server.seq)
            client.term = d.rebuild(Lit(result))
            return cfg, TraceEntry(0, "E-AVADEREF2", act, client=cid, server=r)
        case FlexRead(label=lab, term=Lit(value=Plain(raw=Location() as o))) if lab == AVA:
            if o in client.store or o not in server.store:
                raise IllegalChoice("remote flexread premises violated")
            v = server.store[o]
            client.store[o] = v
            result = raise_label(v, AVA)
            nu = client.fresh_event()
            act = Action(d.effect, "rd", AVA, nu, o, result,
                         source=("server", r), snapshot=server.seq)
            client.term = d.rebuild(Lit(result))
            return cfg, TraceEntry(0, "E-FLEXRD-AVA", act, client=cid, server=r)
    raise IllegalChoice(f"client {cid} is not at an available remote read")


def _send(cfg: CloudConfig, cid: int) -> tuple[CloudConfig, TraceEntry]:
    client = cfg.clients[cid].copy()
    cfg.clients[cid] = client
    if not client.buffer:
        raise IllegalChoice(f"client {cid} has an empty buffer")
    m, rest = client.buffer[0], client.buffer[1:]
    client.buffer = rest
    cfg.mailbox = cfg.mailbox + (m,)
    return cfg, TraceEntry(0, "E-SEND", eps(LOC), client=cid)


def _deliver_update(cfg: CloudConfig, key: tuple, r: int) -> tuple[CloudConfig, TraceEntry]:
    m = _find_message(cfg, key)
    if not isinstance(m, Update) or r in m.delivered:
        raise IllegalChoice(f"update delivery premises violated for {key}")
    server = cfg.servers[r]
    pre_seq = server.seq
    if m.ident is not None and m.ident not in cfg.global_ids:
        cfg.global_ids[m.ident] = m.location
        target = m.location
    elif m.ident is not None:
        target = cfg.global_ids[m.ident]
    else:
        target = m.location
    if target not in server.store:
        server.store[target] = raise_label(m.value, m.effect)
    else:
        server.store[target] = raise_label(merge_values(m.value, server.store[target]),
                                           m.effect)
    server.seq = (m.event,) + server.seq
    new_m = Update(m.location, m.ident, m.value, m.origin,
                   m.delivered | {r}, m.event, m.effect)
    cfg.mailbox = tuple(new_m if x is m else x for x in cfg.mailbox)
    act = Action(m.effect, "wr", AVA, m.event, target, m.value, snapshot=pre_seq)
    return cfg, TraceEntry(0, "E-PROCESS-UPDATE", act, server=r)


def _process_req(cfg: CloudConfig, key: tuple, r: int) -> tuple[CloudConfig, TraceEntry]:
    m = _find_message(cfg, key)
    if not isinstance(m, Req) or m.ident not in cfg.global_ids:
        raise IllegalChoice(f"request premises violated for {key}")
    o = cfg.global_ids[m.ident]
    server = cfg.servers[r]
    if o not in server.store:
        raise IllegalChoice(f"server {r} does not hold {o}")
    client = cfg.clients[m.origin].copy()
    cfg.clients[m.origin] = client
    local = client.idmap.get(m.ident)
    if local is None:
        raise IllegalChoice(f"requester no longer maps {m.ident}")
    client.store[local] = raise_label(server.store[o], m.effect)
    cfg.mailbox = tuple(x for x in cfg.mailbox if x is not m)
    return cfg, TraceEntry(0, "E-PROCESS-REQUEST", eps(m.effect),
                           client=m.origin, server=r)


def _gc_update(cfg: CloudConfig, key: tuple) -> tuple[CloudConfig, TraceEntry]:
    m = _find_message(cfg, key)
    if not isinstance(m, Update) or m.delivered != frozenset(range(len(cfg.servers))):
        raise IllegalChoice(f"garbage collection premises violated for {key}")
    cfg.mailbox = tuple(x for x in cfg.mailbox if x is not m)
    return cfg, TraceEntry(0, "E-GC", eps(LOC))


# ---------------------------------------------------------------------------
# Client status and quiescence

def client_status(config: CloudConfig, cid: int) -> str:
    client = config.clients[cid]
    d = decompose(client.term, client.idmap, config.global_ids)
    if d is None:
        return "done"
    if isinstance(d, Blocked):
        return "blocked"
    return "ready"


def quiescent(config: CloudConfig) -> bool:
    return not enabled(config) and all(
        client_status(config, cid) == "done" for cid in config.clients
    )


# ---------------------------------------------------------------------------
# Schedulers

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_M1 = 0xBF58476D1CE4E5B9
_SPLITMIX_M2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny 64-bit generator with documented constants so traces are
    reproducible across implementations."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + _SPLITMIX_GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _SPLITMIX_M1) & _MASK64
        z = ((z ^ (z >> 27)) * _SPLITMIX_M2) & _MASK64
        return z ^ (z >> 31)


class RandomScheduler:
    name = "random"

    def __init__(self, seed: int):
        self.rng = SplitMix64(seed)

    def pick(self, choices: list[StepChoice]) -> StepChoice:
        return choices[self.rng.next() % len(choices)]


class _CategoryFair:
    """Rotates over choice categories so every persistently enabled message
    step is eventually taken."""

    def __init__(self, rotate_within: bool):
        self.cat = 0
        self.rotate_within = rotate_within
        self.counters = [0] * CATEGORY_COUNT

    def pick(self, choices: list[StepChoice]) -> StepChoice:
        by_cat: dict[int, list[StepChoice]] = {}
        for ch in choices:
            by_cat.setdefault(ch.sort_key()[0], []).append(ch)
        for off in range(CATEGORY_COUNT):
            cat = (self.cat + off) % CATEGORY_COUNT
            if cat in by_cat:
                self.cat = (cat + 1) % CATEGORY_COUNT
                group = by_cat[cat]
                if self.rotate_within:
                    idx = self.counters[cat] % len(group)
                    self.counters[cat] += 1
                    return group[idx]
                return group[0]
        raise IllegalChoice("no choices to pick from")


class RoundRobinScheduler(_CategoryFair):
    name = "round-robin"

    def __init__(self):
        super().__init__(rotate_within=False)


class DrainFairScheduler(_CategoryFair):
    name = "drain-fair"

    def __init__(self):
        super().__init__(rotate_within=True)


def make_scheduler(name: str, seed: int = 0):
    if name == "random":
        return RandomScheduler(seed)
    if name == "round-robin":
        return RoundRobinScheduler()
    if name == "drain-fair":
        return DrainFairScheduler()
    raise ValueError(f"unknown scheduler {name!r}")


# ---------------------------------------------------------------------------
# Running and exploring

@dataclass
class RunResult:
    config: CloudConfig
    trace: list[TraceEntry]
    status: str            # "quiescent" | "deadlock" | "step-limit"
    steps: int


def run(config: CloudConfig, scheduler, max_steps: int = 10_000,
        wf_each_step: bool = False) -> RunResult:
    """Drive the configuration until quiescence, deadlock, or the step cap."""
    trace: list[TraceEntry] = []
    cfg = config
    for step in range(max_steps):
        choices = enabled(cfg)
        if not choices:
            blocked = any(client_status(cfg, cid) == "blocked" for cid in cfg.clients)
            return RunResult(cfg, trace, "deadlock" if blocked else "quiescent", step)
        cfg, entry = step_cloud(cfg, scheduler.pick(choices))
        entry.step = step
        trace.append(entry)
        if wf_each_step:
            report = check_wf(cfg)
            if not report.ok:
                raise CtrdRuntimeError("Stuck", f"well-formedness lost: {report.problems[0]}")
    if enabled(cfg):
        return RunResult(cfg, trace, "step-limit", max_steps)
    blocked = any(client_status(cfg, cid) == "blocked" for cid in cfg.clients)
    return RunResult(cfg, trace, "deadlock" if blocked else "quiescent", max_steps)


@dataclass
class ExploreSummary:
    states: int = 0
    traces: int = 0
    truncated: int = 0
    wf_violations: list[str] = field(default_factory=list)


def explore(config: CloudConfig, max_depth: int,
            on_trace: Optional[Callable] = None,
            check_wf_each: bool = False,
            max_states: Optional[int] = None) -> ExploreSummary:
    """Exhaustive interleaving exploration to a depth bound.

    States are deduplicated on (configuration, abstract execution): two
    prefixes landing on the same pair have identical futures for every
    checker, so one representative subtree suffices. on_trace receives each
    maximal trace with its final configuration and a truncation flag.
    """
    from .abstract_exec import AbstractExecution, fold_entry

    if max_states is None:
        max_states = int(os.environ.get("CTRD_MAX_STATES", "500000"))
    summary = ExploreSummary()
    seen: set = set()

    def visit(cfg: CloudConfig, exec_: AbstractExecution, trace: tuple, depth: int) -> None:
        key = (cfg.key(), exec_.key())
        if key in seen:
            return
        seen.add(key)
        summary.states += 1
        if summary.states > max_states:
            raise StateSpaceLimit(f"more than {max_states} states")
        if check_wf_each:
            report = check_wf(cfg)
            if not report.ok:
                summary.wf_violations.extend(report.problems)
        choices = enabled(cfg)
        if not choices or depth >= max_depth:
            truncated = bool(choices)
            summary.traces += 1
            summary.truncated += int(truncated)
            if on_trace is not None:
                on_trace(list(trace), cfg, truncated)
            return
        for choice in choices:
            nxt, entry = step_cloud(cfg, choice)
            entry.step = depth
            nxt_exec = exec_.copy()
            fold_entry(nxt_exec, entry)
            visit(nxt, nxt_exec, trace + (entry,), depth + 1)

    visit(config, AbstractExecution(), (), 0)
    return summary


# ---------------------------------------------------------------------------
# Well-formedness (executable subject-reduction checks)

@dataclass
class WfReport:
    ok: bool
    problems: list[str]


def check_wf(config: CloudConfig) -> WfReport:
    """Re-typecheck every store, identifier map, buffer, and residual term
    against the store and identifier typings."""
    problems: list[str] = []
    sigma, ids = config.store_typing, config.id_typing
    env = TypeEnv(gamma={}, sigma=sigma, ids=ids, effect=LOC, runtime=True)

    def check_store(owner: str, store: dict) -> None:
        from .syntax import type_join_label
        for o in sorted(store, key=lambda loc: loc.sort_key()):
            if o not in sigma:
                problems.append(f"{owner}: {o} missing from the store typing")
                continue
            want = sigma[o]
            if want.label == OAC:
                # available writes stamp oac cells up to ava; the oac label
                # is the access discipline, not a bound on the value stamp
                want = type_join_label(want, AVA)
            try:
                t = type_of_value(env, store[o], None)
            except CheckError as e:
                problems.append(f"{owner}: value at {o} untypable: {e.message}")
                continue
            if not _subtype(t, want):
                problems.append(
                    f"{owner}: value at {o} has type {_pt(t)}, store typing {_pt(sigma[o])}")

    for cid in sorted(config.clients):
        client = config.clients[cid]
        check_store(f"client {cid} store", client.store)
        for ident, o in sorted(client.idmap.items(), key=lambda kv: kv[0].sort_key()):
            if ident not in ids:
                problems.append(f"client {cid}: {ident} missing from the identifier typing")
            elif o not in sigma:
                problems.append(f"client {cid}: {ident} maps to untyped {o}")
            elif not _subtype(sigma[o], ids[ident]):
                problems.append(
                    f"client {cid}: {ident} maps to {o} of type {_pt(sigma[o])}, "
                    f"identifier typing {_pt(ids[ident])}")
        for m in client.buffer:
            _check_message(config, m, f"client {cid} buffer", problems)
        try:
            typecheck_term(env, client.term)
        except CheckError as e:
            problems.append(f"client {cid}: residual term untypable: {e.message}")

    for i, server in enumerate(config.servers):
        check_store(f"server {i}", server.store)

    for m in config.mailbox:
        _check_message(config, m, "mailbox", problems)

    for ident, o in sorted(config.global_ids.items(), key=lambda kv: kv[0].sort_key()):
        if o not in sigma:
            problems.append(f"global map: {ident} maps to untyped {o}")
        elif ident not in ids:
            problems.append(f"global map: {ident} missing from the identifier typing")
        elif not _subtype(sigma[o], ids[ident]):
            problems.append(f"global map: {ident} at {o}: {_pt(sigma[o])} vs {_pt(ids[ident])}")

    return WfReport(not problems, problems)


def _check_message(config: CloudConfig, m: Message, where: str, problems: list[str]) -> None:
    if isinstance(m, Req):
        if m.ident not in config.id_typing:
            problems.append(f"{where}: request for untyped {m.ident}")
        return
    env = TypeEnv(gamma={}, sigma=config.store_typing, ids=config.id_typing,
                  effect=LOC, runtime=True)
    try:
        tv = type_of_value(env, m.value, None)
    except CheckError as e:
        problems.append(f"{where}: update payload untypable: {e.message}")
        return
    target = config.id_typing.get(m.ident) if m.ident is not None else \
        config.store_typing.get(m.location)
    if target is None:
        problems.append(f"{where}: update has no target typing")
        return
    from .syntax import label_of, type_join_label
    if not _subtype(type_join_label(tv, label_of(target)), target):
        problems.append(f"{where}: update payload {_pt(tv)} incompatible with {_pt(target)}")


def _subtype(a: Type, b: Type) -> bool:
    from .syntax import subtype
    return subtype(a, b)


def _pt(t: Type) -> str:
    from .syntax import pretty_type
    return pretty_type(t)
