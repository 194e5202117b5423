"""Small-step reduction local to one client.

A client is a residual term plus a local store, a FIFO message buffer, and a
local identifier map. Purely local rules execute here; rules needing servers
or the global identifier map are surfaced as cloud redexes for the
configuration-level stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

from .lattice import DomainMismatch, GSet, NatMax, lat_join, lat_leq, lat_lt, lat_meet
from .syntax import (
    App, Assign, AVA, Await, BoolVal, Clone, Closure, Deref, Duplicated,
    FlexRead, FlexWrite, Identifier, If, Label, LatOp, Let, Lit, Location,
    LOC, OAC, OrdOp, Plain, Proj, Record, RecordVal, Ref, Restrict, Term,
    UNIT, Var, is_value, label_join, raise_label,
)


class CtrdRuntimeError(Exception):
    """Interpreter fault: kind is one of DuplicatedIdentifier,
    DomainMismatch, Stuck, DanglingLocation."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


@dataclass(frozen=True)
class EventId:
    client: int
    n: int

    def __str__(self) -> str:
        return f"c{self.client}:{self.n}"

    def sort_key(self) -> tuple[int, int]:
        return (self.client, self.n)


# Where a read was served from: ("local", client) | ("server", idx) | ("servers",)
Source = tuple


@dataclass(frozen=True)
class Action:
    """One step's observable effect: the running effect label plus an
    optional rd/wr/ref operation record."""

    effect: Label
    kind: str = "eps"                      # "rd" | "wr" | "ref" | "eps"
    label: Optional[Label] = None          # consistency level of the operation
    event: Optional[EventId] = None
    location: Optional[Location] = None
    value: Optional[object] = None         # LabeledValue
    source: Optional[Source] = None
    snapshot: Optional[tuple[EventId, ...]] = None   # server event-log view
    literal_label: Optional[Label] = None  # as spelled by the rule, when it differs
    synced: bool = False                   # one atomic step across every server


def eps(effect: Label) -> Action:
    return Action(effect)


@dataclass(frozen=True)
class Update:
    """Buffered asynchronous write: carried until every server has seen it."""

    location: Location
    ident: Optional[Identifier]
    value: object                  # LabeledValue, unstamped payload
    origin: int
    delivered: frozenset[int]
    event: EventId
    effect: Label

    def key(self) -> tuple[int, int, int]:
        return (0, self.origin, self.event.n)


@dataclass(frozen=True)
class Req:
    """Request for a fresher state of an identified location."""

    ident: Identifier
    origin: int
    effect: Label
    event: EventId

    def key(self) -> tuple[int, int, int]:
        return (1, self.origin, self.event.n)


Message = Union[Update, Req]


@dataclass
class ClientState:
    cid: int
    term: Term
    store: dict[Location, object]          # Location -> LabeledValue
    buffer: tuple[Message, ...]
    idmap: dict[Identifier, Location]
    loc_counter: int = 0
    event_counter: int = 0

    def copy(self) -> "ClientState":
        return ClientState(self.cid, self.term, dict(self.store), self.buffer,
                           dict(self.idmap), self.loc_counter, self.event_counter)

    def fresh_location(self, remote: bool) -> Location:
        self.loc_counter += 1
        return Location(self.cid, self.loc_counter, remote)

    def fresh_event(self) -> EventId:
        self.event_counter += 1
        return EventId(self.cid, self.event_counter)

    def getkey(self, loc: Location) -> Optional[Identifier]:
        hits = [ident for ident, o in self.idmap.items() if o == loc]
        if len(hits) > 1:
            raise CtrdRuntimeError("Stuck", f"multiple identifiers map to {loc}")
        return hits[0] if hits else None

    def key(self):
        return (
            self.cid,
            self.term,
            tuple(sorted(self.store.items(), key=lambda kv: kv[0].sort_key())),
            self.buffer,
            tuple(sorted(self.idmap.items(), key=lambda kv: kv[0].sort_key())),
            self.loc_counter,
            self.event_counter,
        )


def initial_client(cid: int, term: Term) -> ClientState:
    return ClientState(cid, term, {}, (), {})


# ---------------------------------------------------------------------------
# Decomposition into evaluation context + redex

@dataclass
class Redex:
    term: Term
    effect: Label
    rebuild: Callable[[Term], Term]


@dataclass
class Blocked:
    ident: Identifier


Decomposition = Union[None, Blocked, Redex]   # None: the term is a value


def decompose(term: Term, idmap, global_ids) -> Decomposition:
    """Locate the leftmost-innermost evaluation position.

    Returns None for values and Blocked for an await whose identifier is
    known neither locally nor globally.
    """
    return _walk(term, LOC, lambda x: x, idmap, global_ids)


def _walk(t: Term, eff: Label, wrap, idmap, global_ids) -> Decomposition:
    if is_value(t):
        return None

    def sub(inner: Term, attr: str, eff2: Label = None) -> Decomposition:
        return _walk(inner, eff2 if eff2 is not None else eff,
                     lambda x: wrap(replace(t, **{attr: x})), idmap, global_ids)

    match t:
        case Var():
            return Redex(t, eff, wrap)
        case Restrict(term=inner, label=lab):
            if is_value(inner):
                return Redex(t, eff, wrap)
            return sub(inner, "term", label_join(eff, lab))
        case LatOp(left=a, right=b) | OrdOp(left=a, right=b):
            if not is_value(a):
                return sub(a, "left")
            if not is_value(b):
                return sub(b, "right")
            return Redex(t, eff, wrap)
        case App(fn=f, arg=a):
            if not is_value(f):
                return sub(f, "fn")
            if not is_value(a):
                return sub(a, "arg")
            return Redex(t, eff, wrap)
        case If(cond=c):
            if not is_value(c):
                return sub(c, "cond")
            return Redex(t, eff, wrap)
        case Ref(init=i):
            if not is_value(i):
                return sub(i, "init")
            return Redex(t, eff, wrap)
        case Await(ident=ident):
            if ident in idmap or ident in global_ids:
                return Redex(t, eff, wrap)
            return Blocked(ident)
        case Deref(term=inner):
            if not is_value(inner):
                return sub(inner, "term")
            return Redex(t, eff, wrap)
        case Assign(target=a, value=b):
            if not is_value(a):
                return sub(a, "target")
            if not is_value(b):
                return sub(b, "value")
            return Redex(t, eff, wrap)
        case FlexRead(term=inner):
            if not is_value(inner):
                return sub(inner, "term")
            return Redex(t, eff, wrap)
        case FlexWrite(target=a, value=b):
            if not is_value(a):
                return sub(a, "target")
            if not is_value(b):
                return sub(b, "value")
            return Redex(t, eff, wrap)
        case Record(fields=fs):
            for idx, (name, ft) in enumerate(fs):
                if not is_value(ft):
                    def wrap_field(x, idx=idx):
                        new = fs[:idx] + ((fs[idx][0], x),) + fs[idx + 1:]
                        return wrap(replace(t, fields=new))
                    return _walk(ft, eff, wrap_field, idmap, global_ids)
            return Redex(t, eff, wrap)
        case Proj(term=inner):
            if not is_value(inner):
                return sub(inner, "term")
            return Redex(t, eff, wrap)
        case Clone(term=inner):
            if not is_value(inner):
                return sub(inner, "term")
            return Redex(t, eff, wrap)
        case Let(bound=b):
            if not is_value(b):
                return sub(b, "bound")
            return Redex(t, eff, wrap)
    raise CtrdRuntimeError("Stuck", f"cannot decompose {t!r}")


# ---------------------------------------------------------------------------
# Substitution (call-by-value: substituted terms are closed values)

def subst(t: Term, name: str, value: Term) -> Term:
    match t:
        case Var(name=n):
            return value if n == name else t
        case Lit(value=Plain(raw=Closure() as c, label=lab)):
            if c.param == name:
                return t
            return Lit(Plain(replace(c, body=subst(c.body, name, value)), lab), pos=t.pos)
        case Lit():
            return t
        case Let(name=x, bound=b, body=body):
            nb = subst(b, name, value)
            nbody = body if x == name else subst(body, name, value)
            return replace(t, bound=nb, body=nbody)
        case Restrict(term=s) | Deref(term=s) | FlexRead(term=s) | Proj(term=s) | Clone(term=s):
            return replace(t, term=subst(s, name, value))
        case Ref(init=s):
            return replace(t, init=subst(s, name, value))
        case LatOp(left=a, right=b) | OrdOp(left=a, right=b):
            return replace(t, left=subst(a, name, value), right=subst(b, name, value))
        case App(fn=a, arg=b):
            return replace(t, fn=subst(a, name, value), arg=subst(b, name, value))
        case If(cond=c, then=x, els=y):
            return replace(t, cond=subst(c, name, value), then=subst(x, name, value),
                           els=subst(y, name, value))
        case Assign(target=a, value=b):
            return replace(t, target=subst(a, name, value), value=subst(b, name, value))
        case FlexWrite(target=a, value=b):
            return replace(t, target=subst(a, name, value), value=subst(b, name, value))
        case Record(fields=fs):
            return replace(t, fields=tuple((n, subst(ft, name, value)) for n, ft in fs))
        case Await():
            return t
    raise CtrdRuntimeError("Stuck", f"cannot substitute into {t!r}")


# ---------------------------------------------------------------------------
# Local stepping

@dataclass
class Stepped:
    client: ClientState
    action: Action
    rule: str


@dataclass
class NeedsCloud:
    redex: Term
    effect: Label
    rebuild: Callable[[Term], Term]


@dataclass
class BlockedOn:
    ident: Identifier


@dataclass
class Finished:
    value: object      # LabeledValue


LocalOutcome = Union[Stepped, NeedsCloud, BlockedOn, Finished]

_LAT_FN = {"join": lat_join, "meet": lat_meet}
_ORD_FN = {"le": lat_leq, "lt": lat_lt}


def merge_values(v1, v2):
    """Lattice join of two plain lattice values; labels join alongside."""
    if not (isinstance(v1, Plain) and isinstance(v2, Plain)):
        raise CtrdRuntimeError("DuplicatedIdentifier", "cannot merge a duplicated marker")
    if not isinstance(v1.raw, (NatMax, GSet)) or not isinstance(v2.raw, (NatMax, GSet)):
        raise CtrdRuntimeError("Stuck", f"cannot merge non-lattice values {v1} and {v2}")
    try:
        return Plain(lat_join(v1.raw, v2.raw), label_join(v1.label, v2.label))
    except DomainMismatch as e:
        raise CtrdRuntimeError("DomainMismatch", str(e)) from None


def _lat_args(r: Term, a: Term, b: Term):
    va, vb = a.value, b.value
    if not (isinstance(va, Plain) and isinstance(vb, Plain)):
        raise CtrdRuntimeError("DuplicatedIdentifier", "lattice operation on a duplicated marker")
    if not isinstance(va.raw, (NatMax, GSet)) or not isinstance(vb.raw, (NatMax, GSet)):
        raise CtrdRuntimeError("Stuck", f"lattice operation on non-lattice values in {r!r}")
    return va, vb


def step_local(client: ClientState, global_ids) -> LocalOutcome:
    """Fire the unique local rule at the client's redex, if one applies.

    The input client is never mutated; a stepped outcome carries a fresh
    state. Distributed redexes come back as NeedsCloud.
    """
    d = decompose(client.term, client.idmap, global_ids)
    if d is None:
        return Finished(client.term.value)
    if isinstance(d, Blocked):
        return BlockedOn(d.ident)

    r, eff, rebuild = d.term, d.effect, d.rebuild
    c = client.copy()

    def done(result: Term, action: Action, rule: str) -> Stepped:
        c.term = rebuild(result)
        return Stepped(c, action, rule)

    match r:
        case LatOp(op=op, left=a, right=b):
            va, vb = _lat_args(r, a, b)
            try:
                raw = _LAT_FN[op](va.raw, vb.raw)
            except DomainMismatch as e:
                raise CtrdRuntimeError("DomainMismatch", str(e)) from None
            return done(Lit(Plain(raw, label_join(va.label, vb.label))), eps(eff), "E-LATOP")

        case OrdOp(op=op, left=a, right=b):
            va, vb = _lat_args(r, a, b)
            try:
                res = _ORD_FN[op](va.raw, vb.raw)
            except DomainMismatch as e:
                raise CtrdRuntimeError("DomainMismatch", str(e)) from None
            return done(Lit(Plain(BoolVal(res), label_join(va.label, vb.label))), eps(eff), "E-ORDOP")

        case App(fn=Lit(value=vf), arg=Lit() as arg):
            if not (isinstance(vf, Plain) and isinstance(vf.raw, Closure)):
                raise CtrdRuntimeError("Stuck", "application of a non-closure value")
            body = subst(vf.raw.body, vf.raw.param, arg)
            # run under the closure's own label and join it onto the result
            return done(Restrict(body, vf.label), eps(eff), "E-BETA")

        case If(cond=Lit(value=vc), then=a, els=b):
            if not (isinstance(vc, Plain) and isinstance(vc.raw, BoolVal)):
                raise CtrdRuntimeError("Stuck", "non-boolean condition")
            branch = a if vc.raw.value else b
            # the taken branch runs under the guard's label
            return done(Restrict(branch, vc.label), eps(eff),
                        "E-IF-TRUE" if vc.raw.value else "E-IF-FALSE")

        case Restrict(term=Lit(value=v), label=lab):
            return done(Lit(raise_label(v, lab)), eps(eff), "E-RESTRICT")

        case Let(name=x, bound=Lit() as b, body=body):
            return done(subst(body, x, b), eps(eff), "E-LET")

        case Record(fields=fs, label=lab):
            vals = tuple(sorted((n, ft.value) for n, ft in fs))
            return done(Lit(Plain(RecordVal(vals), lab)), eps(eff), "E-RECORD")

        case Proj(term=Lit(value=v), name=name):
            if not (isinstance(v, Plain) and isinstance(v.raw, RecordVal)):
                raise CtrdRuntimeError("Stuck", "projection from a non-record value")
            for n, fv in v.raw.fields:
                if n == name:
                    return done(Lit(raise_label(fv, v.label)), eps(eff), "E-PROJ")
            raise CtrdRuntimeError("Stuck", f"record has no field {name!r}")

        case Ref(label=Label.LOC, init=Lit(value=v), ident=ident):
            if ident in c.idmap:
                return done(Lit(Duplicated(r)), eps(eff), "E-REF-DUP")
            o = c.fresh_location(remote=False)
            c.store[o] = raise_label(v, eff)
            c.idmap[ident] = o
            return done(Lit(Plain(o, LOC)), eps(eff), "E-LOCALREF")

        case Ref(label=Label.AVA, init=Lit(value=v), ident=ident):
            if ident in c.idmap:
                return done(Lit(Duplicated(r)), eps(eff), "E-REF-DUP")
            o = c.fresh_location(remote=True)
            nu = c.fresh_event()
            c.store[o] = raise_label(v, label_join(eff, AVA))
            c.idmap[ident] = o
            c.buffer = c.buffer + (Update(o, ident, v, c.cid, frozenset(), nu, eff),)
            act = Action(eff, "ref", AVA, nu, o, v)
            return done(Lit(Plain(o, AVA)), act, "E-AVAREF")

        case Await(ident=ident):
            if ident in c.idmap:
                o = c.idmap[ident]
                return done(Lit(Plain(o, ident.label)), eps(eff), "E-AWAIT1")
            return NeedsCloud(r, eff, rebuild)

        case Deref(term=Lit(value=v)):
            if isinstance(v, Duplicated):
                raise CtrdRuntimeError("DuplicatedIdentifier",
                                       "dereference of a duplicated marker")
            if not (isinstance(v, Plain) and isinstance(v.raw, Location)):
                raise CtrdRuntimeError("Stuck", "dereference of a non-location")
            o, lab = v.raw, v.label
            if lab == LOC:
                if o not in c.store:
                    raise CtrdRuntimeError("DanglingLocation", f"{o} not in the local store")
                return done(Lit(c.store[o]), eps(eff), "E-LOCALDEREF")
            if lab == AVA:
                if o in c.store:
                    result = raise_label(c.store[o], AVA)
                    ident = c.getkey(o)
                    if ident is None:
                        raise CtrdRuntimeError("Stuck", f"no identifier for {o}")
                    nu = c.fresh_event()
                    c.buffer = c.buffer + (Req(ident, c.cid, eff, nu),)
                    act = Action(eff, "rd", AVA, nu, o, result,
                                 source=("local", c.cid), snapshot=())
                    return done(Lit(result), act, "E-AVADEREF1")
                return NeedsCloud(r, eff, rebuild)
            if lab == OAC:
                raise CtrdRuntimeError("Stuck", "dereference of an oac location")
            return NeedsCloud(r, eff, rebuild)   # con: served by some replica

        case Assign(target=Lit(value=vt), value=Lit(value=vv)):
            if isinstance(vt, Duplicated):
                raise CtrdRuntimeError("DuplicatedIdentifier",
                                       "assignment through a duplicated marker")
            if not (isinstance(vt, Plain) and isinstance(vt.raw, Location)):
                raise CtrdRuntimeError("Stuck", "assignment to a non-location")
            o, lab = vt.raw, vt.label
            if lab == LOC:
                if o not in c.store:
                    raise CtrdRuntimeError("DanglingLocation", f"{o} not in the local store")
                c.store[o] = raise_label(vv, eff)
                return done(Lit(Plain(UNIT, LOC)), eps(eff), "E-LOCALASSIGN")
            if lab == AVA:
                if o in c.store:
                    merged = merge_values(c.store[o], vv)
                    ident = c.getkey(o)
                else:
                    merged = vv
                    ident = c.getkey(o)
                c.store[o] = raise_label(merged, label_join(eff, AVA))
                nu = c.fresh_event()
                c.buffer = c.buffer + (Update(o, ident, vv, c.cid, frozenset(), nu, eff),)
                act = Action(eff, "wr", AVA, nu, o, vv)
                return done(Lit(Plain(UNIT, AVA)), act, "E-AVAASSIGN")
            if lab == OAC:
                raise CtrdRuntimeError("Stuck", "assignment to an oac location")
            return NeedsCloud(r, eff, rebuild)   # con: atomic all-server write

        case FlexRead() | FlexWrite() | Clone() | Ref():
            return NeedsCloud(r, eff, rebuild)

        case Var(name=n):
            raise CtrdRuntimeError("Stuck", f"free variable {n!r} at runtime")

    raise CtrdRuntimeError("Stuck", f"no rule applies to {r!r}")
