"""Reference graphs and the one-step clone upload.

Building a linked structure out of consistent references costs one
all-server synchronization per node. Clone builds the graph locally and
uploads the whole reachable graph in a single synchronization step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .runtime_local import Action, ClientState, CtrdRuntimeError
from .syntax import (
    Closure, CON, Duplicated, Identifier, Label, Lit, Location, Plain,
    RecordVal, Term, label_join, raise_label, value_locations,
)
from .typecheck import upgrade


@dataclass
class ReferenceGraph:
    """Locations reachable from a root through stored values."""

    root: Location
    nodes: dict[Location, object]              # Location -> LabeledValue
    edges: dict[Location, frozenset[Location]]

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return sum(len(es) for es in self.edges.values())


def reachable_graph(root: Location, store: dict) -> ReferenceGraph:
    """Transitive closure of location occurrence starting at root.

    Cycles are fine; a location mentioned by a stored value but absent from
    the store is a DanglingLocation fault.
    """
    if root not in store:
        raise CtrdRuntimeError("DanglingLocation", f"clone root {root} not in the local store")
    nodes: dict[Location, object] = {}
    edges: dict[Location, frozenset[Location]] = {}
    todo = [root]
    while todo:
        o = todo.pop()
        if o in nodes:
            continue
        if o not in store:
            raise CtrdRuntimeError("DanglingLocation", f"{o} referenced but not in the local store")
        v = store[o]
        nodes[o] = v
        out = value_locations(v)
        edges[o] = out
        todo.extend(sorted(out - nodes.keys(), key=lambda loc: loc.sort_key()))
    return ReferenceGraph(root, nodes, edges)


def rewrite_value(v, mapping: dict[Location, Location]):
    """Replace location occurrences per mapping, through records and
    abstraction bodies."""
    if isinstance(v, Duplicated):
        return Duplicated(rewrite_term(v.inner, mapping))
    raw = v.raw
    if isinstance(raw, Location):
        return Plain(mapping.get(raw, raw), v.label)
    if isinstance(raw, RecordVal):
        return Plain(RecordVal(tuple((n, rewrite_value(fv, mapping)) for n, fv in raw.fields)),
                     v.label)
    if isinstance(raw, Closure):
        return Plain(replace(raw, body=rewrite_term(raw.body, mapping)), v.label)
    return v


_TERM_FIELDS = ("term", "init", "left", "right", "fn", "arg", "cond", "then",
                "els", "target", "value", "bound", "body")


def rewrite_term(t: Term, mapping: dict[Location, Location]) -> Term:
    """Structural map over a term rewriting embedded location values."""
    import dataclasses

    if isinstance(t, Lit):
        return Lit(rewrite_value(t.value, mapping), pos=t.pos)
    out = {}
    for f in dataclasses.fields(t):
        val = getattr(t, f.name)
        if f.name == "fields":   # record term
            out[f.name] = tuple((n, rewrite_term(ft, mapping)) for n, ft in val)
        elif f.name in _TERM_FIELDS and val is not None and not isinstance(val, (str,)):
            out[f.name] = rewrite_term(val, mapping)
    return dataclasses.replace(t, **out) if out else t


def clone_step(config, client: ClientState, root: Location,
               ident: Identifier, effect: Label, pre_common: tuple):
    """Upload the whole reachable graph in one atomic all-server step.

    Allocates a fresh remote location per node, rewrites intra-graph
    location occurrences, stamps every node with the effect joined with
    con, and prepends one shared event to every server log. Mutates the
    passed config/client copies in place. Returns (result value, action,
    node count); a taken identifier yields None for the action.
    """
    if ident in config.global_ids:
        return None, None, None     # duplicated-creation path, caller handles
    graph = reachable_graph(root, client.store)
    mapping = {o: client.fresh_location(remote=True)
               for o in sorted(graph.nodes, key=lambda loc: loc.sort_key())}
    nu = client.fresh_event()
    stamp = label_join(effect, CON)
    for o in graph.nodes:
        fresh = mapping[o]
        moved = raise_label(rewrite_value(graph.nodes[o], mapping), stamp)
        for s in config.servers:
            s.store[fresh] = moved
        if o in config.store_typing:
            config.store_typing.setdefault(fresh, upgrade(config.store_typing[o]))
    for s in config.servers:
        s.seq = (nu,) + s.seq
    fresh_root = mapping[graph.root]
    config.global_ids[ident] = fresh_root
    if ident in config.id_typing:
        config.store_typing.setdefault(fresh_root, config.id_typing[ident])
    root_value = config.servers[0].store[fresh_root]
    action = Action(effect, "ref", CON, nu, fresh_root, root_value,
                    snapshot=pre_common, synced=True)
    return Plain(fresh_root, CON), action, graph.node_count


def canonical_shape(graph: ReferenceGraph):
    """Graph shape with locations renamed by deterministic traversal order
    and value labels erased: equal shapes mean isomorphic graphs."""
    order: dict[Location, int] = {}

    def visit(o: Location) -> None:
        if o in order:
            return
        order[o] = len(order)
        for succ in _ordered_succs(graph.nodes[o]):
            visit(succ)

    visit(graph.root)
    for o in sorted(graph.nodes, key=lambda loc: loc.sort_key()):
        visit(o)

    def shape_of(v):
        if isinstance(v, Duplicated):
            return ("duplicated",)
        raw = v.raw
        if isinstance(raw, Location):
            return ("loc", order[raw])
        if isinstance(raw, RecordVal):
            return ("record", tuple((n, shape_of(fv)) for n, fv in raw.fields))
        return ("raw", raw)

    return tuple(shape_of(graph.nodes[o])
                 for o in sorted(graph.nodes, key=lambda loc: order[loc]))


def _ordered_succs(v) -> list[Location]:
    """Successor locations in deterministic value-traversal order."""
    out: list[Location] = []

    def walk(v) -> None:
        if isinstance(v, Duplicated):
            return
        raw = v.raw
        if isinstance(raw, Location):
            out.append(raw)
        elif isinstance(raw, RecordVal):
            for _, fv in raw.fields:
                walk(fv)

    walk(v)
    seen: set[Location] = set()
    uniq = []
    for o in out:
        if o not in seen:
            seen.add(o)
            uniq.append(o)
    return uniq
