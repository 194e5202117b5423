"""Typing judgment for the consistency-typed language.

The judgment carries a variable context, a store typing, an identifier
typing, and the current consistency effect. The effect is what blocks
implicit flows: a term running under a weak (high) effect may not mutate a
reference with a stronger (lower) label.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .syntax import (
    App, ArrowType, Assign, Await, AVA, BoolType, BoolVal, Clone, Closure,
    CON, Deref, Duplicated, FlexRead, FlexWrite, Identifier, If, Label,
    LatOp, LatType, Let, Lit, Location, LOC, OAC, OrdOp, Pos, Program,
    Proj, Record, RecordType, RecordVal, Ref, RefType, Restrict, Term, Type,
    UnitType, UnitVal, Var, label_join, label_leq, label_lt, label_of,
    map_labels, pretty_type, ref_free, refs, same_raw_shape, type_join,
    type_join_label, with_label,
)
from . import lattice


class ErrorKind(enum.Enum):
    FLOW_VIOLATION = "FlowViolation"
    EFFECT_VIOLATION = "EffectViolation"
    OAC_MISUSE = "OacMisuse"
    NON_LATTICE_AVA = "NonLatticeAva"
    ESCAPING_LOCAL_REF = "EscapingLocalRef"
    ID_LABEL_MISMATCH = "IdLabelMismatch"
    MISMATCH = "Mismatch"
    UNBOUND = "Unbound"


class CheckError(Exception):
    def __init__(self, kind: ErrorKind, pos: Optional[Pos], message: str):
        super().__init__(message)
        self.kind = kind
        self.pos = pos
        self.message = message

    def render(self, path: str = "<input>") -> str:
        line, col = self.pos if self.pos else (0, 0)
        return f"{path}:{line}:{col}: {self.kind.value}: {self.message}"


@dataclass
class TypeEnv:
    """Gamma / Sigma / identifier typing / current effect."""

    gamma: Mapping[str, Type] = field(default_factory=dict)
    sigma: Mapping[Location, Type] = field(default_factory=dict)
    ids: Mapping[Identifier, Type] = field(default_factory=dict)
    effect: Label = LOC
    collecting: bool = False   # pre-pass: record id types instead of enforcing
    runtime: bool = False      # typing residuals: stamped oac values are fine

    def with_var(self, name: str, ty: Type) -> "TypeEnv":
        gamma = dict(self.gamma)
        gamma[name] = ty
        return TypeEnv(gamma, self.sigma, self.ids, self.effect,
                       self.collecting, self.runtime)

    def with_effect(self, eff: Label) -> "TypeEnv":
        return TypeEnv(self.gamma, self.sigma, self.ids, eff,
                       self.collecting, self.runtime)


def _fail(kind: ErrorKind, pos: Optional[Pos], message: str) -> CheckError:
    return CheckError(kind, pos, message)


def _require_subtype(have: Type, want: Type, pos: Optional[Pos], ctx: str) -> None:
    from .syntax import subtype
    if subtype(have, want):
        return
    kind = ErrorKind.FLOW_VIOLATION if same_raw_shape(have, want) else ErrorKind.MISMATCH
    raise _fail(kind, pos, f"{ctx}: {pretty_type(have)} is not a subtype of {pretty_type(want)}")


def _expect_lat(t: Type, pos: Optional[Pos], ctx: str) -> LatType:
    if not isinstance(t, LatType):
        raise _fail(ErrorKind.MISMATCH, pos, f"{ctx}: expected a lattice value, found {pretty_type(t)}")
    return t


def _record_id(env: TypeEnv, ident: Identifier, content: Type, pos: Optional[Pos]) -> None:
    known = env.ids.get(ident)
    if env.collecting:
        if known is None:
            env.ids[ident] = content   # type: ignore[index]
        return
    if known is not None and known != content:
        raise _fail(
            ErrorKind.MISMATCH, pos,
            f"identifier {ident} is bound elsewhere with type {pretty_type(known)}, "
            f"here {pretty_type(content)}",
        )


def typecheck(env: TypeEnv, t: Term) -> Type:
    """Type of t under env; raises CheckError at the first violated premise,
    leftmost-innermost."""
    match t:
        case Var(name=name, pos=pos):
            if name not in env.gamma:
                raise _fail(ErrorKind.UNBOUND, pos, f"unbound variable {name!r}")
            return env.gamma[name]

        case Lit(value=v, pos=pos):
            return type_of_value(env, v, pos)

        case Restrict(term=sub, label=lab):
            # check under the raised effect, join the label onto the result
            inner = typecheck(env.with_effect(label_join(env.effect, lab)), sub)
            return type_join_label(inner, lab)

        case LatOp(left=a, right=b, pos=pos):
            ta = _expect_lat(typecheck(env, a), a.pos or pos, "lattice operation")
            tb = _expect_lat(typecheck(env, b), b.pos or pos, "lattice operation")
            return LatType(label_join(ta.label, tb.label))

        case OrdOp(left=a, right=b, pos=pos):
            # T-RELOP: comparing lattice values yields a boolean at the joined label
            ta = _expect_lat(typecheck(env, a), a.pos or pos, "order comparison")
            tb = _expect_lat(typecheck(env, b), b.pos or pos, "order comparison")
            return BoolType(label_join(ta.label, tb.label))

        case App(fn=f, arg=a, pos=pos):
            tf = typecheck(env, f)
            if not isinstance(tf, ArrowType):
                raise _fail(ErrorKind.MISMATCH, pos, f"applied a non-function of type {pretty_type(tf)}")
            ta = typecheck(env, a)
            _require_subtype(ta, tf.arg, pos, "argument")
            # T-APP: the latent label bounds the caller effect joined with the
            # function value's own label
            if not label_leq(label_join(env.effect, tf.label), tf.latent):
                raise _fail(
                    ErrorKind.EFFECT_VIOLATION, pos,
                    f"call under effect {env.effect} with function label {tf.label} "
                    f"exceeds latent label {tf.latent}",
                )
            return type_join_label(tf.result, tf.label)

        case If(cond=c, then=a, els=b, pos=pos):
            tc = typecheck(env, c)
            if not isinstance(tc, BoolType):
                raise _fail(ErrorKind.MISMATCH, c.pos or pos, f"condition has type {pretty_type(tc)}, expected Bool")
            # branches run under the guard's label: implicit flows are blocked
            benv = env.with_effect(label_join(env.effect, tc.label))
            t1 = typecheck(benv, a)
            t2 = typecheck(benv, b)
            joined = type_join(t1, t2)
            if joined is None:
                raise _fail(
                    ErrorKind.MISMATCH, pos,
                    f"branch types differ: {pretty_type(t1)} vs {pretty_type(t2)}",
                )
            return type_join_label(joined, tc.label)

        case Ref():
            return _typecheck_ref(env, t)

        case Await(ident=ident, pos=pos):
            if ident not in env.ids:
                raise _fail(ErrorKind.UNBOUND, pos, f"await on unknown identifier {ident}")
            return RefType(ident.label, env.ids[ident])

        case Deref(term=sub, pos=pos):
            ts = typecheck(env, sub)
            if not isinstance(ts, RefType):
                raise _fail(ErrorKind.MISMATCH, pos, f"dereference of non-reference type {pretty_type(ts)}")
            if ts.label == OAC:
                raise _fail(ErrorKind.OAC_MISUSE, pos, "dereference of an oac reference; use flexread")
            return type_join_label(ts.content, ts.label)

        case Assign(target=lhs, value=rhs, pos=pos):
            tl = typecheck(env, lhs)
            if not isinstance(tl, RefType):
                raise _fail(ErrorKind.MISMATCH, pos, f"assignment to non-reference type {pretty_type(tl)}")
            tr = typecheck(env, rhs)
            _require_subtype(tr, tl.content, pos, "assigned value")
            if not label_leq(env.effect, tl.label):
                raise _fail(
                    ErrorKind.EFFECT_VIOLATION, pos,
                    f"assignment to a {tl.label} reference under effect {env.effect}",
                )
            if tl.label == OAC:
                raise _fail(ErrorKind.OAC_MISUSE, pos, "assignment to an oac reference; use flexwrite")
            if label_of(tr) == OAC:
                raise _fail(ErrorKind.OAC_MISUSE, pos, "oac-labeled values cannot be assigned")
            return UnitType(tl.label)

        case FlexRead(label=lab, term=sub, pos=pos):
            ts = typecheck(env, sub)
            _require_oac_ref(ts, pos, "flexread")
            return with_label(ts.content, lab)

        case FlexWrite(label=lab, target=tgt, value=val, pos=pos):
            ts = typecheck(env, tgt)
            _require_oac_ref(ts, pos, "flexwrite")
            tv = typecheck(env, val)
            if label_of(tv) not in (LOC, CON):
                raise _fail(
                    ErrorKind.FLOW_VIOLATION, pos,
                    f"flexwrite payload must be labeled loc or con, found {label_of(tv)}",
                )
            if not isinstance(tv, LatType):
                raise _fail(ErrorKind.MISMATCH, pos, f"flexwrite payload must be a lattice value, found {pretty_type(tv)}")
            return UnitType(lab)

        case Record(fields=fs, label=lab, pos=pos):
            return typecheck_record(env, fs, lab, pos)

        case Proj(term=sub, name=name, pos=pos):
            return typecheck_projection(env, sub, name, pos)

        case Clone(label=lab, term=sub, ident=ident, pos=pos):
            return typecheck_clone(env, sub, lab, ident, pos)

        case Let(name=x, bound=bound, body=body):
            tb = typecheck(env, bound)
            return typecheck(env.with_var(x, tb), body)

    raise _fail(ErrorKind.MISMATCH, getattr(t, "pos", None), f"unrecognized term {t!r}")


def _require_oac_ref(ts: Type, pos: Optional[Pos], what: str) -> None:
    if not isinstance(ts, RefType):
        raise _fail(ErrorKind.MISMATCH, pos, f"{what} applies to references, found {pretty_type(ts)}")
    if ts.label != OAC:
        raise _fail(ErrorKind.OAC_MISUSE, pos, f"{what} applies to oac references, found a {ts.label} reference")


def _typecheck_ref(env: TypeEnv, t: Ref) -> Type:
    lab, ident, pos = t.label, t.ident, t.pos
    ti = typecheck(env, t.init)
    if lab == OAC:
        # on-demand consistency: content must be strictly lower-labeled lattice data
        if not label_lt(label_of(ti), lab):
            raise _fail(
                ErrorKind.FLOW_VIOLATION, pos,
                f"oac reference content must be labeled strictly below oac, found {label_of(ti)}",
            )
        if not label_leq(env.effect, lab):
            raise _fail(ErrorKind.EFFECT_VIOLATION, pos, f"oac reference created under effect {env.effect}")
        if not isinstance(ti, LatType):
            raise _fail(ErrorKind.NON_LATTICE_AVA, pos, f"oac references hold lattice values, found {pretty_type(ti)}")
        if ident.label != lab:
            raise _fail(ErrorKind.ID_LABEL_MISMATCH, pos, f"identifier {ident} does not carry label {lab}")
        content = type_join_label(ti, lab)
        _record_id(env, ident, content, pos)
        return RefType(lab, content)

    if not label_leq(label_of(ti), lab):
        raise _fail(
            ErrorKind.FLOW_VIOLATION, pos,
            f"reference content labeled {label_of(ti)} exceeds reference label {lab}",
        )
    if not label_leq(env.effect, lab):
        raise _fail(ErrorKind.EFFECT_VIOLATION, pos, f"{lab} reference created under effect {env.effect}")
    if lab == AVA and not isinstance(ti, LatType):
        raise _fail(ErrorKind.NON_LATTICE_AVA, pos, f"ava references hold lattice values, found {pretty_type(ti)}")
    if label_lt(label_of(ti), lab) and not (len(refs(t.init)) == 0 and ref_free(ti)):
        # storing strictly-lower-labeled content remotely must not upload references
        raise _fail(
            ErrorKind.ESCAPING_LOCAL_REF, pos,
            f"content labeled {label_of(ti)} stored under {lab} must not contain references",
        )
    if ident.label != lab:
        raise _fail(ErrorKind.ID_LABEL_MISMATCH, pos, f"identifier {ident} does not carry label {lab}")
    content = type_join_label(ti, lab)
    _record_id(env, ident, content, pos)
    return RefType(lab, content)


def typecheck_record(env: TypeEnv, fs: tuple[tuple[str, Term], ...],
                     lab: Label, pos: Optional[Pos]) -> Type:
    names = [n for n, _ in fs]
    if len(set(names)) != len(names):
        raise _fail(ErrorKind.MISMATCH, pos, "duplicate record field names")
    typed = tuple(sorted((n, typecheck(env, ft)) for n, ft in fs))
    if lab == OAC:
        raise _fail(ErrorKind.OAC_MISUSE, pos, "records cannot be labeled oac")
    return RecordType(typed, lab)


def typecheck_projection(env: TypeEnv, sub: Term, name: str, pos: Optional[Pos]) -> Type:
    ts = typecheck(env, sub)
    if not isinstance(ts, RecordType):
        raise _fail(ErrorKind.MISMATCH, pos, f"projection from non-record type {pretty_type(ts)}")
    for n, ft in ts.fields:
        if n == name:
            return type_join_label(ft, ts.label)
    raise _fail(ErrorKind.UNBOUND, pos, f"record has no field {name!r}")


def typecheck_clone(env: TypeEnv, sub: Term, lab: Label, ident: Identifier,
                    pos: Optional[Pos]) -> Type:
    if lab != CON:
        raise _fail(ErrorKind.OAC_MISUSE, pos, f"clone label must be con, found {lab}")
    ts = typecheck(env, sub)
    if not isinstance(ts, RefType) or ts.label != LOC:
        raise _fail(ErrorKind.MISMATCH, pos, f"clone applies to local references, found {pretty_type(ts)}")
    if not _all_loc(ts.content):
        raise _fail(ErrorKind.MISMATCH, pos, "clone requires an all-local reference graph")
    if not label_leq(env.effect, CON):
        raise _fail(ErrorKind.EFFECT_VIOLATION, pos, f"clone under effect {env.effect}")
    if ident.label != lab:
        raise _fail(ErrorKind.ID_LABEL_MISMATCH, pos, f"identifier {ident} does not carry label {lab}")
    content = upgrade(ts.content)
    _record_id(env, ident, content, pos)
    return RefType(CON, content)


def _all_loc(t: Type) -> bool:
    ok = True

    def look(lab: Label) -> Label:
        nonlocal ok
        if lab != LOC:
            ok = False
        return lab

    map_labels(t, look)
    return ok


def upgrade(t: Type) -> Type:
    """Rewrite every loc label to con (the clone label upgrade)."""
    return map_labels(t, lambda lab: CON if lab == LOC else lab)


def type_of_value(env: TypeEnv, v, pos: Optional[Pos]) -> Type:
    """Typing for literals and runtime values."""
    if isinstance(v, Duplicated):
        # a duplicated marker types like the creation it blocked
        return typecheck(env, v.inner)
    raw, lab = v.raw, v.label
    if isinstance(raw, (lattice.NatMax, lattice.GSet)):
        _no_oac_literal(env, lab, pos)
        return LatType(lab)
    if isinstance(raw, BoolVal):
        _no_oac_literal(env, lab, pos)
        return BoolType(lab)
    if isinstance(raw, UnitVal):
        _no_oac_literal(env, lab, pos)
        return UnitType(lab)
    if isinstance(raw, Closure):
        _no_oac_literal(env, lab, pos)
        # T-ABS: the body is checked under the latent label
        benv = env.with_var(raw.param, raw.param_type).with_effect(raw.latent)
        tb = typecheck(benv, raw.body)
        return ArrowType(raw.param_type, raw.latent, tb, lab)
    if isinstance(raw, Location):
        if raw not in env.sigma:
            raise _fail(ErrorKind.UNBOUND, pos, f"location {raw} has no store typing")
        content = env.sigma[raw]
        return RefType(label_of(content), content)
    if isinstance(raw, RecordVal):
        _no_oac_literal(env, lab, pos)
        typed = tuple(sorted((n, type_of_value(env, fv, pos)) for n, fv in raw.fields))
        return RecordType(typed, lab)
    raise _fail(ErrorKind.MISMATCH, pos, f"unrecognized value {v!r}")


def _no_oac_literal(env: TypeEnv, lab: Label, pos: Optional[Pos]) -> None:
    # source restriction only: runtime stamping legitimately produces oac values
    if lab == OAC and not env.runtime:
        raise _fail(ErrorKind.OAC_MISUSE, pos, "literal values cannot be labeled oac")


# ---------------------------------------------------------------------------
# Whole-program checking

@dataclass
class ProgramCheck:
    client_types: dict[int, Type]
    id_types: dict[Identifier, Type]


def collect_id_types(program: Program) -> dict[Identifier, Type]:
    """Pre-pass: the whole-program identifier typing.

    Awaits may resolve identifiers created by other clients, so iterate
    collection to a fixpoint; errors are deferred to the strict pass.
    """
    ids: dict[Identifier, Type] = {}
    for _ in range(len(program.clients) * 4 + 2):
        before = dict(ids)
        for _, term in program.clients:
            env = TypeEnv(gamma={}, sigma={}, ids=ids, effect=LOC, collecting=True)
            try:
                typecheck(env, term)
            except CheckError:
                pass
        if ids == before:
            break
    return ids


def check_program(program: Program) -> ProgramCheck:
    """Typecheck every client against the shared identifier typing."""
    ids = collect_id_types(program)
    client_types: dict[int, Type] = {}
    for cid, term in program.clients:
        env = TypeEnv(gamma={}, sigma={}, ids=ids, effect=LOC)
        client_types[cid] = typecheck(env, term)
    return ProgramCheck(client_types, ids)
