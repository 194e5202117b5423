"""Core syntax: consistency labels, identifiers, locations, terms, values,
types, and the label / subtyping algebra.

Everything here is immutable; terms double as runtime residuals, so values
(locations, closures, duplicated markers) are ordinary term literals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

from .lattice import GSet, LatticeValue, NatMax

Pos = tuple[int, int]


def _pos():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Labels

class Label(enum.Enum):
    """Consistency labels; lower in the chain means stronger consistency."""

    LOC = "loc"
    CON = "con"
    OAC = "oac"
    AVA = "ava"

    def __str__(self) -> str:
        return self.value


_RANK = {Label.LOC: 0, Label.CON: 1, Label.OAC: 2, Label.AVA: 3}
LABELS = (Label.LOC, Label.CON, Label.OAC, Label.AVA)
LOC, CON, OAC, AVA = LABELS


def label_rank(a: Label) -> int:
    return _RANK[a]


def label_leq(a: Label, b: Label) -> bool:
    """Chain order loc <= con <= oac <= ava."""
    return _RANK[a] <= _RANK[b]


def label_lt(a: Label, b: Label) -> bool:
    return _RANK[a] < _RANK[b]


def label_join(a: Label, b: Label) -> Label:
    return a if _RANK[a] >= _RANK[b] else b


def label_meet(a: Label, b: Label) -> Label:
    return a if _RANK[a] <= _RANK[b] else b


def parse_label_name(name: str) -> Label:
    for lab in LABELS:
        if lab.value == name:
            return lab
    raise ValueError(f"not a label: {name!r}")


# ---------------------------------------------------------------------------
# Identifiers and locations

@dataclass(frozen=True)
class Identifier:
    """Programmer-chosen name for a reference, shared across clients."""

    label: Label
    index: int

    def __str__(self) -> str:
        return f"({self.label},{self.index})"

    def sort_key(self) -> tuple[int, int]:
        return (_RANK[self.label], self.index)


@dataclass(frozen=True)
class Location:
    """Runtime store address; remote ones name (client, serial) pairs."""

    client: int
    serial: int
    remote: bool

    def __str__(self) -> str:
        kind = "r" if self.remote else "l"
        return f"c{self.client}.{kind}{self.serial}"

    def sort_key(self) -> tuple[int, int, int]:
        return (self.client, self.serial, int(self.remote))


# ---------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class BoolType:
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class UnitType:
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class LatType:
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class RefType:
    label: Label
    content: "Type"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class ArrowType:
    arg: "Type"
    latent: Label        # upper bound on the effect while the body runs
    result: "Type"
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class RecordType:
    fields: tuple[tuple[str, "Type"], ...]   # sorted by field name
    label: Label
    pos: Optional[Pos] = _pos()


Type = Union[BoolType, UnitType, LatType, RefType, ArrowType, RecordType]


def label_of(t: Type) -> Label:
    return t.label


def with_label(t: Type, lab: Label) -> Type:
    return replace(t, label=lab)


def type_join_label(t: Type, lab: Label) -> Type:
    """Join a label onto a type's outer label; inner components untouched."""
    return with_label(t, label_join(t.label, lab))


def type_join(t1: Type, t2: Type) -> Optional[Type]:
    """Join types with identical raw structure by joining outer labels.

    Inner components (including those under Ref and arrows) must be equal;
    only the outermost labels are merged. None when the shapes disagree.
    """
    if with_label(t1, LOC) == with_label(t2, LOC):
        return with_label(t1, label_join(t1.label, t2.label))
    return None


def subtype(t1: Type, t2: Type) -> bool:
    """Structural subtyping.

    Base types are covariant in their label. Arrows are contravariant in the
    argument and the latent label, covariant in the result and their own
    label. References are invariant in content (mutability) and covariant in
    label. Records use width and depth subtyping with a covariant label.
    """
    match (t1, t2):
        case (BoolType(), BoolType()) | (UnitType(), UnitType()) | (LatType(), LatType()):
            return label_leq(t1.label, t2.label)
        case (RefType(), RefType()):
            return t1.content == t2.content and label_leq(t1.label, t2.label)
        case (ArrowType(), ArrowType()):
            return (
                subtype(t2.arg, t1.arg)
                and subtype(t1.result, t2.result)
                and label_leq(t1.label, t2.label)
                and label_leq(t2.latent, t1.latent)
            )
        case (RecordType(), RecordType()):
            have = dict(t1.fields)
            return label_leq(t1.label, t2.label) and all(
                name in have and subtype(have[name], want)
                for name, want in t2.fields
            )
        case _:
            return False


def map_labels(t: Type, f: Callable[[Label], Label]) -> Type:
    """Rewrite every label in a type, outer and inner."""
    match t:
        case BoolType() | UnitType() | LatType():
            return with_label(t, f(t.label))
        case RefType(label=lab, content=c):
            return RefType(f(lab), map_labels(c, f))
        case ArrowType(arg=a, latent=latent, result=r, label=lab):
            return ArrowType(map_labels(a, f), f(latent), map_labels(r, f), f(lab))
        case RecordType(fields=fs, label=lab):
            return RecordType(tuple((n, map_labels(ft, f)) for n, ft in fs), f(lab))
    raise TypeError(f"not a type: {t!r}")


def type_labels(t: Type) -> frozenset[Label]:
    out: set[Label] = set()
    map_labels(t, lambda lab: (out.add(lab), lab)[1])
    return frozenset(out)


def erase_labels(t: Type) -> Type:
    return map_labels(t, lambda _: LOC)


def same_raw_shape(t1: Type, t2: Type) -> bool:
    """Equal after forgetting every label; separates flow errors from shape errors."""
    return erase_labels(t1) == erase_labels(t2)


def ref_free(t: Type) -> bool:
    """No reference constructor anywhere in the type."""
    match t:
        case RefType():
            return False
        case ArrowType(arg=a, result=r):
            return ref_free(a) and ref_free(r)
        case RecordType(fields=fs):
            return all(ref_free(ft) for _, ft in fs)
        case _:
            return True


# ---------------------------------------------------------------------------
# Raw and labeled values

@dataclass(frozen=True)
class BoolVal:
    value: bool


@dataclass(frozen=True)
class UnitVal:
    pass


UNIT = UnitVal()


@dataclass(frozen=True)
class Closure:
    latent: Label
    param: str
    param_type: Type
    body: "Term"


@dataclass(frozen=True)
class RecordVal:
    fields: tuple[tuple[str, "LabeledValue"], ...]   # sorted by field name


RawValue = Union[LatticeValue, BoolVal, UnitVal, Closure, Location, RecordVal]


@dataclass(frozen=True)
class Plain:
    raw: RawValue
    label: Label


@dataclass(frozen=True)
class Duplicated:
    """Marker produced when a reference is created under a taken identifier.

    Opaque: printable and comparable, but it cannot be dereferenced or
    assigned through.
    """

    inner: "Term"


LabeledValue = Union[Plain, Duplicated]


def raise_label(v: LabeledValue, lab: Label) -> LabeledValue:
    """Stamp a value with a label join; duplicated markers are left alone."""
    if isinstance(v, Plain):
        return Plain(v.raw, label_join(v.label, lab))
    return v


# ---------------------------------------------------------------------------
# Terms

@dataclass(frozen=True)
class Var:
    name: str
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Lit:
    value: LabeledValue
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Restrict:
    """t[l]: raises the effect while t runs and joins l onto the result.

    Also serves as the runtime effect frame introduced by taken branches
    and function application.
    """

    term: "Term"
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class LatOp:
    op: str                    # "join" | "meet"
    left: "Term"
    right: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class OrdOp:
    op: str                    # "le" | "lt"
    left: "Term"
    right: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class App:
    fn: "Term"
    arg: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class If:
    cond: "Term"
    then: "Term"
    els: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Ref:
    label: Label
    init: "Term"
    ident: Identifier
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Await:
    ident: Identifier
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Deref:
    term: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Assign:
    target: "Term"
    value: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class FlexRead:
    label: Label               # con or ava only
    term: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class FlexWrite:
    label: Label               # con or ava only
    target: "Term"
    value: "Term"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Record:
    fields: tuple[tuple[str, "Term"], ...]   # source order
    label: Label
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Proj:
    term: "Term"
    name: str
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Clone:
    label: Label
    term: "Term"
    ident: Identifier
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Let:
    """Binding sugar; runs the body under the ambient effect."""

    name: str
    bound: "Term"
    body: "Term"
    pos: Optional[Pos] = _pos()


Term = Union[
    Var, Lit, Restrict, LatOp, OrdOp, App, If, Ref, Await, Deref, Assign,
    FlexRead, FlexWrite, Record, Proj, Clone, Let,
]


@dataclass(frozen=True)
class Program:
    servers: int
    clients: tuple[tuple[int, Term], ...]


def is_value(t: Term) -> bool:
    return isinstance(t, Lit)


# ---------------------------------------------------------------------------
# Location occurrence

def refs(t: Term) -> frozenset[Location]:
    """Locations occurring syntactically in a term, through values, records
    and abstraction bodies."""
    out: set[Location] = set()
    _scan_term(t, out)
    return frozenset(out)


def value_locations(v: LabeledValue) -> frozenset[Location]:
    out: set[Location] = set()
    _scan_value(v, out)
    return frozenset(out)


def _scan_value(v: LabeledValue, out: set[Location]) -> None:
    if isinstance(v, Duplicated):
        _scan_term(v.inner, out)
        return
    raw = v.raw
    if isinstance(raw, Location):
        out.add(raw)
    elif isinstance(raw, Closure):
        _scan_term(raw.body, out)
    elif isinstance(raw, RecordVal):
        for _, fv in raw.fields:
            _scan_value(fv, out)


def _scan_term(t: Term, out: set[Location]) -> None:
    match t:
        case Var():
            pass
        case Lit(value=v):
            _scan_value(v, out)
        case Restrict(term=s) | Deref(term=s) | FlexRead(term=s) | Proj(term=s) | Clone(term=s):
            _scan_term(s, out)
        case Ref(init=s):
            _scan_term(s, out)
        case Await():
            pass
        case LatOp(left=a, right=b) | OrdOp(left=a, right=b) | App(fn=a, arg=b) | Assign(target=a, value=b) | FlexWrite(target=a, value=b):
            _scan_term(a, out)
            _scan_term(b, out)
        case If(cond=c, then=a, els=b):
            _scan_term(c, out)
            _scan_term(a, out)
            _scan_term(b, out)
        case Record(fields=fs):
            for _, ft in fs:
                _scan_term(ft, out)
        case Let(bound=a, body=b):
            _scan_term(a, out)
            _scan_term(b, out)


# ---------------------------------------------------------------------------
# Pretty-printing (inverse of the parser on parsed terms)

_TERM, _ASSIGN, _BINOP, _APP, _PREFIX, _ATOM = range(6)

_LATOP_SYM = {"join": "\\/", "meet": "/\\"}
_ORDOP_SYM = {"le": "<=", "lt": "<"}


def pretty(t: Term, level: int = _TERM) -> str:
    s, lv = _pp(t)
    if lv < level:
        return f"({s})"
    return s


def _pp(t: Term) -> tuple[str, int]:
    match t:
        case Var(name=n):
            return n, _ATOM
        case Lit(value=v):
            return _pp_value(v)
        case Restrict(term=s, label=lab):
            return f"{pretty(s, _ATOM)}[{lab}]", _ATOM
        case Proj(term=s, name=n):
            return f"{pretty(s, _ATOM)}.{n}", _ATOM
        case Deref(term=s):
            return f"!{pretty(s, _PREFIX)}", _PREFIX
        case App(fn=f, arg=a):
            return f"{pretty(f, _APP)} {pretty(a, _PREFIX)}", _APP
        case LatOp(op=op, left=a, right=b):
            return f"{pretty(a, _BINOP)} {_LATOP_SYM[op]} {pretty(b, _APP)}", _BINOP
        case OrdOp(op=op, left=a, right=b):
            return f"{pretty(a, _BINOP)} {_ORDOP_SYM[op]} {pretty(b, _APP)}", _BINOP
        case Assign(target=a, value=b):
            return f"{pretty(a, _BINOP)} := {pretty(b, _BINOP)}", _ASSIGN
        case If(cond=c, then=a, els=b):
            return (
                f"if {pretty(c, _TERM)} then {{ {pretty(a, _TERM)} }} "
                f"else {{ {pretty(b, _TERM)} }}",
                _TERM,
            )
        case Let(name=x, bound=a, body=b):
            return f"let {x} = {pretty(a, _TERM)} in {pretty(b, _TERM)}", _TERM
        case Ref(label=lab, init=s, ident=ident):
            return f"ref@{lab}({pretty(s, _TERM)}, {ident})", _ATOM
        case Clone(label=lab, term=s, ident=ident):
            return f"clone@{lab}({pretty(s, _TERM)}, {ident})", _ATOM
        case Await(ident=ident):
            return f"await({ident})", _ATOM
        case FlexRead(label=lab, term=s):
            return f"flexread@{lab}({pretty(s, _TERM)})", _ATOM
        case FlexWrite(label=lab, target=a, value=b):
            return f"flexwrite@{lab}({pretty(a, _TERM)}, {pretty(b, _TERM)})", _ATOM
        case Record(fields=fs, label=lab):
            inner = ", ".join(f"{n} = {pretty(ft, _TERM)}" for n, ft in fs)
            return f"{{{inner}}}@{lab}", _ATOM
    raise TypeError(f"not a term: {t!r}")


def _pp_value(v: LabeledValue) -> tuple[str, int]:
    if isinstance(v, Duplicated):
        return f"duplicated({pretty(v.inner, _TERM)})", _ATOM
    raw, lab = v.raw, v.label
    if isinstance(raw, NatMax):
        return f"nat {raw.n} @{lab}", _ATOM
    if isinstance(raw, GSet):
        inner = ", ".join(f'"{e}"' for e in sorted(raw.elems))
        return f"set{{{inner}}} @{lab}", _ATOM
    if isinstance(raw, BoolVal):
        return f"{'true' if raw.value else 'false'} @{lab}", _ATOM
    if isinstance(raw, UnitVal):
        return f"unit @{lab}", _ATOM
    if isinstance(raw, Closure):
        return (
            f"fn@{raw.latent}({raw.param}: {pretty_type(raw.param_type)}) "
            f"=> {pretty(raw.body, _TERM)}",
            _TERM,
        )
    if isinstance(raw, Location):
        return f"<{raw}> @{lab}", _ATOM
    if isinstance(raw, RecordVal):
        inner = ", ".join(f"{n} = {pretty(Lit(fv), _TERM)}" for n, fv in raw.fields)
        return f"{{{inner}}}@{lab}", _ATOM
    raise TypeError(f"not a value: {v!r}")


def pretty_type(t: Type) -> str:
    match t:
        case BoolType(label=lab):
            return f"Bool@{lab}"
        case UnitType(label=lab):
            return f"Unit@{lab}"
        case LatType(label=lab):
            return f"Lat@{lab}"
        case RefType(label=lab, content=c):
            return f"Ref@{lab} {pretty_type(c)}"
        case ArrowType(arg=a, latent=latent, result=r, label=lab):
            return f"({pretty_type(a)} - {latent} -> {pretty_type(r)})@{lab}"
        case RecordType(fields=fs, label=lab):
            inner = ", ".join(f"{n}: {pretty_type(ft)}" for n, ft in fs)
            return f"{{{inner}}}@{lab}"
    raise TypeError(f"not a type: {t!r}")


def pretty_program(p: Program) -> str:
    parts = [f"servers {p.servers};"]
    for cid, body in p.clients:
        parts.append(f"client {cid} {{ {pretty(body)} }}")
    return "\n".join(parts)
