"""Document-oriented data model and the pure relational operator semantics.

A document is an ordered set of named scalar attributes, JSON-encoded on
the wire.  A collection groups documents sharing one attribute-name set
(the schema) and is chunked into fixed-size files for storage.  The four
operators (project, select, aggregate, join) are pure functions used both
by the trusted core and by plaintext oracles in tests; they never mutate
their inputs.

Scalars are str, 64-bit int, float, bool or None.  Value types must stay
stable per attribute within a collection (None is a wildcard); ordering
comparisons are defined for numerics only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .encoding import canonical_json, from_json
from .errors import (
    AggregateError,
    ArgumentError,
    DataTypeError,
    PredicateError,
    SchemaError,
)

Scalar = str | int | float | bool | None

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1

ORDERING_OPS = ("<", "<=", ">", ">=")
COMPARISON_OPS = ("=", "!=") + ORDERING_OPS
AGGREGATE_FUNCS = ("sum", "avg", "count", "min", "max")


def _type_class(value: Scalar) -> str | None:
    """Classification used for schema stability and equality semantics."""
    if value is None:
        return None
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "num"
    if isinstance(value, str):
        return "str"
    raise DataTypeError(f"unsupported scalar type {type(value).__name__}")


def _check_scalar(name: str, value: Scalar) -> None:
    _type_class(value)
    if isinstance(value, bool):
        return
    if isinstance(value, int) and not _INT64_MIN <= value <= _INT64_MAX:
        raise DataTypeError(f"attribute {name!r} exceeds 64-bit integer range")


class Attribute(NamedTuple):
    name: str
    value: Scalar


class Document:
    """Ordered mapping of attribute names to scalar values."""

    __slots__ = ("_attrs",)

    def __init__(self, attrs: dict[str, Scalar] | Iterable[tuple[str, Scalar]]):
        items = list(attrs.items()) if isinstance(attrs, dict) else list(attrs)
        seen: dict[str, Scalar] = {}
        for name, value in items:
            if not name:
                raise SchemaError("attribute names must be nonempty")
            if name in seen:
                raise SchemaError(f"duplicate attribute {name!r} in document")
            _check_scalar(name, value)
            seen[name] = value
        self._attrs = seen

    @property
    def attributes(self) -> tuple[Attribute, ...]:
        return tuple(Attribute(n, v) for n, v in self._attrs.items())

    def names(self) -> tuple[str, ...]:
        return tuple(self._attrs.keys())

    def __getitem__(self, name: str) -> Scalar:
        return self._attrs[name]

    def __contains__(self, name: str) -> bool:
        return name in self._attrs

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Document) and self._attrs == other._attrs

    def __hash__(self):
        return hash(tuple(sorted(self._attrs.items(), key=lambda kv: kv[0])))

    def __repr__(self) -> str:
        return f"Document({self._attrs!r})"

    def to_json(self) -> bytes:
        """Canonical JSON object of name -> value."""
        return canonical_json(self._attrs)

    @classmethod
    def from_json(cls, data: bytes | str) -> "Document":
        obj = from_json(data)
        if not isinstance(obj, dict):
            raise SchemaError("document encoding must be a JSON object")
        return cls(obj)


def collection_id(name: str) -> str:
    """Deterministic 256-bit collection id derived from the public name."""
    return hashlib.sha256(b"collection:" + name.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Collection:
    cid: str
    schema: frozenset[str]
    docs: tuple[Document, ...]
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "schema", frozenset(self.schema))
        object.__setattr__(self, "docs", tuple(self.docs))
        types: dict[str, str] = {}
        for doc in self.docs:
            if set(doc.names()) != self.schema:
                raise SchemaError(
                    f"document attributes {sorted(doc.names())} != schema "
                    f"{sorted(self.schema)}"
                )
            for attr, value in doc.attributes:
                cls = _type_class(value)
                if cls is None:
                    continue
                if types.setdefault(attr, cls) != cls:
                    raise SchemaError(
                        f"attribute {attr!r} mixes {types[attr]} and {cls} values"
                    )

    def __len__(self) -> int:
        return len(self.docs)

    @classmethod
    def build(cls, name: str, docs: Sequence[Document | dict]) -> "Collection":
        docs = tuple(d if isinstance(d, Document) else Document(d) for d in docs)
        if not docs:
            raise ArgumentError("cannot infer a schema from an empty collection")
        return cls(collection_id(name), frozenset(docs[0].names()), docs, name=name)

    def to_file_obj(self) -> dict:
        """Collection file layout: header object plus the document array."""
        return {
            "header": {
                "cid": self.cid,
                "schema": sorted(self.schema),
                "count": len(self.docs),
            },
            "docs": [dict(doc.attributes) for doc in self.docs],
        }

    def to_file_bytes(self) -> bytes:
        return canonical_json(self.to_file_obj())

    @classmethod
    def from_file_obj(cls, obj: dict, name: str | None = None) -> "Collection":
        header = obj["header"]
        docs = tuple(Document(d) for d in obj["docs"])
        if header["count"] != len(docs):
            raise SchemaError("collection header count mismatch")
        return cls(header["cid"], frozenset(header["schema"]), docs, name=name)


@dataclass(frozen=True)
class DataFile:
    file_index: int
    docs: tuple[Document, ...]


def chunk(collection: Collection, s: int) -> list[DataFile]:
    """Split into files of s documents; only the last file may be short."""
    if s < 1:
        raise ArgumentError(f"chunk size must be positive, got {s}")
    docs = collection.docs
    return [
        DataFile(k + 1, docs[k * s : (k + 1) * s])
        for k in range((len(docs) + s - 1) // s)
    ]


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttrRef:
    collection: str | None
    attr: str

    def to_param(self) -> dict:
        return {"collection": self.collection, "attr": self.attr}


@dataclass(frozen=True)
class Predicate:
    """Binary comparison: attribute vs literal, or attribute vs attribute."""

    lhs: AttrRef
    op: str
    rhs: "AttrRef | Literal"

    def __post_init__(self):
        if self.op not in COMPARISON_OPS:
            raise PredicateError(f"unknown comparison operator {self.op!r}")

    def to_param(self) -> dict:
        rhs = (
            {"literal": self.rhs.value}
            if isinstance(self.rhs, Literal)
            else self.rhs.to_param()
        )
        return {"lhs": self.lhs.to_param(), "op": self.op, "rhs": rhs}

    @classmethod
    def from_param(cls, obj: dict) -> "Predicate":
        rhs = obj["rhs"]
        rhs_val = (
            Literal(rhs["literal"])
            if "literal" in rhs
            else AttrRef(rhs["collection"], rhs["attr"])
        )
        return cls(AttrRef(obj["lhs"]["collection"], obj["lhs"]["attr"]), obj["op"], rhs_val)


@dataclass(frozen=True)
class Literal:
    value: Scalar


def _is_numeric(value: Scalar) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _compare(value: Scalar, op: str, literal: Scalar) -> bool:
    if op in ("=", "!="):
        eq = _type_class(value) == _type_class(literal) and value == literal
        return eq if op == "=" else not eq
    if not _is_numeric(literal):
        raise PredicateError(f"ordering comparison against non-numeric literal {literal!r}")
    if value is None:
        return False
    if not _is_numeric(value):
        raise PredicateError("ordering comparison on a non-numeric attribute")
    if op == "<":
        return value < literal
    if op == "<=":
        return value <= literal
    if op == ">":
        return value > literal
    return value >= literal


def _resolve_ref(ref: AttrRef, c: Collection) -> str:
    if ref.collection is not None and ref.collection not in (c.name, c.cid):
        raise PredicateError(
            f"predicate references collection {ref.collection!r}, got "
            f"{c.name or c.cid!r}"
        )
    if ref.attr not in c.schema:
        raise SchemaError(f"attribute {ref.attr!r} not in schema {sorted(c.schema)}")
    return ref.attr


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def project(c: Collection, attrs: Iterable[str]) -> Collection:
    """Keep only the named attributes; order and count of documents unchanged."""
    keep = set(attrs)
    unknown = keep - c.schema
    if unknown:
        raise SchemaError(f"cannot project unknown attributes {sorted(unknown)}")
    docs = tuple(
        Document([(n, v) for n, v in doc.attributes if n in keep]) for doc in c.docs
    )
    return Collection(c.cid, frozenset(keep), docs, name=c.name)


def select(c: Collection, p: Predicate) -> Collection:
    """Keep exactly the documents satisfying p, in their original order."""
    if not isinstance(p.rhs, Literal):
        raise PredicateError("selection requires a literal right-hand side")
    attr = _resolve_ref(p.lhs, c)
    lit = p.rhs.value
    docs = tuple(doc for doc in c.docs if _compare(doc[attr], p.op, lit))
    return Collection(c.cid, c.schema, docs, name=c.name)


def aggregate(c: Collection, func: str, attr: str) -> Scalar:
    """Fold one attribute; exact for integers, in-order accumulation for floats."""
    if func not in AGGREGATE_FUNCS:
        raise ArgumentError(f"unknown aggregate {func!r}")
    if attr not in c.schema:
        raise SchemaError(f"attribute {attr!r} not in schema {sorted(c.schema)}")
    if func == "count":
        return len(c.docs)
    if not c.docs:
        raise AggregateError(f"{func} over an empty collection is undefined")
    values = []
    for doc in c.docs:
        v = doc[attr]
        if not _is_numeric(v):
            raise DataTypeError(f"{func} over {attr!r} requires numeric values")
        values.append(v)
    if func == "min":
        return min(values)
    if func == "max":
        return max(values)
    total = 0
    for v in values:
        total += v
    return total if func == "sum" else total / len(values)


def _join_renames(
    c1: Collection, c2: Collection, key1: str, key2: str
) -> tuple[dict[str, str], dict[str, str]]:
    shared = (c1.schema & c2.schema) - {key1, key2}
    r1 = {a: f"c{c1.cid[:8]}_{a}" if a in shared else a for a in c1.schema}
    r2 = {a: f"c{c2.cid[:8]}_{a}" if a in shared else a for a in c2.schema}
    return r1, r2


def join(c1: Collection, c2: Collection, p: Predicate) -> Collection:
    """Nested-loop equality join; outer order from c1, inner from c2.

    The join attribute appears once when both sides use the same name;
    other shared names are disambiguated with a cid-derived prefix.
    """
    if p.op != "=":
        raise PredicateError("join predicate must be an equality")
    if not isinstance(p.rhs, AttrRef):
        raise PredicateError("join predicate must compare two attribute references")
    try:
        key1, key2 = _resolve_ref(p.lhs, c1), _resolve_ref(p.rhs, c2)
    except (PredicateError, SchemaError):
        key1, key2 = _resolve_ref(p.rhs, c1), _resolve_ref(p.lhs, c2)
    r1, r2 = _join_renames(c1, c2, key1, key2)
    same_key = key1 == key2
    out_docs = []
    for d1 in c1.docs:
        k = d1[key1]
        kc = _type_class(k)
        for d2 in c2.docs:
            if kc != _type_class(d2[key2]) or d1[key1] != d2[key2]:
                continue
            merged = [(r1[n], v) for n, v in d1.attributes]
            merged += [
                (r2[n], v)
                for n, v in d2.attributes
                if not (same_key and n == key2)
            ]
            out_docs.append(Document(merged))
    schema = frozenset(r1.values()) | frozenset(
        r2[a] for a in c2.schema if not (same_key and a == key2)
    )
    cid = hashlib.sha256(f"join:{c1.cid}:{c2.cid}".encode()).hexdigest()
    return Collection(cid, schema, tuple(out_docs))
