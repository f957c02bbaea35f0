"""SQL-like query parsing and compilation into an operator DAG.

Grammar (keywords case-insensitive, identifiers case-sensitive):

    SELECT (attr[, attr]* | AGG(attr)) FROM coll
        [JOIN coll ON coll.attr = coll.attr]
        [WHERE coll.attr CMP literal]

    AGG in {SUM, AVG, COUNT, MIN, MAX};  CMP in {=, !=, <, <=, >, >=}

Compilation is deterministic: selections sit directly above their source,
every source is projected onto the minimal attribute set needed
downstream, the join (if any) sits above the projections, and an
aggregate (if any) is the sink.  The endurance indicator of a plan is its
operator-node count, which is exactly the number of trusted-core
invocations a faithful execution performs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

from .documents import (
    AGGREGATE_FUNCS,
    COMPARISON_OPS,
    AttrRef,
    Literal,
    Predicate,
    Scalar,
    collection_id,
)
from .encoding import sorted_deep
from .errors import QuerySyntaxError, SemanticError

# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<punct>[(),.])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"SELECT", "FROM", "JOIN", "ON", "WHERE", "TRUE", "FALSE", "NULL"}
_AGG_KEYWORDS = {f.upper() for f in AGGREGATE_FUNCS}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


@dataclass(frozen=True)
class Aggregate:
    func: str
    attr: AttrRef


@dataclass(frozen=True)
class Query:
    """Parsed query: either a plain attribute list or a single aggregate."""

    select_attrs: tuple[AttrRef, ...]
    aggregate: Aggregate | None
    sources: tuple[str, ...]
    join_on: tuple[AttrRef, AttrRef] | None
    where: Predicate | None


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_keyword(self, word: str) -> _Token:
        tok = self.next()
        if tok.kind != "ident" or tok.text.upper() != word:
            raise QuerySyntaxError(f"expected {word}, got {tok.text or 'end of input'}", tok.pos)
        return tok

    def expect_punct(self, ch: str) -> None:
        tok = self.next()
        if tok.kind != "punct" or tok.text != ch:
            raise QuerySyntaxError(f"expected {ch!r}, got {tok.text or 'end of input'}", tok.pos)

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text.upper() == word

    def ident(self, what: str) -> str:
        tok = self.next()
        if tok.kind != "ident":
            raise QuerySyntaxError(f"expected {what}, got {tok.text or 'end of input'}", tok.pos)
        if tok.text.upper() in _KEYWORDS:
            raise QuerySyntaxError(f"keyword {tok.text} cannot be used as {what}", tok.pos)
        return tok.text

    def attr_ref(self, require_qualified: bool = False) -> AttrRef:
        first = self.ident("attribute")
        if self.peek().kind == "punct" and self.peek().text == ".":
            self.next()
            return AttrRef(first, self.ident("attribute"))
        if require_qualified:
            raise QuerySyntaxError(
                f"attribute {first!r} must be qualified as collection.attr",
                self.tokens[self.i - 1].pos,
            )
        return AttrRef(None, first)

    def literal(self) -> Scalar:
        tok = self.next()
        if tok.kind == "number":
            return float(tok.text) if any(c in tok.text for c in ".eE") else int(tok.text)
        if tok.kind == "string":
            return tok.text[1:-1].replace("''", "'")
        if tok.kind == "ident":
            word = tok.text.upper()
            if word == "TRUE":
                return True
            if word == "FALSE":
                return False
            if word == "NULL":
                return None
        raise QuerySyntaxError(f"expected literal, got {tok.text or 'end of input'}", tok.pos)


def parse(text: str) -> Query:
    """Parse a query expression; raises QuerySyntaxError with a position."""
    if not text or not text.strip():
        raise QuerySyntaxError("empty query expression", 0)
    p = _Parser(text)
    p.expect_keyword("SELECT")

    aggregate = None
    select_attrs: tuple[AttrRef, ...] = ()
    tok = p.peek()
    if tok.kind == "ident" and tok.text.upper() in _AGG_KEYWORDS:
        func_tok = p.next()
        p.expect_punct("(")
        attr = p.attr_ref()
        p.expect_punct(")")
        aggregate = Aggregate(func_tok.text.lower(), attr)
    else:
        attrs = [p.attr_ref()]
        while p.peek().kind == "punct" and p.peek().text == ",":
            p.next()
            attrs.append(p.attr_ref())
        select_attrs = tuple(attrs)

    p.expect_keyword("FROM")
    sources = [p.ident("collection name")]
    join_on = None
    if p.at_keyword("JOIN"):
        p.next()
        sources.append(p.ident("collection name"))
        p.expect_keyword("ON")
        left = p.attr_ref(require_qualified=True)
        op_tok = p.next()
        if op_tok.kind != "op" or op_tok.text != "=":
            raise QuerySyntaxError("join condition must be an equality", op_tok.pos)
        right = p.attr_ref(require_qualified=True)
        join_on = (left, right)

    where = None
    if p.at_keyword("WHERE"):
        p.next()
        lhs = p.attr_ref(require_qualified=True)
        op_tok = p.next()
        if op_tok.kind != "op" or op_tok.text not in COMPARISON_OPS:
            raise QuerySyntaxError(
                f"expected comparison operator, got {op_tok.text or 'end of input'}",
                op_tok.pos,
            )
        where = Predicate(lhs, op_tok.text, Literal(p.literal()))

    tail = p.next()
    if tail.kind != "eof":
        raise QuerySyntaxError(f"unexpected trailing input {tail.text!r}", tail.pos)
    if len(sources) != len(set(sources)):
        raise QuerySyntaxError("self-joins are not supported", 0)
    return Query(select_attrs, aggregate, tuple(sources), join_on, where)


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

SOURCE = "source"
OPERATOR_NAMES = ("projection", "selection", "aggregation", "join")


@dataclass(frozen=True)
class PlanNode:
    node_id: int
    op_name: str
    params: dict[str, Any] = field(hash=False)
    inputs: tuple[int, ...]


@dataclass(frozen=True)
class QueryPlan:
    nodes: tuple[PlanNode, ...]
    sink: int

    def node(self, node_id: int) -> PlanNode:
        return self.nodes[node_id]

    def operator_nodes(self) -> tuple[PlanNode, ...]:
        return tuple(n for n in self.nodes if n.op_name != SOURCE)


def encode_plan(plan: QueryPlan) -> bytes:
    """Canonical plan bytes: nodes by node_id, fixed field order per node."""
    nodes = [
        {
            "node_id": n.node_id,
            "op_name": n.op_name,
            "params": sorted_deep(n.params),
            "inputs": list(n.inputs),
        }
        for n in sorted(plan.nodes, key=lambda n: n.node_id)
    ]
    return json.dumps(
        {"nodes": nodes, "sink": plan.sink}, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _resolve(
    ref: AttrRef, sources: tuple[str, ...], catalog: dict[str, set[str]]
) -> AttrRef:
    if ref.collection is not None:
        if ref.collection not in sources:
            raise SemanticError(f"{ref.collection!r} is not a source of this query")
        if ref.attr not in catalog[ref.collection]:
            raise SemanticError(f"{ref.collection}.{ref.attr} does not exist")
        return ref
    owners = [s for s in sources if ref.attr in catalog[s]]
    if not owners:
        raise SemanticError(f"attribute {ref.attr!r} not found in any source")
    if len(owners) > 1:
        raise SemanticError(
            f"attribute {ref.attr!r} is ambiguous across {owners}; qualify it"
        )
    return AttrRef(owners[0], ref.attr)


def plan(query: Query, catalog: dict[str, set[str]]) -> QueryPlan:
    """Compile a parsed query against the collection catalog."""
    for src in query.sources:
        if src not in catalog:
            raise SemanticError(f"collection {src!r} is not declared")
    sources = query.sources

    join_on = None
    if query.join_on is not None:
        left = _resolve(query.join_on[0], sources, catalog)
        right = _resolve(query.join_on[1], sources, catalog)
        if {left.collection, right.collection} != set(sources):
            raise SemanticError("join condition must reference both sources once each")
        if left.collection != sources[0]:
            left, right = right, left
        join_on = (left, right)

    where = None
    if query.where is not None:
        lhs = _resolve(query.where.lhs, sources, catalog)
        where = Predicate(lhs, query.where.op, query.where.rhs)

    if query.aggregate is not None:
        out_attrs = (_resolve(query.aggregate.attr, sources, catalog),)
    else:
        out_attrs = tuple(_resolve(a, sources, catalog) for a in query.select_attrs)
    if len(sources) == 2:
        shared = (catalog[sources[0]] & catalog[sources[1]]) - {
            a.attr for a in join_on
        }
        for ref in out_attrs:
            if ref.attr in shared:
                raise SemanticError(
                    f"attribute {ref.attr!r} exists in both sources and is renamed "
                    "by the join; not supported in the select list"
                )

    nodes: list[PlanNode] = []

    def add(op_name: str, params: dict, inputs: tuple[int, ...]) -> int:
        nodes.append(PlanNode(len(nodes), op_name, params, inputs))
        return len(nodes) - 1

    source_ids = {
        src: add(SOURCE, {"collection": src, "cid": collection_id(src)}, ())
        for src in sources
    }

    top: dict[str, int] = dict(source_ids)
    if where is not None:
        src = where.lhs.collection
        top[src] = add(
            "selection",
            {"collection": src, "predicate": where.to_param()},
            (top[src],),
        )

    # minimal per-source projections: select/aggregate attrs plus the join key
    needed: dict[str, set[str]] = {src: set() for src in sources}
    for ref in out_attrs:
        needed[ref.collection].add(ref.attr)
    if join_on is not None:
        needed[join_on[0].collection].add(join_on[0].attr)
        needed[join_on[1].collection].add(join_on[1].attr)
    for src in sources:
        top[src] = add(
            "projection",
            {"collection": src, "attrs": sorted(needed[src])},
            (top[src],),
        )

    if join_on is not None:
        left, right = join_on
        current = add(
            "join",
            {
                "on": {
                    "left": left.to_param(),
                    "right": right.to_param(),
                }
            },
            (top[left.collection], top[right.collection]),
        )
        current_attrs = set(needed[left.collection]) | set(needed[right.collection])
        if left.attr != right.attr:
            current_attrs |= {left.attr, right.attr}
    else:
        current = top[sources[0]]
        current_attrs = needed[sources[0]]

    if query.aggregate is not None:
        current = add(
            "aggregation",
            {"func": query.aggregate.func, "attr": out_attrs[0].attr},
            (current,),
        )
    else:
        select_names = {a.attr for a in out_attrs}
        if select_names != current_attrs:
            current = add(
                "projection",
                {"collection": None, "attrs": sorted(select_names)},
                (current,),
            )
    return QueryPlan(tuple(nodes), current)


def compute_endurance(query_plan: QueryPlan) -> int:
    """Budget units for one faithful execution: one per operator node."""
    return len(query_plan.operator_nodes())


def compile_query(text: str, catalog: dict[str, set[str]]) -> QueryPlan:
    return plan(parse(text), catalog)


# ---------------------------------------------------------------------------
# Canonical execution schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Invocation:
    """One trusted-core operator call: name, params, and input references.

    Each input is either ("state", k) pointing at the k-th invocation's
    output, or ("unlock", collection_name) pointing at the initial state.
    """

    f_name: str
    f_params: dict[str, Any] = field(hash=False)
    inputs: tuple[tuple[str, Any], ...]


def plan_invocations(query_plan: QueryPlan) -> tuple[Invocation, ...]:
    """The canonical operator schedule: plan nodes in node_id order.

    Both the host (to execute) and the auditor (to predict the trace) use
    this; any reordering is an audit-visible deviation.
    """
    op_index: dict[int, int] = {}
    invocations: list[Invocation] = []
    for node in sorted(query_plan.nodes, key=lambda n: n.node_id):
        if node.op_name == SOURCE:
            continue
        inputs = []
        for input_id in node.inputs:
            producer = query_plan.node(input_id)
            if producer.op_name == SOURCE:
                inputs.append(("unlock", producer.params["collection"]))
            else:
                inputs.append(("state", op_index[input_id]))
        op_index[node.node_id] = len(invocations)
        invocations.append(Invocation(node.op_name, node.params, tuple(inputs)))
    return tuple(invocations)
