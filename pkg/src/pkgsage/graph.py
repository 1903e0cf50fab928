"""Per-admission person-centric graphs.

Each index admission becomes a hub-and-spoke graph: node 0 is the patient,
and every present attribute value (or clinical code) hangs off it as its own
node. Exclusion masks are applied before nodes are created.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import InvalidNode, PkgSageError
from .ingest import AdmissionRecord, facet_value
from .schema import Arity, Schema, View

PATIENT = "patient"


@dataclass(frozen=True)
class Node:
    id: int
    node_type: str
    token: str


@dataclass(frozen=True)
class FacetMask:
    excluded_facets: frozenset = frozenset()
    excluded_codes: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "excluded_facets", frozenset(self.excluded_facets))
        codes = {k: frozenset(str(c).strip().upper() for c in v)
                 for k, v in self.excluded_codes.items()}
        object.__setattr__(self, "excluded_codes", codes)

    @property
    def is_empty(self) -> bool:
        return not self.excluded_facets and not any(self.excluded_codes.values())

    def check(self, schema: Schema) -> None:
        unknown = self.excluded_facets - set(schema.facet_names)
        if unknown:
            raise PkgSageError(f"mask excludes unknown facets {sorted(unknown)}")
        for name in self.excluded_codes:
            if name not in schema.facet_names or schema.facet(name).view is not View.CLINICAL:
                raise PkgSageError(f"excluded_codes key {name!r} is not a clinical facet")

    def to_dict(self) -> dict:
        return {
            "excluded_facets": sorted(self.excluded_facets),
            "excluded_codes": {k: sorted(v) for k, v in sorted(self.excluded_codes.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FacetMask":
        return cls(frozenset(data.get("excluded_facets", ())),
                   dict(data.get("excluded_codes", {})))


EMPTY_MASK = FacetMask()


@dataclass(frozen=True)
class PatientGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    directed: bool
    label: int
    admission_id: str

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def tokens(self) -> list[str]:
        return [n.token for n in self.nodes]

    def to_dict(self) -> dict:
        return {
            "admission_id": self.admission_id,
            "label": self.label,
            "directed": self.directed,
            "nodes": [{"type": n.node_type, "token": n.token} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PatientGraph":
        nodes = tuple(Node(i, n["type"], n["token"]) for i, n in enumerate(data["nodes"]))
        edges = tuple((int(s), int(d)) for s, d in data["edges"])
        return cls(nodes, edges, bool(data["directed"]), int(data["label"]),
                   str(data["admission_id"]))


def build_graph(record: AdmissionRecord, label: int, schema: Schema,
                mask: FacetMask = EMPTY_MASK) -> PatientGraph:
    nodes = [Node(0, PATIENT, PATIENT)]
    for facet in schema.facets:
        if facet.name in mask.excluded_facets:
            continue
        value = facet_value(record, facet)
        if facet.arity is Arity.MULTI:
            dropped = mask.excluded_codes.get(facet.name, frozenset())
            values = sorted(c for c in value if c not in dropped)
        else:
            values = [] if value is None else [value]
        for v in values:
            nodes.append(Node(len(nodes), facet.name, f"{facet.name}:{v}"))
    edges = tuple((0, i) for i in range(1, len(nodes)))
    return PatientGraph(tuple(nodes), edges, schema.directed, int(label), record.admission_id)


def build_graphs(pairs: Iterable[tuple[AdmissionRecord, int]], schema: Schema,
                 mask: FacetMask = EMPTY_MASK) -> list[PatientGraph]:
    return [build_graph(rec, label, schema, mask) for rec, label in pairs]


def message_edges(graph: PatientGraph) -> list[tuple[int, int]]:
    """(sender, receiver) pairs used for aggregation.

    Undirected graphs send both ways. Directed graphs store edges
    patient→attribute but carry messages against the stored direction, so the
    patient hub collects from its attributes and attributes receive nothing.
    """
    if graph.directed:
        return [(dst, src) for src, dst in graph.edges]
    return [(s, d) for s, d in graph.edges] + [(d, s) for s, d in graph.edges]


def neighbors(graph: PatientGraph, node: int) -> list[int]:
    if not 0 <= node < graph.n_nodes:
        raise InvalidNode(f"node {node} out of range for {graph.n_nodes}-node graph")
    return sorted(s for s, d in message_edges(graph) if d == node)


def validate_graph(graph: PatientGraph, schema: Schema,
                   mask: FacetMask = EMPTY_MASK) -> list[str]:
    problems = []
    n = graph.n_nodes
    if n == 0 or graph.nodes[0].node_type != PATIENT:
        problems.append("node 0 is not the patient node")
    for i, node in enumerate(graph.nodes):
        if node.id != i:
            problems.append(f"node at position {i} has id {node.id}")
        if i > 0 and node.node_type == PATIENT:
            problems.append(f"extra patient node {i}")
        if node.node_type != PATIENT and node.node_type not in schema.facet_names:
            problems.append(f"node {i} has unknown type {node.node_type!r}")
        if node.node_type in mask.excluded_facets:
            problems.append(f"node {i} belongs to excluded facet {node.node_type!r}")
        code = node.token.split(":", 1)[-1]
        if code in mask.excluded_codes.get(node.node_type, ()):
            problems.append(f"node {i} carries excluded code {node.token!r}")
    seen = set()
    for s, d in graph.edges:
        if not (0 <= s < n and 0 <= d < n):
            problems.append(f"edge ({s},{d}) has an invalid endpoint")
            continue
        if s == d:
            problems.append(f"self-loop at {s}")
        key = (s, d) if graph.directed else (min(s, d), max(s, d))
        if key in seen:
            problems.append(f"duplicate edge ({s},{d})")
        seen.add(key)
    if n:
        adj = {i: set() for i in range(n)}
        for s, d in graph.edges:
            if 0 <= s < n and 0 <= d < n:
                adj[s].add(d)
                adj[d].add(s)
        reached = {0}
        queue = deque([0])
        while queue:
            for nxt in adj[queue.popleft()] - reached:
                reached.add(nxt)
                queue.append(nxt)
        for i in sorted(set(range(n)) - reached):
            problems.append(f"node {i} is not reachable from the patient node")
    return problems


def write_graphs(graphs: Iterable[PatientGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_dict()) + "\n")


def read_graphs(path) -> list[PatientGraph]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(PatientGraph.from_dict(json.loads(line)))
    return out
