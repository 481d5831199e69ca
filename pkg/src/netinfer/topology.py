"""Graph and network data model: file ingestion, route generation, DOT export.

A Network bundles an undirected graph, an ordered host set, and one routing
path per ordered host pair.  Routes are lexicographically-smallest shortest
paths, which makes them deterministic and gives them the two structural
properties the rest of the toolkit relies on: per-source link sets form
trees, and the next hop toward a destination is independent of the source.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field


class TopologyError(Exception):
    """Raised for malformed topology/hosts input or broken network invariants."""


def _canon_edge(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class Graph:
    """Undirected simple graph over string node ids."""

    __slots__ = ("nodes", "edges", "_adj")

    def __init__(self, nodes, edges):
        self.nodes = frozenset(nodes)
        canon = set()
        for a, b in edges:
            if a == b:
                raise TopologyError(f"self-loop at node {a!r}")
            if a not in self.nodes or b not in self.nodes:
                raise TopologyError(f"edge ({a!r}, {b!r}) has endpoint outside node set")
            canon.add(_canon_edge(a, b))
        self.edges = frozenset(canon)
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        self._adj = {n: tuple(sorted(s)) for n, s in adj.items()}

    def neighbors(self, node: str) -> tuple[str, ...]:
        return self._adj[node]

    def has_edge(self, a: str, b: str) -> bool:
        return _canon_edge(a, b) in self.edges

    def degree(self, node: str) -> int:
        return len(self._adj[node])

    def __eq__(self, other):
        return isinstance(other, Graph) and self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, self.edges))

    def __repr__(self):
        return f"Graph(|V|={len(self.nodes)}, |E|={len(self.edges)})"


class Network:
    """Graph + ordered hosts + one simple path per ordered host pair.

    Construction validates every invariant: paths live on graph edges, are
    simple, start/end at their host pair, per-source links form a tree, and
    the successor toward any destination is unique across sources.
    """

    __slots__ = ("graph", "hosts", "paths")

    def __init__(self, graph: Graph, hosts, paths: dict):
        self.graph = graph
        seen = []
        for h in hosts:
            if h in seen:
                continue
            seen.append(h)
        self.hosts = tuple(seen)
        self.paths = {k: tuple(v) for k, v in paths.items()}
        self._validate()

    def _validate(self):
        g = self.graph
        for h in self.hosts:
            if h not in g.nodes:
                raise TopologyError(f"host {h!r} not in graph")
        for (s, t), path in self.paths.items():
            if len(path) < 2 or path[0] != s or path[-1] != t:
                raise TopologyError(f"path ({s},{t}) does not run from source to destination")
            if len(set(path)) != len(path):
                raise TopologyError(f"path ({s},{t}) repeats a node")
            for a, b in zip(path, path[1:]):
                if not g.has_edge(a, b):
                    raise TopologyError(f"path ({s},{t}) uses missing edge ({a},{b})")
        # per-source tree: at most one predecessor per node over all paths from S
        for s in self.hosts:
            pred: dict[str, str] = {}
            for (src, _t), path in self.paths.items():
                if src != s:
                    continue
                for a, b in zip(path, path[1:]):
                    if pred.setdefault(b, a) != a:
                        raise TopologyError(
                            f"source-tree violation: node {b!r} has two predecessors from {s!r}"
                        )
        # source-oblivious: unique successor toward each destination
        for t in self.hosts:
            succ: dict[str, str] = {}
            for (_s, dst), path in self.paths.items():
                if dst != t:
                    continue
                for a, b in zip(path, path[1:]):
                    if succ.setdefault(a, b) != b:
                        raise TopologyError(
                            f"source-oblivious violation: node {a!r} has two successors toward {t!r}"
                        )

    def path(self, s: str, t: str) -> tuple[str, ...]:
        return self.paths[(s, t)]

    def path_edges(self, s: str, t: str) -> set[tuple[str, str]]:
        p = self.paths[(s, t)]
        return {_canon_edge(a, b) for a, b in zip(p, p[1:])}

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.graph == other.graph
            and self.hosts == other.hosts
            and self.paths == other.paths
        )

    def __repr__(self):
        return f"Network(|V|={len(self.graph.nodes)}, |E|={len(self.graph.edges)}, |H|={len(self.hosts)})"


@dataclass(frozen=True)
class Segment:
    """One chain of the logical source tree, between two anchor nodes."""

    id: str
    start: str  # root, a branch point, or a transit host
    end: str    # a branch point or a host


@dataclass(frozen=True)
class SourceTree:
    """Logical tree of path bifurcations from one root host.

    Chains of degree-2 internal nodes are collapsed into segments.  The
    outgoing map gives, per anchor node, the segment ids leaving it; for a
    segment s ending at a branch point b, outgoing[b] is O(s).
    """

    root: str
    segments: tuple[Segment, ...]
    branch_points: frozenset[str]
    outgoing: dict = field(hash=False)
    leaves: frozenset[str]

    def __post_init__(self):
        for bp in self.branch_points:
            if len(self.outgoing.get(bp, ())) < 2:
                raise TopologyError(f"branch point {bp!r} has fewer than 2 outgoing segments")

    def segment_by_id(self, sid: str) -> Segment:
        for seg in self.segments:
            if seg.id == sid:
                return seg
        raise KeyError(sid)

    def outgoing_of(self, seg: Segment) -> tuple[str, ...]:
        """Segment ids branching off at seg's terminal node (O(s))."""
        return tuple(self.outgoing.get(seg.end, ()))

    def canonical(self):
        """Structure signature, invariant to branch-point naming (leaves keep ids)."""
        children: dict[str, list[str]] = {}
        start_of: dict[str, list[Segment]] = {}
        for seg in self.segments:
            start_of.setdefault(seg.start, []).append(seg)

        def sig(node: str):
            segs = start_of.get(node, [])
            if not segs:
                return ("leaf", node)
            return ("node", tuple(sorted(sig(seg.end) for seg in segs)))

        return sig(self.root)

    def isomorphic(self, other: "SourceTree") -> bool:
        return self.root == other.root and self.canonical() == other.canonical()


def parse_topology(text: str) -> Graph:
    """Parse the edge-list format: one "<id> <id>" per line, '#' comments."""
    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"line {lineno}: expected two node ids, got {len(parts)}")
        a, b = parts
        if a == b:
            raise TopologyError(f"line {lineno}: self-loop at node {a!r}")
        nodes.add(a)
        nodes.add(b)
        edges.add(_canon_edge(a, b))
    return Graph(nodes, edges)


def parse_hosts(text: str, graph: Graph | None = None) -> tuple[str, ...]:
    """Parse one node-id per line; validate membership when a graph is given."""
    hosts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if len(line.split()) != 1:
            raise TopologyError(f"line {lineno}: expected one node id")
        if graph is not None and line not in graph.nodes:
            raise TopologyError(f"line {lineno}: host {line!r} not present in topology")
        if line not in hosts:
            hosts.append(line)
    return tuple(hosts)


def _lexmin_parents(graph: Graph, source: str) -> dict[str, str]:
    """BFS parents such that every tree path is the lexicographically
    smallest shortest path from source.

    Nodes of one BFS level are ranked by (rank of parent, node id); each
    node's parent is its neighbor of minimal rank in the previous level.
    Subpaths of lex-min shortest paths are themselves lex-min, which is what
    makes routes source-oblivious and per-source trees well formed.
    """
    rank = {source: 0}
    parent: dict[str, str] = {}
    level = [source]
    while level:
        nxt: dict[str, str] = {}
        for node in level:
            for nb in graph.neighbors(node):
                if nb in rank:
                    continue
                cur = nxt.get(nb)
                if cur is None or rank[node] < rank[cur]:
                    nxt[nb] = node
        if not nxt:
            break
        # lex order of whole paths: compare parents' paths first, then own id
        ordered = sorted(nxt, key=lambda n: (rank[nxt[n]], n))
        for i, n in enumerate(ordered):
            rank[n] = i  # ranks are only ever compared within one level
            parent[n] = nxt[n]
        level = ordered
    return parent


def compute_routes(graph: Graph, hosts) -> Network:
    """Shortest-path routes for all ordered host pairs, pruned to used nodes/edges.

    Ties are broken toward the lexicographically smallest path, so routing
    is deterministic, per-source trees hold, and next hops are
    source-oblivious by construction.
    """
    hosts = tuple(dict.fromkeys(hosts))
    for h in hosts:
        if h not in graph.nodes:
            raise TopologyError(f"host {h!r} not in graph")
    paths: dict[tuple[str, str], tuple[str, ...]] = {}
    for s in hosts:
        parent = _lexmin_parents(graph, s)
        for t in hosts:
            if t == s:
                continue
            if t not in parent:
                raise TopologyError(f"host pair ({s!r}, {t!r}) is disconnected")
            rev = [t]
            while rev[-1] != s:
                rev.append(parent[rev[-1]])
            paths[(s, t)] = tuple(reversed(rev))
    used_nodes: set[str] = set(hosts)
    used_edges: set[tuple[str, str]] = set()
    for path in paths.values():
        used_nodes.update(path)
        used_edges.update(_canon_edge(a, b) for a, b in zip(path, path[1:]))
    pruned = Graph(used_nodes, used_edges)
    return Network(pruned, hosts, paths)


def attach_hosts(graph: Graph, count: int, seed: int, prefix: str = "h") -> tuple[Graph, tuple[str, ...]]:
    """Attach `count` new leaf hosts to randomly chosen nodes (seeded)."""
    candidates = sorted(graph.nodes)
    if count > len(candidates):
        raise TopologyError(f"cannot attach {count} hosts to {len(candidates)} nodes")
    rng = random.Random(seed)
    picks = rng.sample(candidates, count)
    names = []
    existing = set(graph.nodes)
    i = 0
    while len(names) < count:
        name = f"{prefix}{i}"
        i += 1
        if name not in existing:
            names.append(name)
            existing.add(name)
    nodes = set(graph.nodes) | set(names)
    edges = set(graph.edges) | {_canon_edge(n, p) for n, p in zip(names, picks)}
    return Graph(nodes, edges), tuple(names)


def source_tree_of(network: Network, root: str) -> SourceTree:
    """Logical tree of path bifurcations from root, degree-2 chains collapsed."""
    if root not in network.hosts:
        raise TopologyError(f"root {root!r} is not a host")
    children: dict[str, set[str]] = {}
    on_tree: set[str] = {root}
    for (s, _t), path in network.paths.items():
        if s != root:
            continue
        on_tree.update(path)
        for a, b in zip(path, path[1:]):
            children.setdefault(a, set()).add(b)
    hosts_on = {h for h in network.hosts if h in on_tree}
    anchors = {root} | hosts_on | {n for n, ch in children.items() if len(ch) >= 2}

    segments: list[Segment] = []
    outgoing: dict[str, list[str]] = {}
    counter = 0
    stack = [root]
    while stack:
        anchor = stack.pop()
        for child in sorted(children.get(anchor, ()), reverse=True):
            # walk the chain down to the next anchor
            prev, node = anchor, child
            while node not in anchors:
                nxt = children.get(node, set())
                if len(nxt) != 1:
                    raise TopologyError(f"malformed source tree at node {node!r}")
                prev, node = node, next(iter(nxt))
            sid = f"s{counter}"
            counter += 1
            segments.append(Segment(id=sid, start=anchor, end=node))
            outgoing.setdefault(anchor, []).append(sid)
            stack.append(node)
    branch_points = frozenset(
        n for n in anchors if n not in hosts_on and n != root and len(children.get(n, ())) >= 2
    )
    if len(children.get(root, ())) >= 2 and root not in hosts_on:
        branch_points |= {root}
    leaves = frozenset(h for h in hosts_on if h != root)
    return SourceTree(
        root=root,
        segments=tuple(segments),
        branch_points=branch_points,
        outgoing={k: tuple(v) for k, v in outgoing.items()},
        leaves=leaves,
    )


_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _dot_quote(s: str) -> str:
    if _ID_RE.match(s):
        return s
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(network: Network) -> str:
    """Deterministic Graphviz text; hosts drawn as boxes, internals as circles."""
    out = ["graph topology {"]
    hostset = set(network.hosts)
    for n in sorted(network.graph.nodes):
        shape = "box" if n in hostset else "circle"
        out.append(f"  {_dot_quote(n)} [shape={shape}];")
    for a, b in sorted(network.graph.edges):
        out.append(f"  {_dot_quote(a)} -- {_dot_quote(b)};")
    out.append("}")
    return "\n".join(out) + "\n"


_DOT_NODE_RE = re.compile(r'^\s*("(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_]*)\s*\[shape=(\w+)\];?\s*$')
_DOT_EDGE_RE = re.compile(
    r'^\s*("(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_]*)\s*--\s*("(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_]*)\s*;?\s*$'
)


def _dot_unquote(tok: str) -> str:
    if tok.startswith('"'):
        return tok[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    return tok


def parse_dot(text: str) -> tuple[Graph, tuple[str, ...]]:
    """Parse the subset of DOT produced by export_dot; returns (graph, hosts)."""
    nodes: set[str] = set()
    hosts: list[str] = []
    edges: set[tuple[str, str]] = set()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("graph") or line == "}":
            continue
        m = _DOT_NODE_RE.match(line)
        if m:
            node = _dot_unquote(m.group(1))
            nodes.add(node)
            if m.group(2) == "box":
                hosts.append(node)
            continue
        m = _DOT_EDGE_RE.match(line)
        if m:
            a, b = _dot_unquote(m.group(1)), _dot_unquote(m.group(2))
            nodes.update((a, b))
            edges.add(_canon_edge(a, b))
            continue
        raise TopologyError(f"unrecognized DOT line: {raw!r}")
    return Graph(nodes, edges), tuple(sorted(hosts))


def network_to_dict(network: Network) -> dict:
    return {
        "nodes": sorted(network.graph.nodes),
        "edges": [list(e) for e in sorted(network.graph.edges)],
        "hosts": list(network.hosts),
        "paths": {f"{s}>{t}": list(p) for (s, t), p in sorted(network.paths.items())},
    }


def network_from_dict(d: dict) -> Network:
    graph = Graph(d["nodes"], [tuple(e) for e in d["edges"]])
    paths = {}
    for key, p in d["paths"].items():
        s, t = key.split(">", 1)
        paths[(s, t)] = tuple(p)
    return Network(graph, d["hosts"], paths)


def write_network(network: Network, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(network), f, sort_keys=True, indent=2)
        f.write("\n")


def read_network(path: str) -> Network:
    with open(path, encoding="utf-8") as f:
        return network_from_dict(json.load(f))
