"""Score an inferred network against ground truth.

NS: percentage of links matched under the best host-fixing one-to-one node
mapping, over the union of links.  PED: mean node-level edit distance
between corresponding paths under that mapping.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

from .topology import Graph, Network


class EvaluateError(Exception):
    pass


EXACT_SEARCH_LIMIT = 10  # internal nodes per side; beyond this a heuristic runs


@dataclass
class NodeMapping:
    pairs: dict  # ground node -> inferred node (hosts map to themselves)
    matched_links: int
    union_links: int
    certified: bool = True

    def apply(self, node: str) -> str | None:
        return self.pairs.get(node)


@dataclass
class EvalReport:
    ns: float
    mapping: NodeMapping
    per_path_ped: dict
    ped: float
    collapsed_pairs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ns": self.ns,
            "ped": self.ped,
            "matched_links": self.mapping.matched_links,
            "union_links": self.mapping.union_links,
            "mapping": {k: v for k, v in sorted(self.mapping.pairs.items())},
            "certified": self.mapping.certified,
            "per_path_ped": {f"{s}>{t}": d for (s, t), d in sorted(self.per_path_ped.items())},
            "collapsed_pairs": [list(p) for p in self.collapsed_pairs],
        }


def _graph_hosts(x) -> tuple[Graph, tuple[str, ...]]:
    if isinstance(x, Network):
        return x.graph, x.hosts
    graph, hosts = x
    return graph, tuple(hosts)


def _matched_count(edges1, phi, edges2) -> int:
    n = 0
    for a, b in edges1:
        fa, fb = phi.get(a), phi.get(b)
        if fa is None or fb is None:
            continue
        if (fa, fb) in edges2 or (fb, fa) in edges2:
            n += 1
    return n


def _search_best_mapping(left_nodes, right_nodes, edges_l, edges_r, base_phi):
    """Branch and bound over injective assignments left -> right.

    The bound is admissible: current matches plus the smaller of (left edges
    that could still match) and (right edges not yet matched).
    """
    order = sorted(left_nodes, key=lambda n: (-sum(n in e for e in edges_l), n))
    best = {"matched": -1, "phi": None}
    right_sorted = sorted(right_nodes)

    def undecided_edges(phi):
        n = 0
        for a, b in edges_l:
            fa, fb = phi.get(a), phi.get(b)
            if fa is None or fb is None:
                n += 1
        return n

    def recurse(idx, phi, used, matched):
        if idx == len(order):
            if matched > best["matched"]:
                best["matched"] = matched
                best["phi"] = dict(phi)
            return
        if matched + min(undecided_edges(phi), len(edges_r) - matched) <= best["matched"]:
            return
        node = order[idx]
        for cand in right_sorted:
            if cand in used:
                continue
            phi[node] = cand
            used.add(cand)
            gain = 0
            for a, b in edges_l:
                if a == node or b == node:
                    other = b if a == node else a
                    fo = phi.get(other)
                    if fo is not None and ((cand, fo) in edges_r or (fo, cand) in edges_r):
                        gain += 1
            recurse(idx + 1, phi, used, matched + gain)
            used.discard(cand)
            del phi[node]
        # mapping every smaller-side node is never worse: extensions only add
        # matches, so no explicit "leave unmapped" branch is needed

    phi0 = dict(base_phi)
    recurse(0, phi0, set(), _matched_count(edges_l, phi0, edges_r))
    phi = {k: v for k, v in best["phi"].items() if v is not None}
    return best["matched"], phi


def _greedy_mapping(left_nodes, right_nodes, edges_l, edges_r, base_phi):
    """Neighborhood-overlap seeding plus pairwise swap improvement."""
    adj_l: dict[str, set] = {}
    for a, b in edges_l:
        adj_l.setdefault(a, set()).add(b)
        adj_l.setdefault(b, set()).add(a)
    adj_r: dict[str, set] = {}
    for a, b in edges_r:
        adj_r.setdefault(a, set()).add(b)
        adj_r.setdefault(b, set()).add(a)

    phi = dict(base_phi)
    used = set()
    for node in sorted(left_nodes, key=lambda n: (-len(adj_l.get(n, ())), n)):
        best_c, best_s = None, -1
        for cand in sorted(right_nodes):
            if cand in used:
                continue
            mapped_nb = {phi.get(x) for x in adj_l.get(node, ())} - {None}
            score = len(mapped_nb & adj_r.get(cand, set()))
            if score > best_s:
                best_c, best_s = cand, score
        if best_c is not None:
            phi[node] = best_c
            used.add(best_c)

    def total(p):
        return _matched_count(edges_l, {k: v for k, v in p.items() if v is not None}, edges_r)

    cur = total(phi)
    improved = True
    left_list = sorted(left_nodes)
    while improved:
        improved = False
        for a, b in itertools.combinations(left_list, 2):
            phi[a], phi[b] = phi.get(b), phi.get(a)
            t = total(phi)
            if t > cur:
                cur = t
                improved = True
            else:
                phi[a], phi[b] = phi[b], phi[a]
    return cur, {k: v for k, v in phi.items() if v is not None}


def ns_score(ground, inferred) -> tuple[float, NodeMapping]:
    """Best-mapping link agreement as a percentage; see NodeMapping for the
    witness.  Exact search up to EXACT_SEARCH_LIMIT internal nodes per side,
    greedy (certified=False) beyond.
    """
    g1, h1 = _graph_hosts(ground)
    g2, h2 = _graph_hosts(inferred)
    if set(h1) != set(h2):
        raise EvaluateError(f"host sets differ: {sorted(h1)} vs {sorted(h2)}")
    hostset = set(h1)
    int1 = sorted(g1.nodes - hostset)
    int2 = sorted(g2.nodes - hostset)
    base_phi = {h: h for h in hostset}

    flip = len(int1) > len(int2)  # search maps the smaller internal side
    if flip:
        left, right = int2, int1
        edges_l, edges_r = g2.edges, g1.edges
    else:
        left, right = int1, int2
        edges_l, edges_r = g1.edges, g2.edges

    certified = True
    if min(len(int1), len(int2)) <= EXACT_SEARCH_LIMIT:
        matched, phi = _search_best_mapping(left, right, edges_l, edges_r, base_phi)
    else:
        matched, phi = _greedy_mapping(left, right, edges_l, edges_r, base_phi)
        certified = False

    if flip:
        phi = {v: k for k, v in phi.items() if v is not None}
        phi.update(base_phi)

    union = len(g1.edges) + len(g2.edges) - matched
    ns = 100.0 if union == 0 else 100.0 * matched / union
    return ns, NodeMapping(pairs=phi, matched_links=matched, union_links=union, certified=certified)


def levenshtein(a, b) -> int:
    """Node insertions, deletions and substitutions between two sequences."""
    prev = list(range(len(b) + 1))
    for i, xa in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, xb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (xa != xb))
        prev = cur
    return prev[len(b)]


def ped(paths_ground: dict, paths_inferred: dict, mapping: NodeMapping) -> tuple[float, dict]:
    """Mean per-pair edit distance between mapped ground paths and inferred paths."""
    per_pair: dict = {}
    for key, path in paths_ground.items():
        if key not in paths_inferred:
            raise EvaluateError(f"missing inferred path for {key}")
        mapped = tuple(
            mapping.pairs.get(n, f"?{n}") for n in path  # unmapped nodes never match
        )
        per_pair[key] = levenshtein(mapped, paths_inferred[key])
    mean = sum(per_pair.values()) / len(per_pair) if per_pair else 0.0
    return mean, per_pair


def evaluate_networks(ground: Network, inferred: Network) -> EvalReport:
    """NS plus PED under the NS-optimal mapping."""
    ns, mapping = ns_score(ground, inferred)
    mean, per_pair = ped(ground.paths, inferred.paths, mapping)
    return EvalReport(ns=ns, mapping=mapping, per_path_ped=per_pair, ped=mean)


def _contract(graph: Graph, paths: dict, pairs) -> tuple[Graph, dict]:
    """Contract node pairs (edges) in a graph and rewrite paths."""
    alias = {}

    def rep(n):
        while n in alias:
            n = alias[n]
        return n

    for a, b in pairs:
        ra, rb = rep(a), rep(b)
        if ra == rb:
            continue
        keep, drop = sorted((ra, rb))
        alias[drop] = keep
    nodes = {rep(n) for n in graph.nodes}
    edges = set()
    for a, b in graph.edges:
        ra, rb = rep(a), rep(b)
        if ra != rb:
            edges.add((ra, rb) if ra <= rb else (rb, ra))
    new_paths = {}
    for key, path in paths.items():
        out = []
        for n in path:
            r = rep(n)
            if not out or out[-1] != r:
                out.append(r)
        new_paths[key] = tuple(out)
    return Graph(nodes, edges), new_paths


def collapse_search(ground: Network, inferred: Network, max_pairs: int = 2) -> EvalReport:
    """Best NS after contracting up to max_pairs adjacent internal-node pairs
    in the ground truth; ties broken toward lower PED, then first subset."""
    hostset = set(ground.hosts)
    internal_edges = sorted(
        e for e in ground.graph.edges if e[0] not in hostset and e[1] not in hostset
    )
    best: EvalReport | None = None
    for k in range(max_pairs + 1):
        for combo in itertools.combinations(internal_edges, k):
            graph, paths = _contract(ground.graph, ground.paths, combo)
            ns, mapping = ns_score((graph, ground.hosts), inferred)
            mean, per_pair = ped(paths, inferred.paths, mapping)
            if (
                best is None
                or ns > best.ns + 1e-12
                or (abs(ns - best.ns) <= 1e-12 and mean < best.ped)
            ):
                best = EvalReport(
                    ns=ns,
                    mapping=mapping,
                    per_path_ped=per_pair,
                    ped=mean,
                    collapsed_pairs=list(combo),
                )
    return best


def write_sweep_csv(rows: list[dict], path: str) -> None:
    """CSV for robustness sweeps: NS/PED per error probability and seed."""
    fieldnames = ["p", "seed", "ns", "ped", "violations", "flipped", "status"]
    extra = [k for k in (rows[0] if rows else {}) if k not in fieldnames]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames + extra)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
