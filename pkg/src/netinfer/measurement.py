"""Derive path-sharing and distance constraints from a ground-truth network.

PSM(S,T1,T2) is the number of links shared by the paths S->T1 and S->T2;
only relative orderings are consumed downstream.  DM(S,T) is the hop count
of the path S->T, used either relatively or as an absolute value.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, replace

from .topology import Network, Segment, SourceTree, TopologyError


class MeasurementError(Exception):
    pass


@dataclass(frozen=True)
class PsmTriple:
    """Relation PSM(source, left) < PSM(source, right); pairs stored sorted."""

    source: str
    left: tuple[str, str]
    right: tuple[str, str]
    flipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "left", tuple(sorted(self.left)))
        object.__setattr__(self, "right", tuple(sorted(self.right)))
        involved = set(self.left) | set(self.right)
        if self.source in involved:
            raise MeasurementError(f"source {self.source!r} appears among destinations")
        if self.left == self.right:
            raise MeasurementError("degenerate relation: identical pairs")

    def swap(self) -> "PsmTriple":
        return PsmTriple(self.source, self.right, self.left, flipped=not self.flipped)


@dataclass(frozen=True)
class DmRecord:
    """Either a relative hop-count relation or an absolute hop count.

    kind "rel": DM(*less) < DM(*greater).  kind "abs": DM(*pair) == hops,
    with pair canonicalized (routing is symmetric).
    """

    kind: str  # "rel" | "abs"
    less: tuple[str, str] | None = None
    greater: tuple[str, str] | None = None
    pair: tuple[str, str] | None = None
    hops: int | None = None
    flipped: bool = False

    def __post_init__(self):
        if self.kind == "rel":
            if self.less is None or self.greater is None or self.less == self.greater:
                raise MeasurementError("relative DM needs two distinct endpoint pairs")
        elif self.kind == "abs":
            if self.pair is None or self.hops is None:
                raise MeasurementError("absolute DM needs a pair and a hop count")
            object.__setattr__(self, "pair", tuple(sorted(self.pair)))
            if self.pair[0] != self.pair[1] and self.hops < 1:
                raise MeasurementError("absolute hop count below 1 for distinct hosts")
        else:
            raise MeasurementError(f"unknown DM kind {self.kind!r}")

    def swap(self) -> "DmRecord":
        if self.kind != "rel":
            return self
        return replace(self, less=self.greater, greater=self.less, flipped=not self.flipped)


@dataclass
class ConstraintSet:
    psms: list[PsmTriple]
    dms: list[DmRecord]

    def __post_init__(self):
        self.psms = list(dict.fromkeys(self.psms))
        self.dms = list(dict.fromkeys(self.dms))

    def __len__(self):
        return len(self.psms) + len(self.dms)

    def flipped_count(self) -> int:
        return sum(r.flipped for r in self.psms) + sum(r.flipped for r in self.dms)

    def to_jsonl(self) -> str:
        lines = []
        for p in self.psms:
            rec = {"type": "psm", "s": p.source, "lt": [list(p.left), list(p.right)]}
            if p.flipped:
                rec["flipped"] = True
            lines.append(json.dumps(rec, sort_keys=True))
        for d in self.dms:
            if d.kind == "rel":
                rec = {"type": "dm_rel", "lt": [list(d.less), list(d.greater)]}
            else:
                rec = {"type": "dm_abs", "pair": list(d.pair), "hops": d.hops}
            if d.flipped:
                rec["flipped"] = True
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "ConstraintSet":
        psms, dms = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MeasurementError(f"line {lineno}: bad JSON ({e})") from None
            kind = rec.get("type")
            flipped = bool(rec.get("flipped", False))
            if kind == "psm":
                psms.append(
                    PsmTriple(rec["s"], tuple(rec["lt"][0]), tuple(rec["lt"][1]), flipped=flipped)
                )
            elif kind == "dm_rel":
                dms.append(
                    DmRecord("rel", less=tuple(rec["lt"][0]), greater=tuple(rec["lt"][1]), flipped=flipped)
                )
            elif kind == "dm_abs":
                dms.append(DmRecord("abs", pair=tuple(rec["pair"]), hops=int(rec["hops"])))
            else:
                raise MeasurementError(f"line {lineno}: unknown record type {kind!r}")
        return cls(psms, dms)


def psm_value(network: Network, source: str, t1: str, t2: str) -> int:
    """Number of links shared by the paths source->t1 and source->t2."""
    if len({source, t1, t2}) != 3:
        raise MeasurementError("psm_value needs three distinct hosts")
    try:
        e1 = network.path_edges(source, t1)
        e2 = network.path_edges(source, t2)
    except KeyError as e:
        raise MeasurementError(f"missing path: {e}") from None
    return len(e1 & e2)


def hop_count(network: Network, s: str, t: str) -> int:
    return len(network.path(s, t)) - 1


def derive_constraints(
    network: Network,
    psm_sampling: str = "middle",
    dm_mode: str = "relative",
) -> ConstraintSet:
    """Measure the ground truth into a ConstraintSet.

    psm_sampling: "middle" compares pairs sharing a middle destination,
    (S;T1,T2) vs (S;T2,T3); "all_pairs" compares every pair of destination
    pairs; "none" skips PSMs.  Equal-valued comparisons emit nothing: only
    strict relations are representable.
    """
    psms: list[PsmTriple] = []
    dms: list[DmRecord] = []
    hosts = network.hosts

    if psm_sampling not in ("middle", "all_pairs", "none"):
        raise MeasurementError(f"unknown psm_sampling {psm_sampling!r}")
    if dm_mode not in ("relative", "absolute", "none"):
        raise MeasurementError(f"unknown dm_mode {dm_mode!r}")

    for s in hosts:
        dests = [h for h in hosts if h != s]
        if psm_sampling == "middle":
            for mid in dests:
                others = [d for d in dests if d != mid]
                for t1, t3 in itertools.combinations(others, 2):
                    a = psm_value(network, s, t1, mid)
                    b = psm_value(network, s, mid, t3)
                    if a < b:
                        psms.append(PsmTriple(s, (t1, mid), (mid, t3)))
                    elif b < a:
                        psms.append(PsmTriple(s, (mid, t3), (t1, mid)))
        elif psm_sampling == "all_pairs":
            pairs = list(itertools.combinations(dests, 2))
            for pa, pb in itertools.combinations(pairs, 2):
                a = psm_value(network, s, *pa)
                b = psm_value(network, s, *pb)
                if a < b:
                    psms.append(PsmTriple(s, pa, pb))
                elif b < a:
                    psms.append(PsmTriple(s, pb, pa))
        if dm_mode == "relative":
            for t1, t2 in itertools.combinations(dests, 2):
                a, b = hop_count(network, s, t1), hop_count(network, s, t2)
                if a < b:
                    dms.append(DmRecord("rel", less=(s, t1), greater=(s, t2)))
                elif b < a:
                    dms.append(DmRecord("rel", less=(s, t2), greater=(s, t1)))
    if dm_mode == "absolute":
        for s, t in itertools.combinations(hosts, 2):
            dms.append(DmRecord("abs", pair=(s, t), hops=hop_count(network, s, t)))
    return ConstraintSet(psms, dms)


def inject_errors(constraints: ConstraintSet, p: float, seed: int) -> ConstraintSet:
    """Swap the two sides of each relative record independently with probability p."""
    if not 0 <= p <= 1:
        raise MeasurementError("flip probability must be in [0, 1]")
    rng = random.Random(seed)
    psms = [t.swap() if rng.random() < p else t for t in constraints.psms]
    dms = [
        (d.swap() if rng.random() < p else d) if d.kind == "rel" else d
        for d in constraints.dms
    ]
    return ConstraintSet(psms, dms)


def verify_relations(constraints: ConstraintSet, network: Network) -> list[str]:
    """Re-evaluate every relation against the network; returns violation texts."""
    bad = []
    for t in constraints.psms:
        a = psm_value(network, t.source, *t.left)
        b = psm_value(network, t.source, *t.right)
        if not a < b:
            bad.append(f"PSM({t.source};{t.left}) < PSM({t.source};{t.right}) fails: {a} vs {b}")
    for d in constraints.dms:
        if d.kind == "rel":
            a = hop_count(network, *d.less)
            b = hop_count(network, *d.greater)
            if not a < b:
                bad.append(f"DM{d.less} < DM{d.greater} fails: {a} vs {b}")
        else:
            h = hop_count(network, *d.pair)
            if h != d.hops:
                bad.append(f"DM{d.pair} == {d.hops} fails: {h}")
    return bad


def build_source_tree(source: str, destinations, psm_order: dict) -> SourceTree:
    """Construct the logical source tree by iterative sibling merging.

    psm_order maps frozenset({t_i, t_j}) to a comparable value; only the
    ordering (and equalities) of the values matter.  The most-correlated
    pair merges first; a merge at the same value as an existing branch
    point joins that branch point instead of nesting a new one, which is
    what recovers non-binary branching.
    """
    dests = sorted(dict.fromkeys(destinations))
    if source in dests:
        raise MeasurementError("source cannot be one of the destinations")
    if not dests:
        raise MeasurementError("no destinations")

    # cluster: (members, node_sig) where node_sig is ("leaf", host) or
    # ("bp", merge_value, [children])
    clusters: list[tuple[frozenset, tuple]] = [
        (frozenset([d]), ("leaf", d)) for d in dests
    ]

    def pair_value(ca, cb):
        vals = set()
        for x in ca[0]:
            for y in cb[0]:
                key = frozenset((x, y))
                if key not in psm_order:
                    return None
                vals.add(psm_order[key])
        if len(vals) != 1:
            raise MeasurementError(
                f"inconsistent ordering: clusters {sorted(ca[0])} and {sorted(cb[0])} "
                f"see multiple sharing values {sorted(vals)}"
            )
        return vals.pop()

    while len(clusters) > 1:
        best = None
        best_val = None
        for i, j in itertools.combinations(range(len(clusters)), 2):
            v = pair_value(clusters[i], clusters[j])
            if v is None:
                continue
            if best_val is None or v > best_val:
                best, best_val = (i, j), v  # ties keep the earliest index pair
        if best is None:
            raise MeasurementError("insufficient ordering information to resolve a merge")
        i, j = best
        ca, cb = clusters[i], clusters[j]
        children = []
        for c in (ca, cb):
            sig = c[1]
            if sig[0] == "bp" and sig[1] == best_val:
                children.extend(sig[2])  # same sharing value: same branch point
            else:
                children.append(sig)
        merged = (ca[0] | cb[0], ("bp", best_val, children))
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(merged)

    segments: list[Segment] = []
    outgoing: dict[str, tuple] = {}
    branch_points: set[str] = set()
    counter = [0]

    def emit(sig, parent_anchor):
        sid = f"s{counter[0]}"
        counter[0] += 1
        if sig[0] == "leaf":
            segments.append(Segment(id=sid, start=parent_anchor, end=sig[1]))
            outgoing.setdefault(parent_anchor, ())
            outgoing[parent_anchor] = outgoing[parent_anchor] + (sid,)
            return
        bp = f"bp{len(branch_points)}"
        branch_points.add(bp)
        segments.append(Segment(id=sid, start=parent_anchor, end=bp))
        outgoing[parent_anchor] = outgoing.get(parent_anchor, ()) + (sid,)
        for child in sorted(sig[2], key=_sig_key):
            emit(child, bp)

    root_sig = clusters[0][1]
    if root_sig[0] == "leaf":
        segments.append(Segment(id="s0", start=source, end=root_sig[1]))
        outgoing[source] = ("s0",)
    else:
        emit(root_sig, source)
    return SourceTree(
        root=source,
        segments=tuple(segments),
        branch_points=frozenset(branch_points),
        outgoing=outgoing,
        leaves=frozenset(dests),
    )


def _sig_key(sig):
    if sig[0] == "leaf":
        return (0, sig[1])
    return (1, min(_leaf_names(sig)))


def _leaf_names(sig):
    if sig[0] == "leaf":
        return [sig[1]]
    out = []
    for c in sig[2]:
        out.extend(_leaf_names(c))
    return out


def psm_order_of(network: Network, source: str) -> dict:
    """Exact PSM values per destination pair, as build_source_tree input."""
    dests = [h for h in network.hosts if h != source]
    return {
        frozenset((a, b)): psm_value(network, source, a, b)
        for a, b in itertools.combinations(dests, 2)
    }


def psm_direction_accuracy(constraints: ConstraintSet, network: Network) -> float:
    """Fraction of PSM records whose direction does not contradict ground truth."""
    if not constraints.psms:
        return 1.0
    good = 0
    for t in constraints.psms:
        a = psm_value(network, t.source, *t.left)
        b = psm_value(network, t.source, *t.right)
        if a <= b:
            good += 1
    return good / len(constraints.psms)
