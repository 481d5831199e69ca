"""Discrete emulation of probe-train measurement.

A train of back-to-back packets leaves the source toward three receivers.
Each link adds its base delay plus a queueing term drawn once per train per
link (exponential, mean base*load/(1-load)) and shared by every packet of
the train crossing that link; shared path prefixes therefore induce delay
covariance, which orders the path-sharing relations.  Hop counts come from
a TTL initialized to 255 and decremented at every node past the source.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import random
from dataclasses import dataclass, field

from .measurement import ConstraintSet, DmRecord, PsmTriple
from .topology import Network

log = logging.getLogger(__name__)

TTL_INITIAL = 255


class ProbeSimError(Exception):
    pass


@dataclass(frozen=True)
class LinkModel:
    edge: tuple[str, str]
    base_delay: float = 1.0
    background_load: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "edge", tuple(sorted(self.edge)))
        if self.base_delay <= 0:
            raise ProbeSimError(f"base_delay must be positive on {self.edge}")
        if not 0 <= self.background_load < 1:
            raise ProbeSimError(f"background_load must be in [0,1) on {self.edge}")

    @property
    def queue_mean(self) -> float:
        return self.base_delay * self.background_load / (1 - self.background_load)


def parse_link_models(text: str) -> dict:
    """JSON map "A B" -> {"base_delay":..., "load":...}; "*" sets a default."""
    raw = json.loads(text)
    out = {}
    for key, spec in raw.items():
        if key == "*":
            out["*"] = LinkModel(("*", "*"), spec.get("base_delay", 1.0), spec.get("load", 0.0))
            continue
        parts = key.split()
        if len(parts) != 2:
            raise ProbeSimError(f"bad link key {key!r}, expected '<id> <id>'")
        out[tuple(sorted(parts))] = LinkModel(
            tuple(parts), spec.get("base_delay", 1.0), spec.get("load", 0.0)
        )
    return out


def _model_for(link_models: dict, edge: tuple[str, str]) -> LinkModel:
    edge = tuple(sorted(edge))
    if edge in link_models:
        return link_models[edge]
    if "*" in link_models:
        d = link_models["*"]
        return LinkModel(edge, d.base_delay, d.background_load)
    return LinkModel(edge, 1.0, 0.0)


@dataclass
class TrainBatch:
    source: str
    receivers: tuple[str, str, str]
    n_trains: int
    delays: dict          # receiver -> list of per-train delays
    covariance: dict      # frozenset({Ti,Tj}) -> sample covariance


@dataclass
class ProbeReport:
    batches: list[TrainBatch] = field(default_factory=list)
    ttl_hops: dict = field(default_factory=dict)  # (S,T) -> hop count


def _child_seed(seed: int, *parts) -> int:
    h = hashlib.sha256(("|".join([str(seed), *map(str, parts)])).encode()).digest()
    return int.from_bytes(h[:8], "big")


def _sample_cov(xs, ys) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    return sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / (n - 1)


def simulate_trains(
    network: Network,
    link_models: dict,
    source: str,
    receivers,
    n_trains: int = 500,
    seed: int = 0,
) -> ProbeReport:
    """Send n_trains three-packet trains from source to the given receivers."""
    receivers = tuple(receivers)
    if len(receivers) != 3 or len(set(receivers)) != 3:
        raise ProbeSimError("exactly three distinct receivers per train")
    if n_trains < 2:
        raise ProbeSimError("need at least two trains for a covariance estimate")
    path_links = {}
    for r in receivers:
        if (source, r) not in network.paths:
            raise ProbeSimError(f"receiver {r!r} unreachable from {source!r}")
        p = network.path(source, r)
        path_links[r] = [tuple(sorted(e)) for e in zip(p, p[1:])]

    rng = random.Random(_child_seed(seed, source, *receivers))
    all_links = sorted({l for links in path_links.values() for l in links})
    delays = {r: [] for r in receivers}
    for _ in range(n_trains):
        q = {}
        for link in all_links:
            lm = _model_for(link_models, link)
            mean = lm.queue_mean
            q[link] = rng.expovariate(1.0 / mean) if mean > 0 else 0.0
        for r in receivers:
            total = 0.0
            for link in path_links[r]:
                total += _model_for(link_models, link).base_delay + q[link]
            delays[r].append(total)

    cov = {}
    for a, b in itertools.combinations(receivers, 2):
        cov[frozenset((a, b))] = _sample_cov(delays[a], delays[b])

    report = ProbeReport()
    report.batches.append(
        TrainBatch(source=source, receivers=receivers, n_trains=n_trains, delays=delays, covariance=cov)
    )
    for r in receivers:
        ttl_seen = TTL_INITIAL - (len(network.path(source, r)) - 1)
        report.ttl_hops[(source, r)] = TTL_INITIAL - ttl_seen
    return report


def combine_reports(reports) -> ProbeReport:
    out = ProbeReport()
    for rep in reports:
        out.batches.extend(rep.batches)
        out.ttl_hops.update(rep.ttl_hops)
    return out


def report_to_constraints(report: ProbeReport) -> ConstraintSet:
    """One PSM relation per train batch by covariance comparison, plus one
    absolute DM record per measured (S,T).  Equal covariances are skipped
    (logged with a count)."""
    psms = []
    degenerate = 0
    for batch in report.batches:
        t1, t2, t3 = batch.receivers
        c12 = batch.covariance[frozenset((t1, t2))]
        c23 = batch.covariance[frozenset((t2, t3))]
        if c12 > c23:
            psms.append(PsmTriple(batch.source, (t2, t3), (t1, t2)))
        elif c23 > c12:
            psms.append(PsmTriple(batch.source, (t1, t2), (t2, t3)))
        else:
            degenerate += 1
    if degenerate:
        log.warning("skipped %d train batches with equal covariances", degenerate)
    dms = {}
    for (s, t), hops in sorted(report.ttl_hops.items()):
        key = tuple(sorted((s, t)))
        if key not in dms:
            dms[key] = DmRecord("abs", pair=key, hops=hops)
    return ConstraintSet(psms, list(dms.values()))


def measure_network(
    network: Network,
    link_models: dict,
    n_trains: int = 500,
    seed: int = 0,
) -> tuple[ConstraintSet, ProbeReport]:
    """Probe every canonical middle-destination triple from every source."""
    reports = []
    for s in network.hosts:
        dests = [h for h in network.hosts if h != s]
        for mid in dests:
            others = [d for d in dests if d != mid]
            for t1, t3 in itertools.combinations(others, 2):
                reports.append(
                    simulate_trains(network, link_models, s, (t1, mid, t3), n_trains, seed)
                )
    report = combine_reports(reports)
    return report_to_constraints(report), report
