"""Benchmark criterion-6/8 scale: 4-5 hosts, <=4 internal, hard + stitch."""
import random, sys, time
from fractions import Fraction
from netinfer import *
from netinfer.measurement import derive_constraints
from netinfer.model import ModelConfig
from netinfer.solver import SolverConfig, solve
from netinfer.cli import build_source_trees

def random_ground(seed):
    rng = random.Random(seed)
    k = rng.randint(1, 4)                       # internal nodes
    internal = [f"i{x}" for x in range(k)]
    edges = set()
    for idx in range(1, k):                     # random internal tree
        edges.add(tuple(sorted((internal[idx], internal[rng.randrange(idx)]))))
    extra = rng.randint(0, 1) if k >= 3 else 0  # sometimes one cycle edge
    while extra:
        a, b = rng.sample(internal, 2)
        e = tuple(sorted((a, b)))
        if e not in edges:
            edges.add(e); extra -= 1
    nh = rng.randint(4, 5)
    hosts = [f"h{x}" for x in range(nh)]
    for h in hosts:
        edges.add(tuple(sorted((h, rng.choice(internal)))))
    g = Graph(set(internal) | set(hosts), edges)
    return compute_routes(g, hosts)

psm_mode = sys.argv[1] if len(sys.argv) > 1 else "middle"
dm_mode = sys.argv[2] if len(sys.argv) > 2 else "relative"
n_inst = int(sys.argv[3]) if len(sys.argv) > 3 else 8

hard_ns = []
for seed in range(n_inst):
    net = random_ground(seed)
    k = len(net.graph.nodes) - len(net.hosts)
    cs = derive_constraints(net, psm_sampling=psm_mode, dm_mode=dm_mode)
    t0 = time.time()
    m = build_occam_model(net.hosts, cs, ModelConfig(alpha="0.2", node_budget=k))
    sol = solve(m, SolverConfig(rel_gap=Fraction(3,20), time_limit=290))
    t1 = time.time()
    if sol.assignment is None:
        print(f"seed {seed}: |H|={len(net.hosts)} k={k} status {sol.status} nodes {sol.stats['nodes']} {t1-t0:.1f}s", flush=True)
        continue
    inf = graph_construct_1(net.hosts, sol)
    rep = evaluate_networks(net, inf)
    hard_ns.append(rep.ns)
    ver = verify_solution(inf, constraints=cs, mode="psm_dm")
    # stitch on the same instance
    trees = build_source_trees(net)
    t2 = time.time()
    ms = build_stitch_model(trees, cs.dms if dm_mode != "none" else [], ModelConfig(alpha="0.2", node_budget=k, variant="stitch"))
    sol2 = solve(ms, SolverConfig(rel_gap=Fraction(3,20), time_limit=290))
    t3 = time.time()
    line = f"seed {seed}: |H|={len(net.hosts)} k={k} hard NS {rep.ns:.0f} ped {rep.ped:.2f} ok={ver['ok']} ({t1-t0:.1f}s, {sol.stats['nodes']}n)"
    if sol2.assignment is not None:
        inf2 = graph_construct_2(net.hosts, trees, sol2)
        rep2 = evaluate_networks(net, inf2)
        ver2 = verify_solution(inf2, source_trees=trees, mode="stitch")
        line += f" | stitch NS {rep2.ns:.0f} iso={ver2['ok']} ({t3-t2:.1f}s, {sol2.stats['nodes']}n)"
    else:
        line += f" | stitch {sol2.status} ({t3-t2:.1f}s, {sol2.stats['nodes']}n)"
    print(line, flush=True)
print("hard NS mean:", sum(hard_ns)/len(hard_ns) if hard_ns else None)
