"""Debug: encode ground truth into the stitch model, check feasibility."""
from netinfer import *
from netinfer.measurement import derive_constraints
from netinfer.model import ModelConfig
from netinfer.solver import check_assignment
from netinfer.cli import build_source_trees
from netinfer.topology import source_tree_of

topo = "r a\na c\na d\nc h0\nc h1\nd h2\nd h3\nr h4\nr h5\n"
hosts = ["h0","h1","h2","h3","h4","h5"]
net = compute_routes(parse_topology(topo), hosts)
cs = derive_constraints(net, psm_sampling="none", dm_mode="relative")
trees = build_source_trees(net)
m = build_stitch_model(trees, cs.dms, ModelConfig(alpha="0.2", node_budget=4, variant="stitch"))

def leafset(tree, seg):
    out = set()
    def walk(end):
        kids = tree.outgoing.get(end, ())
        if not kids:
            out.add(end)
        for sid in kids:
            walk(tree.segment_by_id(sid).end)
    walk(seg.end)
    return frozenset(out)

def seg_links_physical(net, S):
    phys = source_tree_of(net, S)
    children = {}
    for (s, t), path in net.paths.items():
        if s != S: continue
        for a, b2 in zip(path, path[1:]):
            children.setdefault(a, set()).add(b2)
    def reaches(c, target):
        stack=[c]; seen=set()
        while stack:
            x=stack.pop()
            if x==target: return True
            seen.add(x)
            stack.extend(y for y in children.get(x,()) if y not in seen)
        return False
    chains = {}
    for seg in phys.segments:
        chain = [seg.start]
        while chain[-1] != seg.end:
            nxt = None
            for c in sorted(children.get(chain[-1], ())):
                if reaches(c, seg.end):
                    nxt = c; break
            chain.append(nxt)
        chains[leafset(phys, seg)] = list(zip(chain, chain[1:]))
    return chains

ground_internal = sorted(net.graph.nodes - set(hosts))
s0 = hosts[0]
def mdist(node):
    for (s, t), p in net.paths.items():
        if s == s0 and node in p: return p.index(node)
    return 0
ground_internal.sort(key=lambda n: (mdist(n), n))
to_anon = {g: m.internal[i] for i, g in enumerate(ground_internal)}
def mapn(n): return to_anon.get(n, n)

asg = {v.vid: 0 for v in m.vars}
for (S, T), path in net.paths.items():
    mp = [mapn(n) for n in path]
    for a, b2 in zip(mp, mp[1:]):
        asg[("s", S, a, b2)] = 1
    for k, n in enumerate(mp):
        asg[("m", S, n)] = max(asg[("m", S, n)], k)
        asg[("v", S, T, n)] = 1
for S in hosts:
    tree = trees[S]
    chains = seg_links_physical(net, S)
    for seg in tree.segments:
        ls = leafset(tree, seg)
        assert ls in chains, (S, seg.id, sorted(ls), sorted(map(sorted, chains)))
        for a, b2 in chains[ls]:
            asg[("p", S, seg.id, mapn(a), mapn(b2))] = 1
for v in m.vars:
    if v.vid[0] == "s" and asg[v.vid]:
        _, S, i, j = v.vid
        a, b2 = (i, j) if m.nodes.index(i) < m.nodes.index(j) else (j, i)
        asg[("w", a, b2)] = 1
for v in m.vars:
    if v.vid[0] == "d":
        _, T, i, j = v.vid
        asg[v.vid] = int(any(S != T and asg.get(("s", S, i, j), 0) and asg.get(("v", S, T, j), 0) for S in hosts))
for v in m.vars:
    if v.vid[0] == "z":
        key = v.vid[1]
        if key == "sv":
            _, _, S, T, i, j = v.vid
            asg[v.vid] = asg[("s", S, i, j)] * asg[("v", S, T, j)]
        elif key == "ms":
            _, _, S, i, j = v.vid
            asg[v.vid] = asg[("m", S, i)] * asg[("s", S, i, j)]
for v in m.vars:
    if v.vid[0] == "b":
        _, S, sid, j = v.vid
        inc = sum(asg.get(("p", S, sid, i, j), 0) for i in m.nodes if i != j)
        outg = sum(asg.get(("p", S, sid, j, k), 0) for k in m.nodes if k != j)
        asg[v.vid] = int(inc == 1 and outg == 0)
for v in m.vars:
    if v.vid[0] == "u":
        k = v.vid[1]
        asg[v.vid] = int(any(asg[vd.vid] for vd in m.vars if vd.vid[0] == "s" and (vd.vid[2] == k or vd.vid[3] == k)))

bad = check_assignment(m, asg)
print(len(bad), "violations; objective", m.objective_value(asg))
for x in bad[:10]:
    print("  ", x)
