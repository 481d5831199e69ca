"""Build the linearized network-inference MIP.

Three builders share one structural core:
  * build_occam_model  - objective + PSM/DM rows + structural rows
  * soften             - move PSM/DM rows into the objective via violation vars
  * build_stitch_model - per-segment variables stitching given source trees

Variables (all integer, most binary):
  s[S,i,j]  link (i,j) lies on some path out of source S          (source_link)
  d[T,i,j]  link (i,j) lies on some path into destination T       (dest_link)
  m[S,j]    hops from S to j, 0 if j unreached from S             (distance)
  v[S,T,j]  node j lies on the path S->T                          (node_on_path)
  w[i,j]    link between i and j exists in the inferred graph     (link_presence)
  z[...]    linearization products                                (lin_aux)
  p[S,sid,i,j]  link (i,j) belongs to segment sid of S's tree     (segment_link)
  b[S,sid,j]    segment sid ends (branches) at node j             (branch_ind)
  u[k]      anonymous node k is used (symmetry breaking)          (node_use)
  viol[k]   soft-constraint violation indicators                  (violation)

Every row is linear with integer coefficients; strict inequalities over
integer expressions are pre-eliminated as "<= rhs - 1".
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass, field
from fractions import Fraction

from .measurement import ConstraintSet
from .topology import SourceTree


class ModelError(Exception):
    pass


def as_fraction(x) -> Fraction:
    """Exact rational from int/str/Fraction; floats go through str() so the
    usual decimal spellings (0.2, 0.15) mean what they say."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    if isinstance(x, str):
        return Fraction(x)
    raise ModelError(f"cannot interpret {x!r} as a rational")


@dataclass(frozen=True)
class VarDef:
    vid: tuple
    kind: str
    lb: int
    ub: int

    @property
    def fixed(self) -> bool:
        return self.lb == self.ub


@dataclass
class Row:
    coeffs: dict  # column -> int coefficient
    sense: str    # "<=" | "=" | ">="
    rhs: int
    tag: str


@dataclass(frozen=True)
class ModelConfig:
    alpha: Fraction = Fraction(1, 5)
    node_budget: int | None = None       # default |H|
    big_m: int | None = None             # default |H| + 1
    distance_bound: int | None = None    # default |V| - 1
    mode: str = "hard"                   # "hard" | "soft"
    violation_weight: Fraction | None = None
    variant: str = "standard"            # "standard" | "stitch"

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        if self.violation_weight is not None:
            object.__setattr__(self, "violation_weight", as_fraction(self.violation_weight))
        if not 0 <= self.alpha <= 1:
            raise ModelError("alpha must lie in [0, 1]")
        if self.mode not in ("hard", "soft"):
            raise ModelError(f"unknown mode {self.mode!r}")
        if self.variant not in ("standard", "stitch"):
            raise ModelError(f"unknown variant {self.variant!r}")


class MipModel:
    """A concrete integer program plus the indexing needed to read it back."""

    def __init__(self, hosts, nodes, internal, config: ModelConfig, big_m: int, distance_bound: int):
        self.hosts = tuple(hosts)
        self.nodes = tuple(nodes)
        self.internal = tuple(internal)
        self.config = config
        self.big_m = big_m
        self.distance_bound = distance_bound
        self.vars: list[VarDef] = []
        self.index: dict[tuple, int] = {}
        self.rows: list[Row] = []
        self.objective: dict[int, Fraction] = {}
        self.soft = False

    # -- construction ------------------------------------------------------

    def add_var(self, vid: tuple, kind: str, lb: int = 0, ub: int = 1) -> int:
        if vid in self.index:
            raise ModelError(f"duplicate variable {vid}")
        col = len(self.vars)
        self.vars.append(VarDef(vid, kind, lb, ub))
        self.index[vid] = col
        return col

    def add_row(self, coeffs: dict, sense: str, rhs: int, tag: str) -> int:
        coeffs = {c: a for c, a in coeffs.items() if a != 0}
        for c in coeffs:
            if not 0 <= c < len(self.vars):
                raise ModelError(f"row {tag} references undeclared column {c}")
        self.rows.append(Row(coeffs, sense, rhs, tag))
        return len(self.rows) - 1

    def add_objective(self, col: int, coef: Fraction) -> None:
        self.objective[col] = self.objective.get(col, Fraction(0)) + coef

    # -- lookup ------------------------------------------------------------

    def col(self, vid: tuple) -> int:
        return self.index[vid]

    def var(self, vid: tuple) -> VarDef:
        return self.vars[self.index[vid]]

    def has_var(self, vid: tuple) -> bool:
        return vid in self.index

    def vids_of_kind(self, kind: str):
        return [v.vid for v in self.vars if v.kind == kind]

    def count_kind(self, kind: str) -> int:
        return sum(1 for v in self.vars if v.kind == kind)

    def summary(self) -> dict:
        kinds: dict[str, int] = {}
        for v in self.vars:
            kinds[v.kind] = kinds.get(v.kind, 0) + 1
        return {
            "variables": len(self.vars),
            "binaries": sum(1 for v in self.vars if v.lb >= 0 and v.ub <= 1),
            "rows": len(self.rows),
            "kinds": kinds,
            "hosts": list(self.hosts),
            "nodes": list(self.nodes),
            "mode": self.config.mode,
            "variant": self.config.variant,
        }

    def objective_value(self, assignment: dict) -> Fraction:
        total = Fraction(0)
        for col, coef in self.objective.items():
            total += coef * assignment[self.vars[col].vid]
        return total


def linearize(model: MipModel, x_vid: tuple, y_vid: tuple, z_vid: tuple | None = None):
    """Replace the product x*y with a fresh variable z plus linear rows.

    x must be binary.  If y is binary, z is binary with
      z <= x, z <= y, z >= x + y - 1.
    If y is an integer with bounds [0, I], z is integer with
      z <= I*x, z <= y, z >= y - (1 - x)*I.
    Returns (z_vid, row_indices).
    """
    xd, yd = model.var(x_vid), model.var(y_vid)
    if (xd.lb, xd.ub) != (0, 1):
        xd, yd = yd, xd
        x_vid, y_vid = y_vid, x_vid
    if (xd.lb, xd.ub) != (0, 1):
        raise ModelError(f"unsupported product shape: {x_vid} * {y_vid}")
    x, y = model.col(x_vid), model.col(y_vid)
    if z_vid is None:
        z_vid = ("z", x_vid, y_vid)
    if yd.ub <= 1 and yd.lb >= 0:
        z = model.add_var(z_vid, "lin_aux", 0, 1)
        rows = [
            model.add_row({z: 1, x: -1}, "<=", 0, "lin"),
            model.add_row({z: 1, y: -1}, "<=", 0, "lin"),
            model.add_row({x: 1, y: 1, z: -1}, "<=", 1, "lin"),
        ]
    else:
        if yd.lb < 0:
            raise ModelError("integer factor must be bounded below by 0")
        bound = yd.ub
        z = model.add_var(z_vid, "lin_aux", 0, bound)
        rows = [
            model.add_row({z: 1, x: -bound}, "<=", 0, "lin"),
            model.add_row({z: 1, y: -1}, "<=", 0, "lin"),
            # z >= y - (1-x)*I; the companion "z >= y" rule would force z = y
            # even when x = 0, so it is intentionally absent
            model.add_row({y: 1, z: -1, x: bound}, "<=", bound, "lin"),
        ]
    return z_vid, rows


class _Builder:
    """Shared scaffolding for the standard and stitch variants."""

    def __init__(self, hosts, constraints: ConstraintSet | None, config: ModelConfig,
                 n_segment_like: int = 0):
        hosts = tuple(dict.fromkeys(hosts))
        if not hosts:
            raise ModelError("empty host set")
        budget = config.node_budget if config.node_budget is not None else len(hosts)
        if budget < 0:
            raise ModelError("node budget must be >= 0")
        internal = []
        taken = set(hosts)
        i = 0
        while len(internal) < budget:
            name = f"n{i}"
            i += 1
            if name not in taken:
                internal.append(name)
                taken.add(name)
        nodes = list(hosts) + internal
        big_m = config.big_m if config.big_m is not None else len(hosts) + 1
        if big_m < len(hosts) + 1:
            raise ModelError("big_m must be at least |H| + 1")
        dist_bound = (
            config.distance_bound if config.distance_bound is not None else len(nodes) - 1
        )
        if dist_bound < max(1, len(nodes) - 1) and dist_bound < budget + len(hosts):
            raise ModelError("distance_bound too small for the candidate node set")
        self.hosts = hosts
        self.internal = tuple(internal)
        self.nodes = tuple(nodes)
        self.constraints = constraints
        self.config = config
        self.m = MipModel(hosts, nodes, internal, config, big_m, dist_bound)
        self._zcache: dict[tuple, object] = {}

    # -- variables ---------------------------------------------------------

    def declare_core(self):
        m = self.m
        hosts, nodes = self.hosts, self.nodes
        hostset = set(hosts)
        I = m.distance_bound
        for S in hosts:
            for i in nodes:
                for j in nodes:
                    if i == j:
                        continue
                    # boundary zeros (no incoming at the source, no outgoing
                    # at other hosts) are folded into the domain
                    ub = 0 if (j == S or (i in hostset and i != S)) else 1
                    m.add_var(("s", S, i, j), "source_link", 0, ub)
        for T in hosts:
            for i in nodes:
                for j in nodes:
                    if i != j:
                        m.add_var(("d", T, i, j), "dest_link", 0, 1)
        for S in hosts:
            for j in nodes:
                ub = 0 if j == S else I
                m.add_var(("m", S, j), "distance", 0, ub)
        for S in hosts:
            for T in hosts:
                if S == T:
                    continue
                for j in nodes:
                    if j in hostset:
                        val = 1 if j in (S, T) else 0
                        m.add_var(("v", S, T, j), "node_on_path", val, val)
                    else:
                        m.add_var(("v", S, T, j), "node_on_path", 0, 1)
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                m.add_var(("w", nodes[a], nodes[b]), "link_presence", 0, 1)

    def w_col(self, i: str, j: str) -> int:
        a, b = self.nodes.index(i), self.nodes.index(j)
        if a > b:
            i, j = j, i
        return self.m.col(("w", i, j))

    # -- cached, constant-folding products ----------------------------------

    def _product(self, key: tuple, x_vid: tuple, y_vid: tuple):
        """Product of a binary and a (binary or bounded-int) variable as an
        expression: None for 0, a column for 1*var, (coef, col) for c*var,
        or the column of a shared linearization variable."""
        if key in self._zcache:
            return self._zcache[key]
        m = self.m
        xd, yd = m.var(x_vid), m.var(y_vid)
        if xd.fixed and xd.lb == 0 or yd.fixed and yd.lb == 0:
            expr = None
        elif xd.fixed:  # binary factor fixed at 1
            expr = (yd.lb, None) if yd.fixed else m.col(y_vid)
        elif yd.fixed:
            expr = (xd.lb * yd.lb, None) if xd.fixed else (
                m.col(x_vid) if yd.lb == 1 else ("scaled", yd.lb, m.col(x_vid))
            )
        else:
            z_vid, _rows = linearize(m, x_vid, y_vid, z_vid=("z",) + key)
            expr = m.col(z_vid)
        self._zcache[key] = expr
        return expr

    @staticmethod
    def _acc(coeffs: dict, expr, sign: int = 1):
        """Accumulate a product expression into a coefficient dict.
        Returns the constant contribution."""
        if expr is None:
            return 0
        if isinstance(expr, int):
            coeffs[expr] = coeffs.get(expr, 0) + sign
            return 0
        if isinstance(expr, tuple) and expr[0] == "scaled":
            _, c, col = expr
            coeffs[col] = coeffs.get(col, 0) + sign * c
            return 0
        if isinstance(expr, tuple) and expr[1] is None:  # pure constant
            return sign * expr[0]
        raise ModelError(f"bad expression {expr!r}")

    # -- structural rows (Eqs. 5-14 + coupling + symmetry) -------------------

    def structural_rows(self, include_forwarding_closure: bool = True):
        m = self.m
        hosts, nodes, hostset = self.hosts, self.nodes, set(hosts_ := self.hosts)
        I, M = m.distance_bound, m.big_m

        # at most one incoming link per node within each source's path set
        for S in hosts:
            for j in nodes:
                coeffs = {m.col(("s", S, i, j)): 1 for i in nodes if i != j}
                m.add_row(coeffs, "<=", 1, "src_tree")

        # at most one forward hop per node toward each destination
        for T in hosts:
            for i in nodes:
                coeffs = {m.col(("d", T, i, j)): 1 for j in nodes if j != i}
                m.add_row(coeffs, "<=", 1, "dst_tree")

        # d[T,i,j] = 1 iff some source routes through (i,j) on its way to T
        for T in hosts:
            for i in nodes:
                for j in nodes:
                    if i == j:
                        continue
                    coeffs: dict[int, int] = {}
                    const = 0
                    for S in hosts:
                        if S == T:
                            continue
                        const += self._acc(
                            coeffs, self._sv(S, T, i, j), 1
                        )
                    dcol = m.col(("d", T, i, j))
                    if not coeffs and const == 0:
                        # empty support: pin d to zero via its own row
                        m.add_row({dcol: 1}, "<=", 0, "dst_pop")
                        continue
                    hi = dict(coeffs)
                    hi[dcol] = hi.get(dcol, 0) - M
                    m.add_row(hi, "<=", -const, "dst_pop")
                    lo = {c: -a for c, a in coeffs.items()}
                    lo[dcol] = lo.get(dcol, 0) - M
                    m.add_row(lo, "<=", M - 1 + const, "dst_pop")

        # hop counters: m[S,j] = sum_i s[S,i,j] * (m[S,i] + 1)
        for S in hosts:
            for j in nodes:
                coeffs = {m.col(("m", S, j)): 1}
                const = 0
                for i in nodes:
                    if i == j:
                        continue
                    svar = m.var(("s", S, i, j))
                    if svar.ub == 0:
                        continue
                    scol = m.col(("s", S, i, j))
                    coeffs[scol] = coeffs.get(scol, 0) - 1
                    const -= self._acc(coeffs, self._ms(S, i, j), -1)
                m.add_row(coeffs, "=", const, "distance")

        # membership: v[S,T,i] = sum_j v[S,T,j] * s[S,i,j]  (internal i)
        for S in hosts:
            for T in hosts:
                if S == T:
                    continue
                for i in self.internal:
                    coeffs = {m.col(("v", S, T, i)): 1}
                    const = 0
                    for j in nodes:
                        if j == i:
                            continue
                        const -= self._acc(coeffs, self._sv(S, T, i, j), -1)
                    m.add_row(coeffs, "=", const, "node_on_path")

        # boundary: exactly one link out of the source / into each destination
        for S in hosts:
            m.add_row({m.col(("s", S, S, j)): 1 for j in nodes if j != S}, "=", 1, "bnd_src_out")
            m.add_row({m.col(("s", S, j, S)): 1 for j in nodes if j != S}, "=", 0, "bnd_src_in")
            for T in hosts:
                if T == S:
                    continue
                m.add_row({m.col(("s", S, j, T)): 1 for j in nodes if j != T}, "=", 1, "bnd_dst_in")
                m.add_row({m.col(("s", S, T, j)): 1 for j in nodes if j != T}, "=", 0, "bnd_dst_out")

        # an active outgoing link needs an incoming one (except at the source)
        if include_forwarding_closure:
            for S in hosts:
                for j in nodes:
                    if j == S:
                        continue
                    incoming = [m.col(("s", S, i, j)) for i in nodes if i != j]
                    for k in nodes:
                        if k == j:
                            continue
                        svar = m.var(("s", S, j, k))
                        if svar.ub == 0:
                            continue
                        coeffs = {c: -1 for c in incoming}
                        coeffs[m.col(("s", S, j, k))] = coeffs.get(m.col(("s", S, j, k)), 0) + 1
                        m.add_row(coeffs, "<=", 0, "fwd_closure")

        # link presence follows any source using the link, either direction
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                i, j = nodes[a], nodes[b]
                wcol = m.col(("w", i, j))
                for S in hosts:
                    for x, y in ((i, j), (j, i)):
                        svar = m.var(("s", S, x, y))
                        if svar.ub == 0:
                            continue
                        m.add_row({m.col(("s", S, x, y)): 1, wcol: -1}, "<=", 0, "w_couple")

        # symmetry breaking over interchangeable anonymous nodes: used ones
        # first, then sorted by distance from the first host
        if self.internal:
            ucols = {}
            for k in self.internal:
                ucols[k] = m.add_var(("u", k), "node_use", 0, 1)
            for k in self.internal:
                incident = []
                for S in hosts:
                    for other in nodes:
                        if other == k:
                            continue
                        for x, y in ((k, other), (other, k)):
                            if m.var(("s", S, x, y)).ub > 0:
                                incident.append(m.col(("s", S, x, y)))
                for c in incident:
                    m.add_row({c: 1, ucols[k]: -1}, "<=", 0, "sym_use")
                coeffs = {c: -1 for c in incident}
                coeffs[ucols[k]] = coeffs.get(ucols[k], 0) + 1
                m.add_row(coeffs, "<=", 0, "sym_use")
            S0 = hosts[0]
            for k1, k2 in zip(self.internal, self.internal[1:]):
                m.add_row({ucols[k2]: 1, ucols[k1]: -1}, "<=", 0, "sym_order")
                m.add_row(
                    {
                        m.col(("m", S0, k1)): 1,
                        m.col(("m", S0, k2)): -1,
                        ucols[k2]: I,
                    },
                    "<=",
                    I,
                    "sym_order",
                )

    def _sv(self, S, T, i, j):
        """s[S,i,j] * v[S,T,j], shared across the d-population and membership rows."""
        return self._product(("sv", S, T, i, j), ("s", S, i, j), ("v", S, T, j))

    def _ms(self, S, i, j):
        """m[S,i] * s[S,i,j] for the hop-counter rows."""
        return self._product(("ms", S, i, j), ("s", S, i, j), ("m", S, i))

    def _vv(self, S, a, b, i):
        key = ("vv", S, tuple(sorted((a, b))), i)
        return self._product(key, ("v", S, a, i), ("v", S, b, i))

    # -- measurement rows ----------------------------------------------------

    def psm_rows(self):
        m = self.m
        for t in self.constraints.psms:
            missing = [h for h in (t.source, *t.left, *t.right) if h not in set(self.hosts)]
            if missing:
                raise ModelError(f"PSM relation mentions unknown hosts {missing}")
            coeffs: dict[int, int] = {}
            const = 0
            for i in self.internal:
                const += self._acc(coeffs, self._vv(t.source, *t.left, i), 1)
                const -= self._acc(coeffs, self._vv(t.source, *t.right, i), -1)
            # strict "<" between integer counts: lhs + 1 <= rhs; the shared
            # +1 for the source node itself cancels on both sides
            m.add_row(coeffs, "<=", -1 - const, "psm")

    def dm_rows(self):
        m = self.m
        for d in self.constraints.dms:
            if d.kind == "rel":
                (s1, t1), (s2, t2) = d.less, d.greater
                m.add_row(
                    {m.col(("m", s1, t1)): 1, m.col(("m", s2, t2)): -1}, "<=", -1, "dm_rel"
                )
            else:
                a, b = d.pair
                m.add_row({m.col(("m", a, b)): 1}, "=", d.hops, "dm_abs")
                m.add_row({m.col(("m", b, a)): 1}, "=", d.hops, "dm_abs")

    def objective_rows(self):
        m = self.m
        alpha = self.config.alpha
        if alpha > 0:
            for S in self.hosts:
                for T in self.hosts:
                    if S != T:
                        m.add_objective(m.col(("m", S, T)), alpha)
        if alpha < 1:
            for a in range(len(self.nodes)):
                for b in range(a + 1, len(self.nodes)):
                    m.add_objective(m.col(("w", self.nodes[a], self.nodes[b])), 1 - alpha)


SOFT_TAGS = ("psm", "dm_rel", "dm_abs")


def default_violation_weight(config: ModelConfig, n_hosts: int, n_nodes: int,
                             distance_bound: int) -> Fraction:
    """Upper bound on the structural objective, doubled: violating a soft
    row is never cheaper than any structural saving unless it has to be."""
    a = config.alpha
    return 2 * (a * n_hosts * n_hosts * distance_bound + (1 - a) * n_nodes * n_nodes)


def soften(model: MipModel) -> MipModel:
    """Relax every PSM/DM row with a penalized binary violation variable.

    Mutates and returns the model.  Structural rows stay hard.  The relax
    constant must dominate the worst row violation, which for distance rows
    is the distance bound, not |H|+1.
    """
    if model.soft:
        raise ModelError("model is already soft")
    weight = model.config.violation_weight
    if weight is None:
        weight = default_violation_weight(
            model.config, len(model.hosts), len(model.nodes), model.distance_bound
        )
    relax = max(model.big_m, model.distance_bound + 1)
    n = 0
    for ridx, row in enumerate(list(model.rows)):
        if row.tag not in SOFT_TAGS:
            continue
        vcol = model.add_var(("viol", n, row.tag, ridx), "violation", 0, 1)
        n += 1
        model.add_objective(vcol, weight)
        if row.sense == "<=":
            row.coeffs[vcol] = -relax
        elif row.sense == ">=":
            row.coeffs[vcol] = relax
        else:
            # equality: split into two relaxed inequalities sharing the
            # violation variable
            hi = dict(row.coeffs)
            hi[vcol] = -relax
            lo = {c: -a for c, a in row.coeffs.items()}
            lo[vcol] = -relax
            model.rows[ridx] = Row(hi, "<=", row.rhs, row.tag)
            model.add_row(lo, "<=", -row.rhs, row.tag + "_lo")
    model.soft = True
    return model


def build_occam_model(hosts, constraints: ConstraintSet, config: ModelConfig | None = None) -> MipModel:
    """The standard variant: Eqs. 1-14 linearized, hard or soft."""
    config = config or ModelConfig()
    b = _Builder(hosts, constraints, config)
    _reject_trivially_infeasible(b, constraints)
    b.declare_core()
    b.objective_rows()
    b.psm_rows()
    b.dm_rows()
    b.structural_rows(include_forwarding_closure=True)
    if config.mode == "soft":
        soften(b.m)
    return b.m


def _reject_trivially_infeasible(b: _Builder, constraints: ConstraintSet):
    if b.config.node_budget == 0:
        reasons = []
        if constraints.psms:
            reasons.append("PSM relations need shared internal nodes")
        if any(d.kind == "rel" for d in constraints.dms):
            reasons.append("relative DMs need distances beyond one hop")
        if any(d.kind == "abs" and d.hops > 1 for d in constraints.dms):
            reasons.append("absolute DMs exceed one hop")
        if reasons:
            raise ModelError(
                "node budget 0 admits only direct host-host links: " + "; ".join(reasons)
            )


def build_stitch_model(source_trees: dict, dms, config: ModelConfig | None = None) -> MipModel:
    """The tree-stitching variant: segment variables replace PSM rows.

    source_trees maps each host to its SourceTree; all trees must agree on
    the leaf set (every host sees every other host).
    """
    config = config or ModelConfig(variant="stitch")
    if config.variant != "stitch":
        raise ModelError("config.variant must be 'stitch'")
    hosts = tuple(source_trees.keys())
    if not hosts:
        raise ModelError("no source trees given")
    hostset = set(hosts)
    for root, tree in source_trees.items():
        if not isinstance(tree, SourceTree) or tree.root != root:
            raise ModelError(f"tree for {root!r} is not rooted there")
        if set(tree.leaves) != hostset - {root}:
            raise ModelError(
                f"tree rooted at {root!r} has leaves {sorted(tree.leaves)}, "
                f"expected {sorted(hostset - {root})}"
            )
    dm_set = ConstraintSet([], list(dms))
    b = _Builder(hosts, dm_set, config)
    m = b.m
    b.declare_core()

    # segment link and branch indicator variables
    for S in hosts:
        tree = source_trees[S]
        for seg in tree.segments:
            for i in b.nodes:
                for j in b.nodes:
                    if i == j:
                        continue
                    # a segment link is also a source link, so it inherits
                    # the source-link boundary zeros
                    ub = m.var(("s", S, i, j)).ub
                    m.add_var(("p", S, seg.id, i, j), "segment_link", 0, ub)
            for j in b.internal:
                m.add_var(("b", S, seg.id, j), "branch_ind", 0, 1)

    b.objective_rows()
    b.dm_rows()
    b.structural_rows(include_forwarding_closure=False)

    for S in hosts:
        tree = source_trees[S]
        for seg in tree.segments:
            out_ids = tree.outgoing_of(seg)
            ends_at_host = seg.end in tree.leaves
            # branch indicator: segment seg's path terminates at node j
            # (an incoming segment link with no same-segment outgoing one)
            for j in b.internal:
                bcol = m.col(("b", S, seg.id, j))
                inc = [
                    m.col(("p", S, seg.id, i, j))
                    for i in b.nodes
                    if i != j and m.var(("p", S, seg.id, i, j)).ub > 0
                ]
                outg = [
                    m.col(("p", S, seg.id, j, k))
                    for k in b.nodes
                    if k != j and m.var(("p", S, seg.id, j, k)).ub > 0
                ]
                coeffs = {c: -1 for c in inc}
                coeffs[bcol] = coeffs.get(bcol, 0) + 1
                m.add_row(coeffs, "<=", 0, "seg_term_ind")
                coeffs = {c: 1 for c in inc}
                for c in outg:
                    coeffs[c] = coeffs.get(c, 0) - 1
                coeffs[bcol] = coeffs.get(bcol, 0) - 1
                m.add_row(coeffs, "<=", 0, "seg_term_ind")
            # chain continuation: an incoming segment link forces an outgoing
            # one, in the same segment or (at the branch point) in all
            # outgoing segments at once; the capacity row makes continuing
            # and branching mutually exclusive
            if not ends_at_host:
                D = len(out_ids)
                for j in b.internal:
                    same = {}
                    for k in b.nodes:
                        if k == j or m.var(("p", S, seg.id, j, k)).ub == 0:
                            continue
                        same[m.col(("p", S, seg.id, j, k))] = D
                    branch = {}
                    for sid in out_ids:
                        for k in b.nodes:
                            if k == j or m.var(("p", S, sid, j, k)).ub == 0:
                                continue
                            c = m.col(("p", S, sid, j, k))
                            branch[c] = branch.get(c, 0) + 1
                    cap = dict(same)
                    for c, a in branch.items():
                        cap[c] = cap.get(c, 0) + a
                    m.add_row(cap, "<=", D, "seg_branch_cap")
                    for i in b.nodes:
                        if i == j or m.var(("p", S, seg.id, i, j)).ub == 0:
                            continue
                        coeffs = {c: -a for c, a in cap.items()}
                        pc = m.col(("p", S, seg.id, i, j))
                        coeffs[pc] = coeffs.get(pc, 0) + D
                        m.add_row(coeffs, "<=", 0, "seg_chain")
            else:
                T = seg.end
                for j in b.nodes:
                    if j == T:
                        continue
                    outgoing = [
                        m.col(("p", S, seg.id, j, k))
                        for k in b.nodes
                        if k != j and m.var(("p", S, seg.id, j, k)).ub > 0
                    ]
                    for i in b.nodes:
                        if i == j or m.var(("p", S, seg.id, i, j)).ub == 0:
                            continue
                        coeffs = {c: -1 for c in outgoing}
                        pc = m.col(("p", S, seg.id, i, j))
                        coeffs[pc] = coeffs.get(pc, 0) + 1
                        m.add_row(coeffs, "<=", 0, "seg_chain_end")
            # at most one outgoing link per node within one segment
            for j in b.nodes:
                coeffs = {
                    m.col(("p", S, seg.id, j, k)): 1
                    for k in b.nodes
                    if k != j and m.var(("p", S, seg.id, j, k)).ub > 0
                }
                if coeffs:
                    m.add_row(coeffs, "<=", 1, "seg_one_out")
            # boundaries
            if seg.start == S:
                coeffs = {
                    m.col(("p", S, seg.id, S, k)): 1
                    for k in b.nodes
                    if k != S and m.var(("p", S, seg.id, S, k)).ub > 0
                }
                m.add_row(coeffs, "=", 1, "seg_root_out")
            if ends_at_host:
                T = seg.end
                m.add_row(
                    {
                        m.col(("p", S, seg.id, j, T)): 1
                        for j in b.nodes
                        if j != T and m.var(("p", S, seg.id, j, T)).ub > 0
                    },
                    "=",
                    1,
                    "seg_dst_in",
                )
                # outgoing at the terminal host is zero by variable domain
        # every source link belongs to exactly one segment
        for i in b.nodes:
            for j in b.nodes:
                if i == j or m.var(("s", S, i, j)).ub == 0:
                    continue
                coeffs = {
                    m.col(("p", S, seg.id, i, j)): 1 for seg in tree.segments
                }
                coeffs[m.col(("s", S, i, j))] = coeffs.get(m.col(("s", S, i, j)), 0) - 1
                m.add_row(coeffs, "=", 0, "seg_consistency")

    if config.mode == "soft":
        soften(m)
    return m
