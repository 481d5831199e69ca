"""Exact branch-and-bound over the integer models, plus LP-file interop.

The search is depth-first over binary (then general integer) variables with
bounds propagation on every row and objective-bound pruning.  All row
arithmetic is integer; objective comparisons use a common-denominator
integer scaling of the rational coefficients, so there are no float ties.

Determinism: for a fixed (model, config) the search visits the same nodes
and returns the same Solution, independent of thread count (the search runs
single-threaded; a `threads` setting is accepted and ignored).  A run that
hits `time_limit` may stop at a machine-dependent point; use `node_limit`
where bit-reproducible truncation matters.
"""

from __future__ import annotations

import math
import random
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .model import MipModel


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rel_gap: Fraction = Fraction(3, 20)  # stop within 15% of optimal
    time_limit: float | None = None
    node_limit: int | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        gap = self.rel_gap
        if not isinstance(gap, Fraction):
            gap = Fraction(str(gap))
            object.__setattr__(self, "rel_gap", gap)
        if not 0 <= gap < 1:
            raise SolverError("rel_gap must lie in [0, 1)")


@dataclass
class Solution:
    status: str  # "optimal" | "gap_feasible" | "infeasible" | "timeout"
    assignment: dict | None
    objective: Fraction | None
    bound: Fraction
    stats: dict = field(default_factory=dict)

    def value(self, vid) -> int:
        return self.assignment[vid]


def check_assignment(model: MipModel, assignment: dict) -> list[str]:
    """Exact re-verification of an assignment against every model row."""
    bad = []
    vals = [assignment[v.vid] for v in model.vars]
    for idx, row in enumerate(model.rows):
        total = sum(a * vals[c] for c, a in row.coeffs.items())
        ok = (
            total <= row.rhs if row.sense == "<=" else
            total >= row.rhs if row.sense == ">=" else
            total == row.rhs
        )
        if not ok:
            bad.append(f"row {idx} [{row.tag}]: activity {total} violates {row.sense} {row.rhs}")
    for v in model.vars:
        x = assignment[v.vid]
        if not v.lb <= x <= v.ub:
            bad.append(f"variable {v.vid}: value {x} outside [{v.lb}, {v.ub}]")
    return bad


class _Search:
    """Normalized arrays + trail-based DFS.  Rows are all '<='."""

    def __init__(self, model: MipModel, config: SolverConfig):
        self.model = model
        self.config = config
        n = len(model.vars)
        self.lb = [v.lb for v in model.vars]
        self.ub = [v.ub for v in model.vars]

        # integer objective: scale rationals by the common denominator
        denom = 1
        for c in model.objective.values():
            denom = denom * c.denominator // math.gcd(denom, c.denominator)
        self.obj_denom = denom
        self.obj = [0] * n
        for col, c in model.objective.items():
            self.obj[col] = int(c * denom)

        # normalize rows to <=
        cols_list: list[tuple] = []
        coefs_list: list[tuple] = []
        rhs_list: list[int] = []
        for row in model.rows:
            items = sorted(row.coeffs.items())
            cs = tuple(c for c, _ in items)
            asx = tuple(a for _, a in items)
            if row.sense in ("<=", "="):
                cols_list.append(cs)
                coefs_list.append(asx)
                rhs_list.append(row.rhs)
            if row.sense in (">=", "="):
                cols_list.append(cs)
                coefs_list.append(tuple(-a for a in asx))
                rhs_list.append(-row.rhs)
        self.row_cols = cols_list
        self.row_coefs = coefs_list
        self.row_rhs = rhs_list
        nr = len(cols_list)

        self.var_rows: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for r in range(nr):
            for c, a in zip(cols_list[r], coefs_list[r]):
                self.var_rows[c].append((r, a))
        self.var_rows = [tuple(x) for x in self.var_rows]

        self.minact = [0] * nr
        self.maxact = [0] * nr
        for r in range(nr):
            lo = hi = 0
            for c, a in zip(cols_list[r], coefs_list[r]):
                if a > 0:
                    lo += a * self.lb[c]
                    hi += a * self.ub[c]
                else:
                    lo += a * self.ub[c]
                    hi += a * self.lb[c]
            self.minact[r] = lo
            self.maxact[r] = hi

        self.entailed = [False] * nr
        self.n_unsat = nr
        self.score = [0] * n
        for r in range(nr):
            for c in cols_list[r]:
                self.score[c] += 1

        # activity with every variable at its lower bound: a row with
        # act0 > rhs demands that some negative-coefficient variable rise,
        # which is where the structural "place a link" decisions live
        self.act0 = [
            sum(a * self.lb[c] for c, a in zip(cols_list[r], coefs_list[r]))
            for r in range(nr)
        ]
        self.neg_free = [
            sum(1 for c, a in zip(cols_list[r], coefs_list[r]) if a < 0 and self.lb[c] < self.ub[c])
            for r in range(nr)
        ]

        # objective lower bound, integer-scaled
        self.obj_lb = sum(
            o * (self.lb[c] if o > 0 else self.ub[c]) for c, o in enumerate(self.obj) if o
        )

        # trails
        self.bound_trail: list[tuple[int, int, int]] = []  # (col, which, old)
        self.ent_trail: list[int] = []
        self.pending: list[int] = []
        self.in_pending = [False] * nr

        order = list(range(n))
        if config.seed:
            random.Random(config.seed).shuffle(order)
        self.tie_rank = [0] * n
        for pos, c in enumerate(order):
            self.tie_rank[c] = pos

        self.search_vars = [
            c for c in range(n)
            if self.lb[c] < self.ub[c] and (self.var_rows[c] or self.obj[c])
        ]
        # structure-building links branch 1-first: a dive then assembles a
        # routing forest directly and propagation fills in the rest
        self.one_first = [
            model.vars[c].kind in ("source_link", "segment_link") for c in range(n)
        ]
        self.nodes = 0

    def entail_satisfied_rows(self):
        """Mark rows already satisfied for any completion (root-level sweep)."""
        for r in range(len(self.row_cols)):
            if not self.entailed[r] and self.maxact[r] <= self.row_rhs[r]:
                self._entail(r)

    # -- bound updates -------------------------------------------------------

    def _set_lb(self, col: int, val: int) -> bool:
        old = self.lb[col]
        if val <= old:
            return True
        if val > self.ub[col]:
            return False
        self.bound_trail.append((col, 0, old))
        self.lb[col] = val
        fixed_now = val == self.ub[col]
        d = val - old
        o = self.obj[col]
        if o > 0:
            self.obj_lb += o * d
        for r, a in self.var_rows[col]:
            self.act0[r] += a * d
            if fixed_now and a < 0:
                self.neg_free[r] -= 1
            if a > 0:
                self.minact[r] += a * d
                if not self.in_pending[r] and not self.entailed[r]:
                    self.in_pending[r] = True
                    self.pending.append(r)
            else:
                self.maxact[r] += a * d
                if not self.entailed[r] and self.maxact[r] <= self.row_rhs[r]:
                    self._entail(r)
        return True

    def _set_ub(self, col: int, val: int) -> bool:
        old = self.ub[col]
        if val >= old:
            return True
        if val < self.lb[col]:
            return False
        self.bound_trail.append((col, 1, old))
        self.ub[col] = val
        fixed_now = val == self.lb[col]
        d = val - old
        o = self.obj[col]
        if o < 0:
            self.obj_lb += o * d
        for r, a in self.var_rows[col]:
            if fixed_now and a < 0:
                self.neg_free[r] -= 1
            if a > 0:
                self.maxact[r] += a * d
                if not self.entailed[r] and self.maxact[r] <= self.row_rhs[r]:
                    self._entail(r)
            else:
                self.minact[r] += a * d
                if not self.in_pending[r] and not self.entailed[r]:
                    self.in_pending[r] = True
                    self.pending.append(r)
        return True

    def _entail(self, r: int):
        self.entailed[r] = True
        self.ent_trail.append(r)
        self.n_unsat -= 1
        for c in self.row_cols[r]:
            self.score[c] -= 1

    def propagate(self) -> bool:
        pending, in_pending = self.pending, self.in_pending
        cols, coefs, rhss = self.row_cols, self.row_coefs, self.row_rhs
        lb, ub, minact = self.lb, self.ub, self.minact
        while pending:
            r = pending.pop()
            in_pending[r] = False
            if self.entailed[r]:
                continue
            slack = rhss[r] - minact[r]
            if slack < 0:
                pending.clear()
                for i in range(len(in_pending)):
                    in_pending[i] = False
                return False
            for c, a in zip(cols[r], coefs[r]):
                if a > 0:
                    if a * (ub[c] - lb[c]) > slack:
                        if not self._set_ub(c, lb[c] + slack // a):
                            return self._fail()
                else:
                    if -a * (ub[c] - lb[c]) > slack:
                        if not self._set_lb(c, ub[c] - slack // -a):
                            return self._fail()
        return True

    def _fail(self) -> bool:
        self.pending.clear()
        for i in range(len(self.in_pending)):
            self.in_pending[i] = False
        return False

    # -- trail marks ---------------------------------------------------------

    def mark(self):
        return (len(self.bound_trail), len(self.ent_trail), self.obj_lb)

    def rewind(self, markpoint):
        nb, ne, obj_lb = markpoint
        while len(self.ent_trail) > ne:
            r = self.ent_trail.pop()
            self.entailed[r] = False
            self.n_unsat += 1
            for c in self.row_cols[r]:
                self.score[c] += 1
        while len(self.bound_trail) > nb:
            col, which, old = self.bound_trail.pop()
            was_fixed = self.lb[col] == self.ub[col]
            if which == 0:
                d = old - self.lb[col]
                self.lb[col] = old
                for r, a in self.var_rows[col]:
                    self.act0[r] += a * d
                    if was_fixed and a < 0:
                        self.neg_free[r] += 1
                    if a > 0:
                        self.minact[r] += a * d
                    else:
                        self.maxact[r] += a * d
            else:
                d = old - self.ub[col]
                self.ub[col] = old
                for r, a in self.var_rows[col]:
                    if was_fixed and a < 0:
                        self.neg_free[r] += 1
                    if a > 0:
                        self.maxact[r] += a * d
                    else:
                        self.minact[r] += a * d
        self.obj_lb = obj_lb

    # -- branching -----------------------------------------------------------

    def pick_demand(self) -> int | None:
        """Most-constrained demanding row: a non-entailed row that is violated
        with every variable at its lower bound must raise one of its
        negative-coefficient variables.  Returns that variable (1-first),
        from the row with the fewest candidates."""
        best_row = None
        best_need = None
        entailed, act0, rhs, neg_free = self.entailed, self.act0, self.row_rhs, self.neg_free
        for r in range(len(rhs)):
            if entailed[r] or act0[r] <= rhs[r]:
                continue
            need = neg_free[r]
            if need > 1 and (best_need is None or need < best_need):
                best_row, best_need = r, need
                if need == 2:
                    break
        if best_row is None:
            return None
        best = None
        best_key = None
        lb, ub, score, tie = self.lb, self.ub, self.score, self.tie_rank
        for c, a in zip(self.row_cols[best_row], self.row_coefs[best_row]):
            if a < 0 and lb[c] < ub[c]:
                key = (-score[c], tie[c])
                if best_key is None or key < best_key:
                    best, best_key = c, key
        return best

    def pick(self) -> int | None:
        best = None
        best_key = None
        lb, ub, score, tie = self.lb, self.ub, self.score, self.tie_rank
        for c in self.search_vars:
            if lb[c] < ub[c]:
                key = (-score[c], tie[c])
                if best_key is None or key < best_key:
                    best, best_key = c, key
        return best

    def snapshot_assignment(self) -> dict:
        vals = {}
        for col, v in enumerate(self.model.vars):
            if self.lb[col] == self.ub[col]:
                vals[v.vid] = self.lb[col]
            else:
                # every remaining row is entailed: pick the cheapest value
                vals[v.vid] = self.ub[col] if self.obj[col] < 0 else self.lb[col]
        return vals

    def objective_of_current(self) -> int:
        total = 0
        for c, o in enumerate(self.obj):
            if o:
                total += o * (self.lb[c] if o > 0 else self.ub[c])
        return total


def solve(model: MipModel, config: SolverConfig | None = None) -> Solution:
    """Branch-and-bound per the module docstring; see Solution for statuses."""
    config = config or SolverConfig()
    t0 = time.monotonic()
    s = _Search(model, config)
    gap = config.rel_gap
    D = s.obj_denom

    for r in range(len(s.row_cols)):
        s.pending.append(r)
        s.in_pending[r] = True

    best_int: int | None = None
    best_assignment: dict | None = None
    gap_pruned = False
    min_gap_pruned_lb: int | None = None
    thr_num = None  # prune when q*lb >= thr_num
    q, p = gap.denominator, gap.numerator

    def update_threshold():
        nonlocal thr_num
        thr_num = q * best_int - p * max(best_int, D)

    root_ok = s.propagate()
    if root_ok:
        s.entail_satisfied_rows()
    root_lb = s.obj_lb
    aborted = False

    if root_ok:
        # frames: (markpoint, [(col, lo, hi), ...] decisions still to try)
        frames = []

        def decide(col, lo, hi) -> bool:
            s.nodes += 1
            if s._set_lb(col, lo) and s._set_ub(col, hi):
                return s.propagate()
            s._fail()
            return False

        def choices(col, up_first: bool):
            lo, hi = s.lb[col], s.ub[col]
            if hi - lo == 1:
                a, b = (hi, lo) if up_first else (lo, hi)
                return [(col, a, a), (col, b, b)]
            mid = (lo + hi) // 2
            if up_first:
                return [(col, mid + 1, hi), (col, lo, mid)]
            return [(col, lo, mid), (col, mid + 1, hi)]

        descend = True
        while True:
            if s.nodes & 255 == 0 and config.time_limit is not None:
                if time.monotonic() - t0 > config.time_limit:
                    aborted = True
                    break
            if config.node_limit is not None and s.nodes > config.node_limit:
                aborted = True
                break

            if descend:
                prune = False
                if best_int is not None and q * s.obj_lb >= thr_num:
                    if s.obj_lb < best_int:
                        gap_pruned = True
                        if min_gap_pruned_lb is None or s.obj_lb < min_gap_pruned_lb:
                            min_gap_pruned_lb = s.obj_lb
                    prune = True
                elif s.n_unsat == 0:
                    cand = s.objective_of_current()
                    if best_int is None or cand < best_int:
                        best_int = cand
                        best_assignment = s.snapshot_assignment()
                        update_threshold()
                    prune = True
                else:
                    col = s.pick_demand()
                    up_first = True
                    if col is None:
                        col = s.pick()
                        up_first = s.one_first[col] if col is not None else False
                        up_first = up_first or (col is not None and s.obj[col] < 0)
                    if col is None:
                        # only rowless, objective-free vars remain
                        cand = s.objective_of_current()
                        if best_int is None or cand < best_int:
                            best_int = cand
                            best_assignment = s.snapshot_assignment()
                            update_threshold()
                        prune = True
                if prune:
                    descend = False
                    continue
                frames.append((s.mark(), choices(col, up_first)))

            # take the next decision of the top frame
            while frames and not frames[-1][1]:
                frames.pop()
                if frames:
                    s.rewind(frames[-1][0])
            if not frames:
                break
            markpoint, todo = frames[-1]
            s.rewind(markpoint)
            col, lo, hi = todo.pop(0)
            descend = decide(col, lo, hi)
            if not descend:
                continue

    wall = time.monotonic() - t0
    stats = {"nodes": s.nodes, "wall_time": wall}

    if best_assignment is None:
        if aborted:
            return Solution("timeout", None, None, Fraction(root_lb, D) if root_ok else Fraction(0), stats)
        return Solution("infeasible", None, None, Fraction(0), stats)

    bad = check_assignment(model, best_assignment)
    if bad:
        raise SolverError("internal error, incumbent fails verification: " + bad[0])

    objective = Fraction(best_int, D)
    if aborted:
        bound = Fraction(root_lb, D)
        status = "timeout"
    elif gap_pruned:
        lo = min(best_int, min_gap_pruned_lb if min_gap_pruned_lb is not None else best_int)
        bound = Fraction(lo, D)
        status = "gap_feasible"
    else:
        bound = objective
        status = "optimal"
    stats["verified"] = True
    return Solution(status, best_assignment, objective, bound, stats)


# -- LP-format interop --------------------------------------------------------

_NAME_OK = re.compile(r"[^A-Za-z0-9_.()]")


def _flatten(x):
    if isinstance(x, tuple):
        for part in x:
            yield from _flatten(part)
    else:
        yield x


def var_names(model: MipModel) -> list[str]:
    """Stable, invertible LP names, one per column."""
    names = []
    seen = {}
    for col, v in enumerate(model.vars):
        base = "_".join(_NAME_OK.sub("_", str(p)) for p in _flatten(v.vid))
        if base in seen or base[0].isdigit() or base[0] in "eE.":
            base = f"{base}__{col}"
        seen[base] = col
        names.append(base)
    return names


def _fmt_frac(f: Fraction) -> str:
    if f.denominator == 1:
        return str(f.numerator)
    d = f.denominator
    for b in (2, 5):
        while d % b == 0:
            d //= b
    if d == 1:  # exact decimal expansion
        val = f.numerator / f.denominator
        s = repr(val)
        if Fraction(s) == f:
            return s
        # fall through for very long expansions
        num, den = f.numerator, f.denominator
        digits = 0
        while den != 1:
            den //= 2 if den % 2 == 0 else 5
            digits += 1
        return f"{f.numerator / f.denominator:.{digits + 2}f}"
    return repr(float(f))


def _lp_terms(pairs) -> str:
    out = []
    for coef, name in pairs:
        if coef >= 0:
            out.append(f"+ {_fmt_frac(coef) if isinstance(coef, Fraction) else coef} {name}")
        else:
            mag = -coef
            out.append(f"- {_fmt_frac(mag) if isinstance(mag, Fraction) else mag} {name}")
    return " ".join(out)


def export_lp(model: MipModel) -> str:
    """CPLEX-LP text: Minimize / Subject To / Bounds / Generals / Binaries."""
    names = var_names(model)
    lines = ["\\ exported integer model", "Minimize"]
    if model.objective:
        terms = _lp_terms(
            (coef, names[col]) for col, coef in sorted(model.objective.items())
        )
    else:
        terms = f"0 {names[0]}" if names else "0 x0"
    lines.append(" obj: " + terms)
    lines.append("Subject To")
    for idx, row in enumerate(model.rows):
        if row.coeffs:
            body = _lp_terms((a, names[c]) for c, a in sorted(row.coeffs.items()))
        else:
            body = f"0 {names[0]}"
        lines.append(f" c{idx}: {body} {row.sense.replace('==', '=')} {row.rhs}")
    lines.append("Bounds")
    for col, v in enumerate(model.vars):
        if v.lb == v.ub:
            lines.append(f" {names[col]} = {v.lb}")
        elif (v.lb, v.ub) != (0, 1):
            lines.append(f" {v.lb} <= {names[col]} <= {v.ub}")
    binaries = [names[c] for c, v in enumerate(model.vars) if (v.lb, v.ub) == (0, 1)]
    generals = [names[c] for c, v in enumerate(model.vars) if v.ub > 1 or v.lb == v.ub]
    if generals:
        lines.append("Generals")
        for chunk in range(0, len(generals), 8):
            lines.append(" " + " ".join(generals[chunk:chunk + 8]))
    if binaries:
        lines.append("Binaries")
        for chunk in range(0, len(binaries), 8):
            lines.append(" " + " ".join(binaries[chunk:chunk + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def format_solution(model: MipModel, solution: Solution) -> str:
    """Writable "<name> <value>" lines for a solved model."""
    if solution.assignment is None:
        raise SolverError("no assignment to format")
    names = var_names(model)
    out = [f"\\ objective {_fmt_frac(solution.objective)}", f"\\ status {solution.status}"]
    for col, v in enumerate(model.vars):
        out.append(f"{names[col]} {solution.assignment[v.vid]}")
    return "\n".join(out) + "\n"


def import_solution(model: MipModel, text: str) -> Solution:
    """Parse "<name> <value>" lines and verify them against every row.

    The reported status reflects verification, never the file's own claims.
    Missing variables default to their lower bound.
    """
    names = var_names(model)
    by_name = {n: c for c, n in enumerate(names)}
    values: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("\\") or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolverError(f"line {lineno}: expected '<name> <value>'")
        name, sval = parts
        if name not in by_name:
            raise SolverError(f"line {lineno}: unknown variable {name!r}")
        try:
            fval = float(sval)
        except ValueError:
            raise SolverError(f"line {lineno}: bad value {sval!r}") from None
        ival = round(fval)
        if abs(fval - ival) > 1e-6:
            raise SolverError(f"line {lineno}: non-integer value {sval!r}")
        values[by_name[name]] = ival
    assignment = {}
    for col, v in enumerate(model.vars):
        assignment[v.vid] = values.get(col, v.lb)
    bad = check_assignment(model, assignment)
    if bad:
        raise SolverError("imported solution is infeasible: " + bad[0])
    objective = model.objective_value(assignment)
    return Solution(
        "gap_feasible",
        assignment,
        objective,
        Fraction(0),
        {"verified": True, "source": "import"},
    )
