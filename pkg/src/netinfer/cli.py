"""Command-line layer: ingest, route, measure, perturb, model, solve,
reconstruct, evaluate, and the end-to-end pipeline runner.

Exit codes: 0 ok, 2 usage, 3 infeasible, 4 timeout, 5 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import evaluate, measurement, model as model_mod, probesim, reconstruct, solver, topology
from .measurement import ConstraintSet
from .model import ModelConfig
from .solver import SolverConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_TIMEOUT = 4
EXIT_VERIFICATION = 5


class PipelineError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- shared helpers -----------------------------------------------------------


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_ground(args_or_cfg) -> topology.Network:
    """Build the ground-truth network from a topology file plus either an
    explicit hosts file/list or seeded host attachment."""
    cfg = args_or_cfg
    graph = topology.parse_topology(_read(cfg["topology"]))
    hosts_spec = cfg["hosts"]
    if "file" in hosts_spec:
        hosts = topology.parse_hosts(_read(hosts_spec["file"]), graph)
    elif "list" in hosts_spec:
        hosts = tuple(hosts_spec["list"])
    elif "attach" in hosts_spec:
        spec = hosts_spec["attach"]
        if "seed" not in spec:
            raise ValueError("hosts.attach needs an explicit seed")
        graph, hosts = topology.attach_hosts(graph, spec["count"], spec["seed"])
    else:
        raise ValueError("hosts spec needs 'file', 'list', or 'attach'")
    return topology.compute_routes(graph, hosts)


def _load_network_file(path: str) -> tuple[topology.Graph, tuple, dict | None]:
    """Read a network artifact (.json) or a DOT export (.dot); DOT files
    carry no paths, so routes are recomputed for path-based metrics."""
    text = _read(path)
    if path.endswith(".dot") or text.lstrip().startswith("graph"):
        graph, hosts = topology.parse_dot(text)
        return graph, hosts, None
    net = topology.network_from_dict(json.loads(text))
    return net.graph, net.hosts, net.paths


def _model_config_from(cfg: dict) -> ModelConfig:
    return ModelConfig(
        alpha=cfg.get("alpha", "0.2"),
        node_budget=cfg.get("node_budget"),
        big_m=cfg.get("big_m"),
        distance_bound=cfg.get("distance_bound"),
        mode=cfg.get("mode", "hard"),
        violation_weight=cfg.get("violation_weight"),
        variant=cfg.get("variant", "standard"),
    )


def _solver_config_from(cfg: dict) -> SolverConfig:
    return SolverConfig(
        rel_gap=Fraction(str(cfg.get("rel_gap", "0.15"))),
        time_limit=cfg.get("time_limit"),
        node_limit=cfg.get("node_limit"),
        seed=cfg.get("seed", 0),
        threads=cfg.get("threads", 1),
    )


def _solution_artifact(sol: solver.Solution) -> dict:
    return {
        "status": sol.status,
        "objective": None if sol.objective is None else str(sol.objective),
        "objective_float": None if sol.objective is None else float(sol.objective),
        "bound": str(sol.bound),
        "nodes": sol.stats.get("nodes"),
    }


def build_source_trees(ground: topology.Network) -> dict:
    """Source trees from exact PSM orderings, one per host (stitch input)."""
    trees = {}
    for s in ground.hosts:
        dests = [h for h in ground.hosts if h != s]
        if len(dests) == 1:
            trees[s] = topology.source_tree_of(ground, s)
        else:
            trees[s] = measurement.build_source_tree(
                s, dests, measurement.psm_order_of(ground, s)
            )
    return trees


# -- pipeline -----------------------------------------------------------------


def run_pipeline(config: dict, out_dir: str | None = None) -> dict:
    """Execute the stage list; every artifact is a deterministic function of
    the config (seeds are explicit).  Returns a result summary."""
    out = Path(out_dir or config["out"])
    result: dict = {"out": str(out)}

    def stage(name):
        def wrap(fn):
            try:
                return fn()
            except Exception as e:  # noqa: BLE001 - pipeline boundary
                raise PipelineError(name, e) from e
        return wrap

    ground = stage("ground")(lambda: _load_ground(config))
    _write(out / "ground.json", _json_text(topology.network_to_dict(ground)))
    _write(out / "ground.dot", topology.export_dot(ground))

    mcfg = config.get("measure", {})
    if "probesim" in mcfg:
        ps = mcfg["probesim"]
        if "seed" not in ps:
            raise PipelineError("measure", ValueError("probesim needs an explicit seed"))
        link_models = (
            probesim.parse_link_models(_read(ps["link_models"]))
            if isinstance(ps.get("link_models"), str)
            else probesim.parse_link_models(json.dumps(ps.get("link_models", {"*": {}})))
        )
        constraints, report = stage("probesim")(
            lambda: probesim.measure_network(
                ground, link_models, ps.get("n_trains", 500), ps["seed"]
            )
        )
        result["psm_accuracy"] = measurement.psm_direction_accuracy(constraints, ground)
    else:
        constraints = stage("measure")(
            lambda: measurement.derive_constraints(
                ground,
                psm_sampling=mcfg.get("psm", "middle"),
                dm_mode=mcfg.get("dm", "relative"),
            )
        )
    if "errors" in config:
        ecfg = config["errors"]
        if "seed" not in ecfg:
            raise PipelineError("perturb", ValueError("errors needs an explicit seed"))
        constraints = stage("perturb")(
            lambda: measurement.inject_errors(constraints, ecfg["p"], ecfg["seed"])
        )
    _write(out / "constraints.jsonl", constraints.to_jsonl())
    result["flipped"] = constraints.flipped_count()

    mo = config.get("model", {})
    variant = mo.get("variant", "standard")
    mconfig = _model_config_from(mo)
    if variant == "stitch":
        trees = stage("source_trees")(lambda: build_source_trees(ground))
        mip = stage("model")(
            lambda: model_mod.build_stitch_model(trees, constraints.dms, mconfig)
        )
    else:
        trees = None
        mip = stage("model")(
            lambda: model_mod.build_occam_model(ground.hosts, constraints, mconfig)
        )
    _write(out / "model_summary.json", _json_text(mip.summary()))
    if config.get("export_lp", True):
        _write(out / "model.lp", solver.export_lp(mip))

    scfg = _solver_config_from(config.get("solver", {}))
    sol = stage("solve")(lambda: solver.solve(mip, scfg))
    result["status"] = sol.status
    _write(out / "solution.json", _json_text(_solution_artifact(sol)))
    if sol.assignment is None:
        _write(out / "manifest.json", _manifest_text(config))
        return result
    _write(out / "solution.txt", solver.format_solution(mip, sol))

    if variant == "stitch":
        inferred = stage("reconstruct")(
            lambda: reconstruct.graph_construct_2(ground.hosts, trees, sol)
        )
        verify = stage("verify")(
            lambda: reconstruct.verify_solution(inferred, source_trees=trees, mode="stitch")
        )
    else:
        inferred = stage("reconstruct")(
            lambda: reconstruct.graph_construct_1(ground.hosts, sol)
        )
        verify = stage("verify")(
            lambda: reconstruct.verify_solution(inferred, constraints=constraints, mode="psm_dm")
        )
    _write(out / "inferred.json", _json_text(topology.network_to_dict(inferred)))
    _write(out / "inferred.dot", topology.export_dot(inferred))
    _write(out / "verify.json", _json_text(verify))
    result["verify_ok"] = verify["ok"]
    result["violations"] = len(verify["violations"])

    report = stage("eval")(lambda: evaluate.evaluate_networks(ground, inferred))
    _write(out / "eval.json", _json_text(report.to_dict()))
    result["ns"] = report.ns
    result["ped"] = report.ped
    _write(out / "manifest.json", _manifest_text(config))
    return result


def _manifest_text(config: dict) -> str:
    from . import __version__

    inputs = {}
    if "topology" in config:
        inputs["topology_sha256"] = _sha256(_read(config["topology"]))
    hosts_spec = config.get("hosts", {})
    if isinstance(hosts_spec, dict) and "file" in hosts_spec:
        inputs["hosts_sha256"] = _sha256(_read(hosts_spec["file"]))
    manifest = {
        "config": config,
        "config_sha256": _sha256(_json_text(config)),
        "inputs": inputs,
        "version": __version__,
    }
    return _json_text(manifest)


def run_sweep(config: dict) -> list[dict]:
    """Re-run one soft-mode pipeline across error probabilities and seeds."""
    base = config["pipeline"]
    rows = []
    for p in config["p_values"]:
        for seed in config["seeds"]:
            sub = json.loads(json.dumps(base))
            sub["errors"] = {"p": p, "seed": seed}
            sub_out = str(Path(config.get("out", base.get("out", "sweep_out"))) / f"p{p}_s{seed}")
            res = run_pipeline(sub, out_dir=sub_out)
            rows.append(
                {
                    "p": p,
                    "seed": seed,
                    "ns": res.get("ns"),
                    "ped": res.get("ped"),
                    "violations": res.get("violations"),
                    "flipped": res.get("flipped"),
                    "status": res.get("status"),
                }
            )
    if "out_csv" in config:
        Path(config["out_csv"]).parent.mkdir(parents=True, exist_ok=True)
        evaluate.write_sweep_csv(rows, config["out_csv"])
    return rows


# -- argument plumbing ---------------------------------------------------------


def _hosts_spec_from_args(args) -> dict:
    if getattr(args, "hosts", None):
        return {"file": args.hosts}
    if getattr(args, "attach", None) is not None:
        if getattr(args, "seed", None) is None:
            raise SystemExit("--attach requires --seed")
        return {"attach": {"count": args.attach, "seed": args.seed}}
    raise SystemExit("need --hosts FILE or --attach N --seed S")


def _ground_from_args(args) -> topology.Network:
    return _load_ground({"topology": args.topology, "hosts": _hosts_spec_from_args(args)})


def _add_ground_args(p):
    p.add_argument("--topology", required=True, help="edge-list topology file")
    p.add_argument("--hosts", help="hosts file, one node id per line")
    p.add_argument("--attach", type=int, help="attach N new leaf hosts instead")
    p.add_argument("--seed", type=int, help="seed for host attachment")


def _add_model_args(p):
    p.add_argument("--alpha", default="0.2", help="objective weight in [0,1]")
    p.add_argument("--budget", type=int, default=None, help="anonymous internal node count")
    p.add_argument("--big-m", type=int, default=None)
    p.add_argument("--distance-bound", type=int, default=None)
    p.add_argument("--mode", choices=["hard", "soft"], default="hard")
    p.add_argument("--psm", choices=["middle", "all_pairs", "none"], default="middle")
    p.add_argument("--dm", choices=["relative", "absolute", "none"], default="relative")


def _add_solver_args(p):
    p.add_argument("--gap", default="0.15", help="relative MIP gap")
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--solver-seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _model_from_args(args, ground, constraints) -> model_mod.MipModel:
    cfg = ModelConfig(
        alpha=args.alpha,
        node_budget=args.budget,
        big_m=args.big_m,
        distance_bound=args.distance_bound,
        mode=args.mode,
    )
    return model_mod.build_occam_model(ground.hosts, constraints, cfg)


def _solver_from_args(args) -> SolverConfig:
    return SolverConfig(
        rel_gap=Fraction(str(args.gap)),
        time_limit=args.time_limit,
        node_limit=args.node_limit,
        seed=args.solver_seed,
        threads=args.threads,
    )


def _status_exit(status: str) -> int:
    if status == "infeasible":
        return EXIT_INFEASIBLE
    if status == "timeout":
        return EXIT_TIMEOUT
    return EXIT_OK


# -- subcommands ---------------------------------------------------------------


def _cmd_routes(args) -> int:
    net = _ground_from_args(args)
    outdir = Path(args.out)
    _write(outdir / "ground.json", _json_text(topology.network_to_dict(net)))
    _write(outdir / "ground.dot", topology.export_dot(net))
    print(f"{len(net.graph.nodes)} nodes, {len(net.graph.edges)} links, "
          f"{len(net.paths)} paths -> {outdir}")
    return EXIT_OK


def _cmd_measure(args) -> int:
    net = _ground_from_args(args)
    cs = measurement.derive_constraints(net, psm_sampling=args.psm, dm_mode=args.dm)
    _write(Path(args.output), cs.to_jsonl())
    print(f"{len(cs.psms)} PSM + {len(cs.dms)} DM records -> {args.output}")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    cs = ConstraintSet.from_jsonl(_read(args.constraints))
    flipped = measurement.inject_errors(cs, args.p, args.flip_seed)
    _write(Path(args.output), flipped.to_jsonl())
    print(f"flipped {flipped.flipped_count()} of {len(flipped)} records -> {args.output}")
    return EXIT_OK


def _cmd_probesim(args) -> int:
    net = _ground_from_args(args)
    link_models = probesim.parse_link_models(_read(args.link_models)) if args.link_models else {}
    cs, _report = probesim.measure_network(net, link_models, args.trains, args.probe_seed)
    _write(Path(args.output), cs.to_jsonl())
    acc = measurement.psm_direction_accuracy(cs, net)
    print(f"{len(cs.psms)} PSM + {len(cs.dms)} DM records "
          f"(PSM direction accuracy {acc:.1%}) -> {args.output}")
    return EXIT_OK


def _build_from_args(args):
    net = _ground_from_args(args)
    if args.constraints:
        cs = ConstraintSet.from_jsonl(_read(args.constraints))
    else:
        cs = measurement.derive_constraints(net, psm_sampling=args.psm, dm_mode=args.dm)
    return net, cs, _model_from_args(args, net, cs)


def _cmd_model(args) -> int:
    _net, _cs, mip = _build_from_args(args)
    text = _json_text(mip.summary())
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_export_lp(args) -> int:
    _net, _cs, mip = _build_from_args(args)
    _write(Path(args.output), solver.export_lp(mip))
    print(f"{len(mip.vars)} variables, {len(mip.rows)} rows -> {args.output}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    _net, _cs, mip = _build_from_args(args)
    sol = solver.solve(mip, _solver_from_args(args))
    print(f"status {sol.status}, objective {sol.objective}, bound {sol.bound}, "
          f"nodes {sol.stats.get('nodes')}")
    if sol.assignment is not None and args.output:
        _write(Path(args.output), solver.format_solution(mip, sol))
    return _status_exit(sol.status)


def _cmd_import_sol(args) -> int:
    _net, _cs, mip = _build_from_args(args)
    try:
        sol = solver.import_solution(mip, _read(args.solution))
    except solver.SolverError as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFICATION
    print(f"verified, objective {sol.objective}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    net, cs, mip = _build_from_args(args)
    sol = solver.import_solution(mip, _read(args.solution))
    inferred = reconstruct.graph_construct_1(net.hosts, sol)
    outdir = Path(args.out)
    _write(outdir / "inferred.json", _json_text(topology.network_to_dict(inferred)))
    _write(outdir / "inferred.dot", topology.export_dot(inferred))
    verify = reconstruct.verify_solution(inferred, constraints=cs, mode="psm_dm")
    _write(outdir / "verify.json", _json_text(verify))
    print(f"inferred {len(inferred.graph.nodes)} nodes / {len(inferred.graph.edges)} links; "
          f"verification {'ok' if verify['ok'] else 'FAILED'}")
    return EXIT_OK if verify["ok"] else EXIT_VERIFICATION


def _cmd_stitch(args) -> int:
    net = _ground_from_args(args)
    trees = build_source_trees(net)
    cs = measurement.derive_constraints(net, psm_sampling="none", dm_mode=args.dm)
    cfg = ModelConfig(
        alpha=args.alpha,
        node_budget=args.budget,
        big_m=args.big_m,
        distance_bound=args.distance_bound,
        mode=args.mode,
        variant="stitch",
    )
    mip = model_mod.build_stitch_model(trees, cs.dms, cfg)
    sol = solver.solve(mip, _solver_from_args(args))
    print(f"status {sol.status}, objective {sol.objective}")
    if sol.assignment is None:
        return _status_exit(sol.status)
    inferred = reconstruct.graph_construct_2(net.hosts, trees, sol)
    outdir = Path(args.out)
    _write(outdir / "inferred.json", _json_text(topology.network_to_dict(inferred)))
    _write(outdir / "inferred.dot", topology.export_dot(inferred))
    verify = reconstruct.verify_solution(inferred, source_trees=trees, mode="stitch")
    _write(outdir / "verify.json", _json_text(verify))
    report = evaluate.evaluate_networks(net, inferred)
    _write(outdir / "eval.json", _json_text(report.to_dict()))
    print(f"NS {report.ns:.1f}, PED {report.ped:.2f}, "
          f"tree check {'ok' if verify['ok'] else 'FAILED'}")
    return EXIT_OK if verify["ok"] else EXIT_VERIFICATION


def _cmd_eval(args) -> int:
    g_graph, g_hosts, g_paths = _load_network_file(args.ground)
    i_graph, i_hosts, i_paths = _load_network_file(args.inferred)
    if g_paths is None:
        g_net = topology.compute_routes(g_graph, g_hosts)
        g_graph, g_paths = g_net.graph, g_net.paths
    if i_paths is None:
        i_net = topology.compute_routes(i_graph, i_hosts)
        i_graph, i_paths = i_net.graph, i_net.paths
    ns, mapping = evaluate.ns_score((g_graph, g_hosts), (i_graph, i_hosts))
    mean, per_pair = evaluate.ped(g_paths, i_paths, mapping)
    if args.collapse:
        g_net = topology.Network(g_graph, g_hosts, g_paths)
        i_net = topology.Network(i_graph, i_hosts, i_paths)
        report = evaluate.collapse_search(g_net, i_net, args.collapse)
        ns, mean, per_pair = report.ns, report.ped, report.per_path_ped
        mapping = report.mapping
    if args.output:
        rep = evaluate.EvalReport(ns=ns, mapping=mapping, per_path_ped=per_pair, ped=mean)
        _write(Path(args.output), _json_text(rep.to_dict()))
    print(f"NS {ns:g}  PED {mean:g}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = json.loads(_read(args.config))
    try:
        res = run_pipeline(config, out_dir=args.out)
    except PipelineError as e:
        print(str(e), file=sys.stderr)
        cause = e.cause
        if isinstance(cause, solver.SolverError):
            return EXIT_VERIFICATION
        return 1
    if "ns" in res:
        print(f"status {res['status']}  NS {res['ns']:g}  PED {res['ped']:g}  "
              f"violations {res.get('violations', 0)}")
    else:
        print(f"status {res['status']}")
    code = _status_exit(res.get("status", ""))
    if code == EXIT_OK and res.get("verify_ok") is False and \
            config.get("model", {}).get("mode", "hard") == "hard":
        return EXIT_VERIFICATION
    return code


def _cmd_sweep(args) -> int:
    config = json.loads(_read(args.config))
    rows = run_sweep(config)
    for row in rows:
        print(f"p={row['p']} seed={row['seed']} ns={row['ns']} ped={row['ped']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netinfer",
        description="Infer network topology and routes from path-sharing and distance metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("routes", help="compute ground-truth routes")
    _add_ground_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_routes)

    p = sub.add_parser("measure", help="derive PSM/DM constraints from ground truth")
    _add_ground_args(p)
    p.add_argument("--psm", choices=["middle", "all_pairs", "none"], default="middle")
    p.add_argument("--dm", choices=["relative", "absolute", "none"], default="relative")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_measure)

    p = sub.add_parser("perturb", help="flip relative constraints with probability p")
    p.add_argument("--constraints", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--flip-seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("probesim", help="emulate probe trains for PSM/DM measurement")
    _add_ground_args(p)
    p.add_argument("--link-models", help="JSON link model file")
    p.add_argument("--trains", type=int, default=500)
    p.add_argument("--probe-seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_probesim)

    for name, fn, extra in (
        ("model", _cmd_model, "print model summary"),
        ("export-lp", _cmd_export_lp, "export the model as a CPLEX LP file"),
        ("solve", _cmd_solve, "solve with the built-in branch and bound"),
        ("import-sol", _cmd_import_sol, "verify an externally produced solution"),
        ("reconstruct", _cmd_reconstruct, "reconstruct a network from a solution file"),
    ):
        p = sub.add_parser(name, help=extra)
        _add_ground_args(p)
        p.add_argument("--constraints", help="constraints JSONL (default: derive from ground)")
        _add_model_args(p)
        if name in ("solve",):
            _add_solver_args(p)
            p.add_argument("-o", "--output", help="solution file to write")
        if name in ("model", "export-lp"):
            p.add_argument("-o", "--output", required=(name == "export-lp"))
        if name in ("import-sol", "reconstruct"):
            p.add_argument("--solution", required=True)
        if name == "reconstruct":
            p.add_argument("--out", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("stitch", help="infer by stitching per-source logical trees")
    _add_ground_args(p)
    p.add_argument("--dm", choices=["relative", "absolute", "none"], default="relative")
    p.add_argument("--alpha", default="0.2")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--big-m", type=int, default=None)
    p.add_argument("--distance-bound", type=int, default=None)
    p.add_argument("--mode", choices=["hard", "soft"], default="hard")
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_stitch)

    p = sub.add_parser("eval", help="score an inferred network against ground truth")
    p.add_argument("--ground", required=True, help="network .json or .dot")
    p.add_argument("--inferred", required=True, help="network .json or .dot")
    p.add_argument("--collapse", type=int, default=0,
                   help="allow up to N collapsed internal-node pairs in ground truth")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("run", help="run a full pipeline from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="error-probability sweep to CSV")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (topology.TopologyError, measurement.MeasurementError, model_mod.ModelError,
            probesim.ProbeSimError, evaluate.EvaluateError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except solver.SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFICATION
    except reconstruct.ReconstructError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    sys.exit(main())
