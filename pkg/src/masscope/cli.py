"""Command-line entry point.

Machine-readable output goes to stdout only; logs go to stderr. Exit
codes: 0 success, 1 domain error, 2 usage error (argparse's native code).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import ablation, analysis, mast, metrics, optimize, store
from .backend import BackendConfig, CachedBackend, make_backend
from .errors import MasscopeError, SchemaViolation
from .executor import run_dataset
from .model import Verdict
from .store import RunConfig, load_run_config

log = logging.getLogger("masscope")


def _effective_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=args.seed,
            backend=dataclasses.replace(cfg.backend, seed=args.seed),
        )
    if getattr(args, "parallelism", None) is not None:
        cfg = dataclasses.replace(cfg, parallelism=args.parallelism)
    return cfg


def _backend(cfg: RunConfig) -> CachedBackend:
    return CachedBackend(make_backend(cfg.backend))


def _emit(obj) -> None:
    sys.stdout.write(store.dumps_json(obj))


# --------------------------------------------------------------------------
# subcommands


def _cmd_run(args) -> int:
    cfg = _effective_config(args)
    topology = store.load_topology(args.topology)
    instances = store.load_dataset(args.dataset)
    backend = _backend(cfg)
    result = run_dataset(topology, instances, backend, cfg.parallelism)
    if args.out:
        store.write_traces(args.out, result.traces)
    summary = {
        "topology_id": topology.id,
        "dataset": str(args.dataset),
        **result.to_dict(),
    }
    if args.out:
        summary["traces"] = str(args.out)
    _emit(summary)
    return 0


def _cmd_metrics(args) -> int:
    cfg = _effective_config(args)
    topology = store.load_topology(args.topology)
    instances = store.load_dataset(args.dataset)
    traces = store.read_traces(args.traces)
    backend = _backend(cfg)

    by_id = {inst.id: inst for inst in instances}
    instance_ids: list[str] = []
    per_records: list[list[metrics.MetricRecord]] = []
    correct: list[bool] = []
    for trace in traces:
        if trace.incomplete:
            log.warning("skipping incomplete trace %s", trace.instance_id)
            continue
        inst = by_id.get(trace.instance_id)
        if inst is None:
            raise SchemaViolation(
                f"trace {trace.instance_id!r} has no matching dataset instance"
            )
        instance_ids.append(trace.instance_id)
        per_records.append(metrics.instance_metrics(trace, topology, inst.query, backend))
        correct.append(trace.verdict is Verdict.CORRECT)

    aggregate = metrics.aggregate_metrics(per_records, correct)
    report = metrics.build_metric_report(
        topology.id, str(args.dataset), instance_ids, per_records, aggregate
    )
    if args.out:
        store.save_json(args.out, report)
    _emit(report)
    return 0


def _cmd_transfer(args) -> int:
    records = []
    path = Path(args.results)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MasscopeError(f"cannot read {path}: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", n)
        records.append(obj)

    raw_matrix = analysis.build_transfer_matrix(records, analysis.MatrixKind(args.kind))
    mode = analysis.NormalizationMode(args.normalize.replace("-", "_"))
    normalized = analysis.normalize_matrix(raw_matrix, mode)
    labels = analysis.classify_matrix(normalized, hi=args.hi, lo=args.lo)
    report = analysis.matrix_report(raw_matrix, normalized, labels, args.hi, args.lo)
    if args.out_csv:
        store.save_text(args.out_csv, analysis.matrix_csv(raw_matrix))
    if args.out_json:
        store.save_json(args.out_json, report)
    _emit(report)
    return 0


def _cmd_prune(args) -> int:
    cfg = _effective_config(args)
    topology = store.load_topology(args.topology)
    instances = store.load_dataset(args.dataset)
    backend = _backend(cfg)
    prune_cfg = optimize.PruneConfig(
        max_removals=args.max_removals,
        min_edges=args.min_edges,
        eval_instances=args.eval_instances,
        tie_break=args.tie_break.replace("-", "_"),
    )
    decisions: list[optimize.PruneDecision] = []
    pruned = optimize.prune_topology(
        topology, instances, backend, prune_cfg, on_decision=decisions.append
    )
    if args.decisions:
        store.save_text(
            args.decisions,
            "".join(json.dumps(d.to_dict(), separators=(",", ":")) + "\n" for d in decisions),
        )
    if args.out:
        store.save_topology(args.out, pruned)
    _emit(store.topology_to_dict(pruned))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _effective_config(args)
    t_in = store.load_topology(args.topology)
    t_src = store.load_topology(args.source)
    instances = store.load_dataset(args.dataset)
    backend = _backend(cfg)
    result = ablation.run_ablation(t_in, t_src, instances, backend, cfg.parallelism)
    name = args.name or t_in.domain_label or t_in.id
    if args.out_csv:
        store.save_text(args.out_csv, ablation.ablation_csv([(name, result)]))
    _emit({"benchmark": name, **result.to_dict()})
    return 0


def _cmd_mast(args) -> int:
    related = mast.DEFAULT_TOPOLOGY_RELATED
    if args.topology_related:
        try:
            related = frozenset(
                mast.MastLabel(code.strip()) for code in args.topology_related.split(",")
            )
        except ValueError as exc:
            raise MasscopeError(f"unknown failure code: {exc}")

    per_trace: dict[str, frozenset[mast.MastLabel] | None]
    if args.labels:
        per_trace = {}
        text = Path(args.labels).read_text(encoding="utf-8")
        for n, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            obj = json.loads(raw)
            if "instance_id" not in obj or "codes" not in obj:
                raise SchemaViolation("label line needs instance_id and codes", n)
            try:
                per_trace[str(obj["instance_id"])] = frozenset(
                    mast.MastLabel(c) for c in obj["codes"]
                )
            except ValueError as exc:
                raise SchemaViolation(f"unknown failure code: {exc}", n)
    else:
        cfg = _effective_config(args)
        traces = store.read_traces(args.traces)
        backend = _backend(cfg)
        per_trace = mast.classify_traces(traces, backend)

    report = mast.aggregate_mast(per_trace, topology_related=related)
    if args.out_csv:
        store.save_text(args.out_csv, report.to_csv())
    if args.out:
        store.save_json(args.out, report.to_dict())
    _emit(report.to_dict())
    return 0


def _cmd_select_team(args) -> int:
    cfg = _effective_config(args)
    backend = _backend(cfg)
    try:
        pool_raw = json.loads(Path(args.pool).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MasscopeError(f"cannot read {args.pool}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON in {args.pool}: {exc}")
    if not isinstance(pool_raw, list):
        raise SchemaViolation("agent pool must be a JSON list")
    from .model import AgentSpec

    pool = []
    for a in pool_raw:
        try:
            pool.append(
                AgentSpec(id=str(a["id"]), name=str(a.get("name", a["id"])),
                          role_prompt=str(a["role_prompt"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad agent entry {a!r}: {exc}")
    team = optimize.select_team(pool, args.query, (args.lo_size, args.hi_size), backend)
    _emit(team.to_dict())
    return 0


def _cmd_mix(args) -> int:
    datasets = []
    for spec in args.dataset:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise MasscopeError(f"--dataset expects label=path, got {spec!r}")
        datasets.append((label, store.load_dataset(path, domain_label=label)))
    seed = args.seed if args.seed is not None else 42
    mixed = store.mix_domains(datasets, args.total, seed)
    if args.out:
        store.write_dataset(args.out, mixed)
    counts: dict[str, int] = {}
    for inst in mixed:
        counts[inst.domain] = counts.get(inst.domain, 0) + 1
    _emit({"total": len(mixed), "per_domain": counts, "seed": seed})
    return 0


def _cmd_report(args) -> int:
    def aggregate_from(path) -> metrics.AggregateReport:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise MasscopeError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON in {path}: {exc}")
        agg = obj.get("aggregate")
        if not isinstance(agg, dict):
            raise SchemaViolation(f"{path} has no aggregate block")
        per_instance = obj.get("per_instance", [])
        agents = {
            rec.get("agent_id")
            for entry in per_instance
            for rec in entry.get("records", [])
        }
        return metrics.AggregateReport(
            r_mean=float(agg["r_mean"]),
            o_mean=float(agg["o_mean"]),
            accuracy=float(agg["accuracy"]),
            n_instances=len(per_instance),
            n_agents=len(agents),
        )

    report = aggregate_from(args.metrics)
    baseline = aggregate_from(args.baseline)
    thresholds = metrics.IllusoryThresholds(
        tau_acc=args.tau_acc, tau_r=args.tau_r, tau_o=args.tau_o
    )
    verdict = metrics.detect_illusory(report, baseline, thresholds)
    out = {
        "report": report.to_dict(),
        "baseline": baseline.to_dict(),
        "verdict": verdict.to_dict(),
    }
    if args.out:
        store.save_json(args.out, out)
    _emit(out)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="run config file (.toml or .json)")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for all randomness (default 42)")
    p.add_argument("--verbose", action="store_true", help="log at INFO level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masscope",
        description="Run multi-agent topologies and diagnose collaboration quality.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a topology over a task file")
    p.add_argument("--topology", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="write traces JSONL here")
    p.add_argument("--parallelism", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("metrics", help="compute role-alignment / influence report")
    p.add_argument("--traces", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--dataset", required=True, help="task file the traces came from")
    p.add_argument("--out", help="write the report JSON here")
    _add_common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("transfer", help="build and classify a transfer matrix")
    p.add_argument("--results", required=True,
                   help="JSONL of {train_domain, test_domain, value}")
    p.add_argument("--kind", default="accuracy",
                   choices=[k.value for k in analysis.MatrixKind])
    p.add_argument("--normalize", default="column-max",
                   choices=["none", "column-max", "row-max-auto"])
    p.add_argument("--hi", type=float, default=0.95)
    p.add_argument("--lo", type=float, default=0.70)
    p.add_argument("--out-csv", help="write the raw grid CSV here")
    p.add_argument("--out-json", help="write the matrix report JSON here")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("prune", help="greedy low-influence edge dropout")
    p.add_argument("--topology", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-removals", type=int, default=1)
    p.add_argument("--min-edges", type=int, default=1)
    p.add_argument("--eval-instances", type=int, default=0)
    p.add_argument("--tie-break", default="lowest-alpha-first",
                   choices=["lowest-alpha-first", "lexicographic"])
    p.add_argument("--out", help="write the pruned topology here")
    p.add_argument("--decisions", help="write the decision log JSONL here")
    _add_common(p)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("ablate", help="connection/role interchange evaluation")
    p.add_argument("--topology", required=True, help="in-domain topology")
    p.add_argument("--source", required=True, help="replacement-provider topology")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", help="benchmark label for the CSV row")
    p.add_argument("--out-csv")
    p.add_argument("--parallelism", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("mast", help="failure-mode classification report")
    p.add_argument("--traces", help="trace JSONL to classify via the judge backend")
    p.add_argument("--labels",
                   help="pre-labeled JSONL {instance_id, codes}; skips the judge")
    p.add_argument("--topology-related",
                   help="comma-separated codes overriding the default set")
    p.add_argument("--out")
    p.add_argument("--out-csv")
    _add_common(p)
    p.set_defaults(func=_cmd_mast)

    p = sub.add_parser("select-team", help="pick a team from an agent pool")
    p.add_argument("--pool", required=True, help="JSON list of agents")
    p.add_argument("--query", required=True)
    p.add_argument("--lo-size", type=int, default=2)
    p.add_argument("--hi-size", type=int, default=4)
    _add_common(p)
    p.set_defaults(func=_cmd_select_team)

    p = sub.add_parser("mix", help="build a balanced multi-domain training set")
    p.add_argument("--dataset", action="append", required=True,
                   metavar="LABEL=PATH")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--out")
    _add_common(p, config=False)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("report", help="compare a metric report against a baseline")
    p.add_argument("--metrics", required=True, help="candidate metric report JSON")
    p.add_argument("--baseline", required=True, help="baseline metric report JSON")
    p.add_argument("--tau-acc", type=float, default=0.95)
    p.add_argument("--tau-r", type=float, default=0.70)
    p.add_argument("--tau-o", type=float, default=0.70)
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "mast" and not args.labels and not args.traces:
        parser.error("mast needs --traces or --labels")
    try:
        return args.func(args)
    except MasscopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
