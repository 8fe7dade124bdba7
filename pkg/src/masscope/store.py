"""Persistence: traces, topologies, datasets, reports and run config.

Everything machine-readable is JSON/JSONL in UTF-8. Trace lines keep a
fixed key order so a read/re-serialize round trip is byte-identical, which
the determinism checks rely on.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backend import BackendConfig
from .errors import (
    EmptyDataset,
    InsufficientData,
    IoError,
    SchemaViolation,
    Unparseable,
)
from .model import (
    AgentSpec,
    AgentStep,
    AnswerFormat,
    ExecutionTrace,
    Message,
    TaskInstance,
    Topology,
    Verdict,
    normalize_answer,
    validate_topology,
)

_TRACE_KEYS = ("topology_id", "instance_id", "steps", "final_answer", "verdict")
_STEP_KEYS = ("agent_id", "inputs", "output")
_MESSAGE_KEYS = ("source_id", "text")
_INSTANCE_KEYS = ("id", "domain", "query", "gold_answer", "answer_format")


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dumps_json(obj) -> str:
    """Human-facing JSON: stable key order as constructed, 2-space indent."""
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def save_json(path, obj) -> None:
    try:
        Path(path).write_text(dumps_json(obj), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# traces


def trace_to_dict(trace: ExecutionTrace) -> dict:
    out = {
        "topology_id": trace.topology_id,
        "instance_id": trace.instance_id,
        "steps": [
            {
                "agent_id": s.agent_id,
                "inputs": [{"source_id": m.source_id, "text": m.text} for m in s.inputs],
                "output": s.output,
            }
            for s in trace.steps
        ],
        "final_answer": trace.final_answer,
        "verdict": trace.verdict.value,
    }
    if trace.incomplete:  # aborted runs carry one extra key
        out["incomplete"] = True
    return out


def _require_keys(obj: dict, keys: Sequence[str], what: str, line: int | None,
                  optional: Sequence[str] = ()) -> None:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{what} is not an object", line)
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaViolation(f"{what} missing {missing}", line)
    unknown = [k for k in obj if k not in keys and k not in optional]
    if unknown:
        raise SchemaViolation(f"{what} has unknown keys {unknown}", line)


def trace_from_dict(obj: dict, line: int | None = None) -> ExecutionTrace:
    _require_keys(obj, _TRACE_KEYS, "trace", line, optional=("incomplete",))
    steps = []
    if not isinstance(obj["steps"], list):
        raise SchemaViolation("trace 'steps' is not a list", line)
    for s in obj["steps"]:
        _require_keys(s, _STEP_KEYS, "step", line)
        if not isinstance(s["inputs"], list):
            raise SchemaViolation("step 'inputs' is not a list", line)
        inputs = []
        for m in s["inputs"]:
            _require_keys(m, _MESSAGE_KEYS, "message", line)
            inputs.append(Message(source_id=str(m["source_id"]), text=str(m["text"])))
        steps.append(AgentStep(agent_id=str(s["agent_id"]), inputs=tuple(inputs),
                               output=str(s["output"])))
    try:
        verdict = Verdict(obj["verdict"])
    except ValueError:
        raise SchemaViolation(f"unknown verdict {obj['verdict']!r}", line)
    return ExecutionTrace(
        topology_id=str(obj["topology_id"]),
        instance_id=str(obj["instance_id"]),
        steps=tuple(steps),
        final_answer=str(obj["final_answer"]),
        verdict=verdict,
        incomplete=bool(obj.get("incomplete", False)),
    )


def traces_to_jsonl(traces: Sequence[ExecutionTrace]) -> str:
    return "".join(_dump_line(trace_to_dict(t)) + "\n" for t in traces)


def write_traces(path, traces: Sequence[ExecutionTrace]) -> None:
    save_text(path, traces_to_jsonl(traces))


def read_traces(path) -> list[ExecutionTrace]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    traces = []
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", n)
        traces.append(trace_from_dict(obj, line=n))
    return traces


# --------------------------------------------------------------------------
# topologies


def topology_to_dict(t: Topology) -> dict:
    return {
        "id": t.id,
        "domain_label": t.domain_label,
        "agents": [
            {"id": a.id, "name": a.name, "role_prompt": a.role_prompt} for a in t.agents
        ],
        "edges": [[src, dst] for src, dst in t.edges],
        "sink_id": t.sink_id,
    }


def topology_from_dict(obj: dict) -> Topology:
    _require_keys(obj, ("id", "domain_label", "agents", "edges", "sink_id"),
                  "topology", None)
    agents = []
    for a in obj["agents"]:
        _require_keys(a, ("id", "name", "role_prompt"), "agent", None)
        agents.append(AgentSpec(id=str(a["id"]), name=str(a["name"]),
                                role_prompt=str(a["role_prompt"])))
    edges = []
    for e in obj["edges"]:
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise SchemaViolation(f"edge {e!r} is not a [src, dst] pair")
        edges.append((str(e[0]), str(e[1])))
    t = Topology(
        id=str(obj["id"]),
        domain_label=str(obj["domain_label"]),
        agents=tuple(agents),
        edges=tuple(edges),
        sink_id=str(obj["sink_id"]),
    )
    check = validate_topology(t)
    if not check.ok:
        raise SchemaViolation("invalid topology: " + "; ".join(check.violations))
    return t


def save_topology(path, t: Topology) -> None:
    save_json(path, topology_to_dict(t))


def load_topology(path) -> Topology:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON in {path}: {exc}")
    return topology_from_dict(obj)


# --------------------------------------------------------------------------
# datasets


def instance_to_dict(inst: TaskInstance) -> dict:
    return {
        "id": inst.id,
        "domain": inst.domain,
        "query": inst.query,
        "gold_answer": inst.gold_answer,
        "answer_format": inst.answer_format.value,
    }


def load_dataset(path, domain_label: str | None = None) -> list[TaskInstance]:
    """Read a JSONL task file; every line must carry exactly the instance
    keys. Gold answers must parse under their declared format, ids must be
    unique, and a file with no instances is an error. ``domain_label``
    overrides the per-line domain when given.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    instances: list[TaskInstance] = []
    seen_ids: set[str] = set()
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", n)
        _require_keys(obj, _INSTANCE_KEYS, "instance", n)
        try:
            fmt = AnswerFormat(obj["answer_format"])
        except ValueError:
            raise SchemaViolation(f"unknown answer_format {obj['answer_format']!r}", n)
        iid = str(obj["id"])
        if iid in seen_ids:
            raise SchemaViolation(f"duplicate id {iid!r}", n)
        seen_ids.add(iid)
        gold = str(obj["gold_answer"])
        try:
            normalize_answer(gold, fmt)
        except Unparseable as exc:
            raise SchemaViolation(f"gold answer does not parse as {fmt.value}: {exc}", n)
        try:
            instances.append(
                TaskInstance(
                    id=iid,
                    domain=domain_label if domain_label is not None else str(obj["domain"]),
                    query=str(obj["query"]),
                    gold_answer=gold,
                    answer_format=fmt,
                )
            )
        except ValueError as exc:
            raise SchemaViolation(str(exc), n)
    if not instances:
        raise EmptyDataset(f"{path} contains no instances")
    return instances


def write_dataset(path, instances: Sequence[TaskInstance]) -> None:
    save_text(path, "".join(_dump_line(instance_to_dict(i)) + "\n" for i in instances))


def mix_domains(
    datasets: Sequence[tuple[str, Sequence[TaskInstance]]],
    total: int,
    seed: int,
) -> list[TaskInstance]:
    """Draw a balanced multi-domain training set.

    Quotas are floor(total / k) with the remainder going to the first
    domains in label order; instances within a domain come from a seeded
    shuffle; the output interleaves domains round-robin so no prefix is
    single-domain.
    """
    if not datasets:
        raise ValueError("mix_domains needs at least one dataset")
    if total < 0:
        raise ValueError("total must be >= 0")
    if total == 0:
        return []

    k = len(datasets)
    base, rem = divmod(total, k)
    quotas = [base + (1 if i < rem else 0) for i in range(k)]
    picks: list[list[TaskInstance]] = []
    for (label, instances), quota in zip(datasets, quotas):
        if len(instances) < quota:
            raise InsufficientData(
                f"domain {label!r} has {len(instances)} instances, needs {quota}"
            )
        # seeding by string is stable across platforms and processes
        rng = random.Random(f"{seed}|{label}")
        shuffled = list(instances)
        rng.shuffle(shuffled)
        picks.append(shuffled[:quota])

    mixed: list[TaskInstance] = []
    for i in range(max(quotas)):
        for sel in picks:
            if i < len(sel):
                mixed.append(sel[i])
    return mixed


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class Thresholds:
    tau_acc: float = 0.95
    tau_r: float = 0.70
    tau_o: float = 0.70
    hi: float = 0.95
    lo: float = 0.70


@dataclass(frozen=True)
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    topology: str | None = None
    datasets: dict = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)
    seed: int = 42
    parallelism: int = 1


_CONFIG_KEYS = ("backend", "topology", "datasets", "thresholds", "seed", "parallelism")


def _config_from_dict(obj: dict, source: str) -> RunConfig:
    _require_keys(obj, (), f"config {source}", None, optional=_CONFIG_KEYS)
    backend_block = obj.get("backend", {})
    try:
        backend = BackendConfig(**backend_block)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad backend block: {exc}")
    thresholds_block = obj.get("thresholds", {})
    try:
        thresholds = Thresholds(**thresholds_block)
    except TypeError as exc:
        raise SchemaViolation(f"bad thresholds block: {exc}")
    datasets = obj.get("datasets", {})
    if not isinstance(datasets, dict):
        raise SchemaViolation("datasets must map domain labels to paths")
    return RunConfig(
        backend=backend,
        topology=obj.get("topology"),
        datasets={str(k): str(v) for k, v in datasets.items()},
        thresholds=thresholds,
        seed=int(obj.get("seed", 42)),
        parallelism=int(obj.get("parallelism", 1)),
    )


def load_run_config(path) -> RunConfig:
    """TOML or JSON by file extension."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    suffix = p.suffix.lower()
    if suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            obj = tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:
            raise SchemaViolation(f"invalid TOML in {path}: {exc}")
    elif suffix == ".json":
        try:
            obj = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON in {path}: {exc}")
    else:
        raise IoError(f"config {path} must end in .toml or .json")
    return _config_from_dict(obj, str(path))


__all__ = [
    "dumps_json",
    "save_json",
    "save_text",
    "trace_to_dict",
    "trace_from_dict",
    "traces_to_jsonl",
    "write_traces",
    "read_traces",
    "topology_to_dict",
    "topology_from_dict",
    "save_topology",
    "load_topology",
    "instance_to_dict",
    "load_dataset",
    "write_dataset",
    "mix_domains",
    "Thresholds",
    "RunConfig",
    "load_run_config",
]
