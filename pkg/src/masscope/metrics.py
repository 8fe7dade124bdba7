"""Collaboration diagnostics computed from execution traces.

Role alignment asks whether each agent's output matches its assigned role
while staying distinct from its peers; connection significance asks how
much each incoming message actually pulled on the output, signed by a
usefulness judge. Both reduce a trace to per-agent records that aggregate
instance-first.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from .backend import EmbeddingVector
from .errors import DimensionMismatch, EmptyInput, JudgeParseFailure
from .model import ExecutionTrace, Topology

log = logging.getLogger(__name__)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product of unit vectors, clamped to [-1, 1].

    Identical value tuples short-circuit to exactly 1.0; downstream this
    makes R collapse to exactly 0 when all outputs are byte-identical.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"cosine over dims {a.dim} and {b.dim}")
    if a.values == b.values:
        return 1.0
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot))


def softmax_weights(sims: Sequence[float]) -> list[float]:
    """Numerically stable softmax; max is subtracted before exponentiation."""
    if not sims:
        return []
    top = max(sims)
    exps = [math.exp(s - top) for s in sims]
    total = sum(exps)
    return [e / total for e in exps]


@dataclass
class MetricRecord:
    """Per-agent diagnostics for one trace.

    ``alpha`` and ``usefulness`` are keyed by message index (position in
    the agent's input list). ``alpha_role`` / ``alpha_query`` are the
    softmax mass captured by the two static priors, so the full weight
    vector sums to 1.
    """

    agent_id: str
    s1: float = 0.0
    s2: float = 0.0
    r: float = 0.0
    alpha: dict[int, float] = field(default_factory=dict)
    usefulness: dict[int, int] = field(default_factory=dict)
    o: float = 0.0
    alpha_role: float = 0.0
    alpha_query: float = 0.0
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "s1": self.s1,
            "s2": self.s2,
            "r": self.r,
            "alpha": {str(k): v for k, v in sorted(self.alpha.items())},
            "usefulness": {str(k): v for k, v in sorted(self.usefulness.items())},
            "o": self.o,
            "alpha_role": self.alpha_role,
            "alpha_query": self.alpha_query,
            "notes": list(self.notes),
        }


def role_alignment(
    trace: ExecutionTrace,
    topology: Topology,
    embedder,
) -> list[MetricRecord]:
    """s1 = cos(role, output); s2 = mean cosine against every other executed
    agent's output; r = s1 * (1 - s2). A single-agent trace gets s2 = 0 and
    a recorded warning, since uniqueness needs peers to compare against.
    """
    steps = trace.steps
    if not steps:
        return []
    out_vecs = {s.agent_id: embedder.embed(s.output) for s in steps}

    single = len(steps) < 2
    if single:
        log.warning(
            "trace %s has a single executed agent; s2 defaulted to 0",
            trace.instance_id,
        )

    records: list[MetricRecord] = []
    for step in steps:
        agent = topology.agent(step.agent_id)
        y = out_vecs[step.agent_id]
        s1 = cosine(embedder.embed(agent.role_prompt), y)
        if single:
            s2 = 0.0
            notes = ("single agent: s2 defaulted to 0",)
        else:
            others = [cosine(y, out_vecs[s.agent_id]) for s in steps if s.agent_id != step.agent_id]
            s2 = sum(others) / len(others)
            notes = ()
        records.append(
            MetricRecord(agent_id=step.agent_id, s1=s1, s2=s2, r=s1 * (1.0 - s2), notes=notes)
        )
    return records


def message_influence(
    trace: ExecutionTrace,
    topology: Topology,
    query: str,
    embedder,
) -> list[MetricRecord]:
    """Softmax influence weights over each agent's inputs plus the two
    static priors (role prompt, query). Judge-free: only the alpha fields
    are populated, which is what edge pruning consumes.

    The query is a parameter because traces do not persist it; callers
    join traces back to their task instances.
    """
    records: list[MetricRecord] = []
    for step in trace.steps:
        agent = topology.agent(step.agent_id)
        y = embedder.embed(step.output)
        rec = MetricRecord(agent_id=step.agent_id)

        texts = [m.text for m in step.inputs]
        sims = [cosine(embedder.embed(t), y) for t in texts]
        sims.append(cosine(embedder.embed(agent.role_prompt), y))
        sims.append(cosine(embedder.embed(query), y))
        weights = softmax_weights(sims)
        n = len(texts)
        rec.alpha = {i: weights[i] for i in range(n)}
        rec.alpha_role = weights[n]
        rec.alpha_query = weights[n + 1]
        records.append(rec)
    return records


def connection_significance(
    trace: ExecutionTrace,
    topology: Topology,
    query: str,
    embedder,
    judge,
) -> list[MetricRecord]:
    """Influence weights signed by the usefulness judge: o sums alpha times
    the judge's ±1 over the agent's messages.

    A judge failure on one message drops that message from the o sum
    (alpha untouched) and leaves a note on the record.
    """
    records = message_influence(trace, topology, query, embedder)
    for step, rec in zip(trace.steps, records):
        agent = topology.agent(step.agent_id)
        notes: list[str] = []
        o = 0.0
        for i, msg in enumerate(step.inputs):
            try:
                s = judge.judge_usefulness(query, agent.role_prompt, msg.text)
            except JudgeParseFailure:
                notes.append(f"message {i}: judge failed, excluded from o")
                log.warning(
                    "trace %s agent %s: judge failed on message %d",
                    trace.instance_id, step.agent_id, i,
                )
                continue
            if s not in (1, -1):
                raise ValueError(f"judge returned {s!r}, expected +1 or -1")
            rec.usefulness[i] = s
            o += rec.alpha[i] * s
        rec.o = o
        rec.notes = tuple(notes)
    return records


def instance_metrics(
    trace: ExecutionTrace,
    topology: Topology,
    query: str,
    backend,
) -> list[MetricRecord]:
    """Full per-agent records: role alignment and connection significance
    merged (both walk the trace in step order).
    """
    ra = role_alignment(trace, topology, backend)
    cs = connection_significance(trace, topology, query, backend, backend)
    merged: list[MetricRecord] = []
    for a, c in zip(ra, cs):
        merged.append(
            MetricRecord(
                agent_id=a.agent_id,
                s1=a.s1,
                s2=a.s2,
                r=a.r,
                alpha=c.alpha,
                usefulness=c.usefulness,
                o=c.o,
                alpha_role=c.alpha_role,
                alpha_query=c.alpha_query,
                notes=a.notes + c.notes,
            )
        )
    return merged


@dataclass(frozen=True)
class AggregateReport:
    r_mean: float
    o_mean: float
    accuracy: float
    n_instances: int
    n_agents: int

    def to_dict(self) -> dict:
        return {
            "r_mean": self.r_mean,
            "o_mean": self.o_mean,
            "accuracy": self.accuracy,
            "n_instances": self.n_instances,
            "n_agents": self.n_agents,
        }


def aggregate_metrics(
    per_instance_records: Sequence[Sequence[MetricRecord]],
    accuracies: Sequence[bool],
) -> AggregateReport:
    """Instance-first aggregation: mean over agents within an instance,
    then mean over instances. With unequal agent counts this differs from
    the flat agent-weighted mean, deliberately.

    ``n_agents`` counts distinct agent ids seen across all instances.
    """
    if not per_instance_records:
        raise EmptyInput("no instances to aggregate")
    if len(per_instance_records) != len(accuracies):
        raise ValueError(
            f"{len(per_instance_records)} record lists vs {len(accuracies)} accuracy flags"
        )
    for idx, records in enumerate(per_instance_records):
        if not records:
            raise EmptyInput(f"instance {idx} has no records")

    r_mean = _mean([_mean([rec.r for rec in recs]) for recs in per_instance_records])
    o_mean = _mean([_mean([rec.o for rec in recs]) for recs in per_instance_records])
    agent_ids = {rec.agent_id for recs in per_instance_records for rec in recs}
    return AggregateReport(
        r_mean=r_mean,
        o_mean=o_mean,
        accuracy=sum(1 for a in accuracies if a) / len(accuracies),
        n_instances=len(per_instance_records),
        n_agents=len(agent_ids),
    )


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


@dataclass(frozen=True)
class IllusoryThresholds:
    tau_acc: float = 0.95
    tau_r: float = 0.70
    tau_o: float = 0.70


@dataclass(frozen=True)
class IllusoryVerdict:
    flagged: bool
    acc_ratio: float
    r_ratio: float
    o_ratio: float
    reasons: tuple[str, ...]
    unverifiable: bool = False

    def to_dict(self) -> dict:
        return {
            "flagged": self.flagged,
            "acc_ratio": self.acc_ratio,
            "r_ratio": self.r_ratio,
            "o_ratio": self.o_ratio,
            "reasons": list(self.reasons),
            "unverifiable": self.unverifiable,
        }


def detect_illusory(
    report: AggregateReport,
    baseline: AggregateReport,
    thresholds: IllusoryThresholds = IllusoryThresholds(),
) -> IllusoryVerdict:
    """Flag transfers where accuracy held up but collaboration quality
    collapsed: acc_ratio >= tau_acc while r_ratio or o_ratio fell under
    its threshold.

    Zero baselines make the ratios meaningless; those come back as an
    unverifiable (never flagged) verdict rather than an exception, so a
    batch of comparisons survives one degenerate baseline. A non-positive
    baseline o_mean divides by its absolute value, mirroring the all-
    negative row rule in matrix normalization.
    """
    zero_fields = [
        name
        for name, value in (
            ("accuracy", baseline.accuracy),
            ("r_mean", baseline.r_mean),
            ("o_mean", baseline.o_mean),
        )
        if value == 0.0
    ]
    if zero_fields:
        return IllusoryVerdict(
            flagged=False,
            acc_ratio=math.nan,
            r_ratio=math.nan,
            o_ratio=math.nan,
            reasons=tuple(f"baseline {f} is zero; ratios undefined" for f in zero_fields),
            unverifiable=True,
        )

    acc_ratio = report.accuracy / baseline.accuracy
    r_ratio = report.r_mean / baseline.r_mean
    if baseline.o_mean > 0:
        o_ratio = report.o_mean / baseline.o_mean
    else:
        o_ratio = report.o_mean / abs(baseline.o_mean)

    reasons: list[str] = []
    if acc_ratio >= thresholds.tau_acc:
        if r_ratio < thresholds.tau_r:
            reasons.append(
                f"accuracy retained ({acc_ratio:.3f}) but role alignment fell to "
                f"{r_ratio:.3f} of baseline"
            )
        if o_ratio < thresholds.tau_o:
            reasons.append(
                f"accuracy retained ({acc_ratio:.3f}) but connection significance "
                f"fell to {o_ratio:.3f} of baseline"
            )
    flagged = bool(reasons)
    return IllusoryVerdict(
        flagged=flagged,
        acc_ratio=acc_ratio,
        r_ratio=r_ratio,
        o_ratio=o_ratio,
        reasons=tuple(reasons),
    )


def build_metric_report(
    topology_id: str,
    dataset: str,
    instance_ids: Sequence[str],
    per_instance_records: Sequence[Sequence[MetricRecord]],
    aggregate: AggregateReport,
) -> dict:
    """Assemble the wire-format report emitted by the CLI."""
    return {
        "topology_id": topology_id,
        "dataset": dataset,
        "per_instance": [
            {"instance_id": iid, "records": [rec.to_dict() for rec in recs]}
            for iid, recs in zip(instance_ids, per_instance_records)
        ],
        "aggregate": aggregate.to_dict(),
    }


__all__ = [
    "cosine",
    "softmax_weights",
    "MetricRecord",
    "role_alignment",
    "message_influence",
    "connection_significance",
    "instance_metrics",
    "AggregateReport",
    "aggregate_metrics",
    "IllusoryThresholds",
    "IllusoryVerdict",
    "detect_illusory",
    "build_metric_report",
]
