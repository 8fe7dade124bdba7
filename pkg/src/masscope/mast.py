"""Failure-mode classification of execution traces.

The taxonomy is the 14-code MAST scheme: three categories (system design,
inter-agent misalignment, task verification) with codes FM-1.1 through
FM-3.3. A judge model reads a serialized trace together with the code
definitions and answers with a comma-separated code list or NONE.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import JudgeParseFailure, NoLabels
from .model import ExecutionTrace

log = logging.getLogger(__name__)


class MastLabel(str, enum.Enum):
    FM_1_1 = "FM-1.1"
    FM_1_2 = "FM-1.2"
    FM_1_3 = "FM-1.3"
    FM_1_4 = "FM-1.4"
    FM_1_5 = "FM-1.5"
    FM_2_1 = "FM-2.1"
    FM_2_2 = "FM-2.2"
    FM_2_3 = "FM-2.3"
    FM_2_4 = "FM-2.4"
    FM_2_5 = "FM-2.5"
    FM_2_6 = "FM-2.6"
    FM_3_1 = "FM-3.1"
    FM_3_2 = "FM-3.2"
    FM_3_3 = "FM-3.3"


# code -> (category, name, what the judge should look for)
MAST_DEFINITIONS: dict[MastLabel, tuple[str, str, str]] = {
    MastLabel.FM_1_1: (
        "system design",
        "Disobey task specification",
        "an agent ignores constraints or requirements stated in the task",
    ),
    MastLabel.FM_1_2: (
        "system design",
        "Disobey role specification",
        "an agent acts outside its assigned role or takes over another agent's job",
    ),
    MastLabel.FM_1_3: (
        "system design",
        "Step repetition",
        "the system needlessly repeats a step that was already completed",
    ),
    MastLabel.FM_1_4: (
        "system design",
        "Loss of conversation history",
        "context is truncated or dropped, reverting to an earlier state",
    ),
    MastLabel.FM_1_5: (
        "system design",
        "Unaware of termination conditions",
        "the system keeps going (or stops) without recognizing its stop condition",
    ),
    MastLabel.FM_2_1: (
        "inter-agent misalignment",
        "Conversation reset",
        "a dialogue restarts from scratch, discarding progress",
    ),
    MastLabel.FM_2_2: (
        "inter-agent misalignment",
        "Fail to ask for clarification",
        "an agent proceeds on ambiguous or missing information instead of asking",
    ),
    MastLabel.FM_2_3: (
        "inter-agent misalignment",
        "Task derailment",
        "the discussion drifts away from the task objective",
    ),
    MastLabel.FM_2_4: (
        "inter-agent misalignment",
        "Information withholding",
        "an agent holds back information another agent needed",
    ),
    MastLabel.FM_2_5: (
        "inter-agent misalignment",
        "Ignored other agent's input",
        "an agent disregards messages it received from peers",
    ),
    MastLabel.FM_2_6: (
        "inter-agent misalignment",
        "Reasoning-action mismatch",
        "an agent's stated reasoning and its actual output disagree",
    ),
    MastLabel.FM_3_1: (
        "task verification",
        "Premature termination",
        "the run ends before the objective is met or fully answered",
    ),
    MastLabel.FM_3_2: (
        "task verification",
        "No or incomplete verification",
        "outputs pass through without being checked, or checks are partial",
    ),
    MastLabel.FM_3_3: (
        "task verification",
        "Incorrect verification",
        "a verifier approves (or rejects) an answer wrongly",
    ),
}

# Role violations, repetition, derailment, ignored input and missing
# verification are the wiring-sensitive modes; configurable at the caller.
DEFAULT_TOPOLOGY_RELATED: frozenset[MastLabel] = frozenset(
    {
        MastLabel.FM_1_1,
        MastLabel.FM_1_2,
        MastLabel.FM_1_3,
        MastLabel.FM_2_3,
        MastLabel.FM_2_5,
        MastLabel.FM_3_2,
    }
)

_CODE_RE = re.compile(r"\bFM-\d+\.\d+\b")
_NONE_RE = re.compile(r"\bNONE\b", re.IGNORECASE)

_VALID_CODES = {label.value for label in MastLabel}


def _definitions_block() -> str:
    lines = []
    for label, (category, name, hint) in MAST_DEFINITIONS.items():
        lines.append(f"{label.value} [{category}] {name}: {hint}")
    return "\n".join(lines)


CLASSIFIER_SYSTEM_PROMPT = (
    "You label failure modes in a multi-agent execution log. The codes:\n"
    + _definitions_block()
    + "\n\nRead the log and reply with the comma-separated codes of every "
    "failure mode you observe (for example: FM-1.2, FM-2.5). If the log "
    "shows no failure, reply with exactly NONE."
)


def render_trace(trace: ExecutionTrace) -> str:
    """Plain-text serialization of a trace for the judge."""
    lines = [f"topology: {trace.topology_id}", f"instance: {trace.instance_id}"]
    for step in trace.steps:
        lines.append(f"--- agent {step.agent_id}")
        for msg in step.inputs:
            lines.append(f"  received from {msg.source_id}: {msg.text}")
        lines.append(f"  output: {step.output}")
    lines.append(f"final answer: {trace.final_answer}")
    lines.append(f"verdict: {trace.verdict.value}")
    return "\n".join(lines)


def parse_code_list(reply: str) -> frozenset[MastLabel] | None:
    """Extract valid codes from a judge reply.

    Returns the (possibly empty) code set when the reply is interpretable:
    at least one valid code, or an unknown FM-code (dropped with a
    warning), or an explicit NONE. Returns None when nothing in the reply
    looks like a verdict.
    """
    tokens = _CODE_RE.findall(reply)
    valid = [MastLabel(tok) for tok in tokens if tok in _VALID_CODES]
    unknown = [tok for tok in tokens if tok not in _VALID_CODES]
    for tok in unknown:
        log.warning("judge emitted unknown failure code %s; dropped", tok)
    if valid:
        return frozenset(valid)
    if unknown or _NONE_RE.search(reply):
        return frozenset()
    return None


def classify_trace(trace: ExecutionTrace, judge_backend) -> frozenset[MastLabel]:
    """Ask the judge backend for this trace's failure codes.

    One re-ask on an uninterpretable reply, then JudgeParseFailure.
    """
    rendered = render_trace(trace)
    reply = ""
    for attempt in range(2):
        reply = judge_backend.complete(CLASSIFIER_SYSTEM_PROMPT, rendered, [])
        labels = parse_code_list(reply)
        if labels is not None:
            return labels
        log.warning(
            "trace %s: unparseable failure-mode reply (attempt %d): %r",
            trace.instance_id, attempt + 1, reply[:80],
        )
    raise JudgeParseFailure(f"no failure codes or NONE in reply: {reply[:120]!r}")


def classify_traces(
    traces: Sequence[ExecutionTrace], judge_backend
) -> dict[str, frozenset[MastLabel] | None]:
    """Classify each trace by instance id; unclassifiable traces map to
    None and are skipped by aggregation."""
    out: dict[str, frozenset[MastLabel] | None] = {}
    for trace in traces:
        try:
            out[trace.instance_id] = classify_trace(trace, judge_backend)
        except JudgeParseFailure:
            log.warning("trace %s left unclassified", trace.instance_id)
            out[trace.instance_id] = None
    return out


@dataclass(frozen=True)
class MastReport:
    per_trace: tuple[tuple[str, tuple[str, ...]], ...]
    counts: tuple[tuple[str, int], ...]
    distribution: tuple[tuple[str, float], ...]
    topology_related_share: float

    def distribution_dict(self) -> dict[str, float]:
        return dict(self.distribution)

    def to_dict(self) -> dict:
        return {
            "per_trace": {key: list(codes) for key, codes in self.per_trace},
            "counts": dict(self.counts),
            "distribution": dict(self.distribution),
            "topology_related_share": self.topology_related_share,
        }

    def to_csv(self) -> str:
        counts = dict(self.counts)
        lines = ["code,count,fraction"]
        for code, fraction in self.distribution:
            lines.append(f"{code},{counts[code]},{fraction!r}")
        return "\n".join(lines) + "\n"


def aggregate_mast(
    per_trace: Mapping[str, Iterable[MastLabel] | None],
    topology_related: frozenset[MastLabel] = DEFAULT_TOPOLOGY_RELATED,
) -> MastReport:
    """Occurrence-weighted distribution over codes.

    A trace tagged with k codes contributes k occurrences; unclassified
    (None) traces are skipped. The share is topology-related occurrences
    over all occurrences. Raises NoLabels when nothing was tagged.
    """
    counts: dict[MastLabel, int] = {}
    rendered: list[tuple[str, tuple[str, ...]]] = []
    for key in sorted(per_trace):
        labels = per_trace[key]
        if labels is None:
            continue
        labels = frozenset(labels)
        rendered.append((key, tuple(sorted(l.value for l in labels))))
        for label in labels:
            counts[label] = counts.get(label, 0) + 1

    total = sum(counts.values())
    if total == 0:
        raise NoLabels("no failure occurrences to aggregate")

    related = sum(c for label, c in counts.items() if label in topology_related)
    ordered = [label for label in MastLabel if label in counts]
    return MastReport(
        per_trace=tuple(rendered),
        counts=tuple((label.value, counts[label]) for label in ordered),
        distribution=tuple((label.value, counts[label] / total) for label in ordered),
        topology_related_share=related / total,
    )


__all__ = [
    "MastLabel",
    "MAST_DEFINITIONS",
    "DEFAULT_TOPOLOGY_RELATED",
    "CLASSIFIER_SYSTEM_PROMPT",
    "render_trace",
    "parse_code_list",
    "classify_trace",
    "classify_traces",
    "MastReport",
    "aggregate_mast",
]
