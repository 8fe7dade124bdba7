"""Runs a topology over task instances and scores the outcomes.

Execution is single-pass: agents fire level by level (levels are a
barrier), each agent sees the original query plus the outputs of its
predecessors in canonical edge order, and the sink's output becomes the
final answer. Agents that cannot reach the sink are skipped entirely.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import BackendUnavailable, EmptyDataset, MasscopeError, Unparseable
from .model import (
    AgentStep,
    ExecutionTrace,
    Message,
    TaskInstance,
    Topology,
    Verdict,
    normalize_answer,
    topological_levels,
    validate_topology,
    verify_answer,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunResult:
    traces: tuple[ExecutionTrace, ...]
    n_correct: int
    n_total: int
    n_unverifiable: int

    @property
    def accuracy(self) -> float:
        # unverifiable traces stay in the denominator: strict scoring
        return self.n_correct / self.n_total if self.n_total else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_correct": self.n_correct,
            "n_total": self.n_total,
            "n_unverifiable": self.n_unverifiable,
        }


def run_instance(
    t: Topology,
    inst: TaskInstance,
    backend,
    freeform_judge=None,
) -> ExecutionTrace:
    """Execute one instance; never raises on backend failure mid-run.

    A BackendUnavailable from any agent aborts the remaining levels: the
    partial trace comes back flagged incomplete with an unverifiable
    verdict, so dataset runs keep going.
    """
    check = validate_topology(t)
    if not check.ok:
        raise MasscopeError(
            f"topology {t.id!r} invalid: " + "; ".join(check.violations)
        )

    levels = topological_levels(t)
    outputs: dict[str, str] = {}
    steps: list[AgentStep] = []
    incomplete = False

    for level in levels:
        produced: list[tuple[str, AgentStep]] = []
        for agent_id in level:
            agent = t.agent(agent_id)
            inputs = tuple(
                Message(source_id=src, text=outputs[src])
                for src, _ in t.in_edges(agent_id)
            )
            try:
                out = backend.complete(agent.role_prompt, inst.query, inputs)
            except BackendUnavailable as exc:
                log.warning(
                    "instance %s: agent %s backend failure: %s",
                    inst.id, agent_id, exc,
                )
                incomplete = True
                break
            produced.append((agent_id, AgentStep(agent_id, inputs, out)))
        for agent_id, step in produced:
            outputs[agent_id] = step.output
            steps.append(step)
        if incomplete:
            break

    if incomplete or t.sink_id not in outputs:
        return ExecutionTrace(
            topology_id=t.id,
            instance_id=inst.id,
            steps=tuple(steps),
            final_answer="",
            verdict=Verdict.UNVERIFIABLE,
            incomplete=True,
        )

    sink_output = outputs[t.sink_id]
    try:
        final = normalize_answer(sink_output, inst.answer_format)
    except Unparseable:
        return ExecutionTrace(
            topology_id=t.id,
            instance_id=inst.id,
            steps=tuple(steps),
            final_answer=sink_output,
            verdict=Verdict.UNVERIFIABLE,
        )

    verdict = verify_answer(final, inst.gold_answer, inst.answer_format, freeform_judge)
    return ExecutionTrace(
        topology_id=t.id,
        instance_id=inst.id,
        steps=tuple(steps),
        final_answer=final,
        verdict=verdict,
    )


def run_dataset(
    t: Topology,
    instances,
    backend,
    parallelism: int = 1,
    freeform_judge=None,
) -> RunResult:
    """Run every instance; traces come back in input order regardless of
    completion order, so results are invariant to ``parallelism``.
    """
    instances = list(instances)
    if not instances:
        raise EmptyDataset("run_dataset received no instances")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    if parallelism == 1:
        traces = [run_instance(t, inst, backend, freeform_judge) for inst in instances]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            traces = list(
                pool.map(lambda inst: run_instance(t, inst, backend, freeform_judge), instances)
            )

    n_correct = sum(1 for tr in traces if tr.verdict is Verdict.CORRECT)
    n_unverifiable = sum(1 for tr in traces if tr.verdict is Verdict.UNVERIFIABLE)
    return RunResult(
        traces=tuple(traces),
        n_correct=n_correct,
        n_total=len(traces),
        n_unverifiable=n_unverifiable,
    )


__all__ = ["RunResult", "run_instance", "run_dataset"]
