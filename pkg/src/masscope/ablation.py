"""Interchange ablations: swap a topology's roles or its wiring with
those of a topology learned elsewhere, then measure what each swap costs.

Agent correspondence is positional (list order); a count mismatch is an
error rather than padding, since padding would fabricate agents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .analysis import ablation_delta
from .errors import AgentCountMismatch, InvalidResult
from .executor import run_dataset
from .model import AgentSpec, TaskInstance, Topology, validate_topology


def _check_counts(t_in: Topology, t_src: Topology) -> None:
    if len(t_in.agents) != len(t_src.agents):
        raise AgentCountMismatch(
            f"{t_in.id!r} has {len(t_in.agents)} agents, "
            f"{t_src.id!r} has {len(t_src.agents)}"
        )


def _validated(t: Topology, label: str) -> Topology:
    check = validate_topology(t)
    if not check.ok:
        raise InvalidResult(f"{label} interchange failed validation: " + "; ".join(check.violations))
    return t


def connection_ood(t_in: Topology, t_src: Topology) -> Topology:
    """Keep t_in's agents (roles), adopt t_src's wiring.

    t_src's edges and sink are re-indexed by agent position: agent k of
    t_src maps onto agent k of t_in.
    """
    _check_counts(t_in, t_src)
    src_pos = {a.id: k for k, a in enumerate(t_src.agents)}
    mapped_edges = tuple(
        (t_in.agents[src_pos[u]].id, t_in.agents[src_pos[v]].id)
        for u, v in t_src.edges
    )
    mapped_sink = t_in.agents[src_pos[t_src.sink_id]].id
    out = Topology(
        id=f"{t_in.id}+conn[{t_src.id}]",
        domain_label=t_in.domain_label,
        agents=t_in.agents,
        edges=mapped_edges,
        sink_id=mapped_sink,
    )
    return _validated(out, "connection")


def role_ood(t_in: Topology, t_src: Topology) -> Topology:
    """Keep t_in's wiring and sink, adopt t_src's role prompts (and names)
    positionally."""
    _check_counts(t_in, t_src)
    swapped = tuple(
        AgentSpec(id=a.id, name=b.name, role_prompt=b.role_prompt)
        for a, b in zip(t_in.agents, t_src.agents)
    )
    out = Topology(
        id=f"{t_in.id}+role[{t_src.id}]",
        domain_label=t_in.domain_label,
        agents=swapped,
        edges=t_in.edges,
        sink_id=t_in.sink_id,
    )
    return _validated(out, "role")


@dataclass(frozen=True)
class AblationResult:
    """Accuracies as fractions; deltas in percentage points (2 decimals)."""

    acc_in: float
    acc_conn_ood: float
    acc_role_ood: float
    delta_conn: float
    delta_role: float

    def to_dict(self) -> dict:
        return {
            "acc_in": self.acc_in,
            "acc_conn_ood": self.acc_conn_ood,
            "acc_role_ood": self.acc_role_ood,
            "delta_conn": self.delta_conn,
            "delta_role": self.delta_role,
        }


def run_ablation(
    t_in: Topology,
    t_src: Topology,
    testset: Sequence[TaskInstance],
    backend,
    parallelism: int = 1,
) -> AblationResult:
    """Evaluate t_in, its connection interchange and its role interchange
    on the same test set."""
    t_conn = connection_ood(t_in, t_src)
    t_role = role_ood(t_in, t_src)
    acc_in = run_dataset(t_in, testset, backend, parallelism).accuracy
    acc_conn = run_dataset(t_conn, testset, backend, parallelism).accuracy
    acc_role = run_dataset(t_role, testset, backend, parallelism).accuracy
    return AblationResult(
        acc_in=acc_in,
        acc_conn_ood=acc_conn,
        acc_role_ood=acc_role,
        delta_conn=ablation_delta(acc_in * 100.0, acc_conn * 100.0),
        delta_role=ablation_delta(acc_in * 100.0, acc_role * 100.0),
    )


def ablation_csv(rows: Sequence[tuple[str, AblationResult]]) -> str:
    """Benchmark table: in-domain accuracy plus each interchange accuracy
    with its delta in parentheses, percentages to 2 decimals."""
    lines = ["benchmark,in_domain,connection_ood,role_ood"]
    for name, res in rows:
        lines.append(
            f"{name},{res.acc_in * 100:.2f},"
            f"{res.acc_conn_ood * 100:.2f} ({res.delta_conn:+.2f}),"
            f"{res.acc_role_ood * 100:.2f} ({res.delta_role:+.2f})"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "connection_ood",
    "role_ood",
    "AblationResult",
    "run_ablation",
    "ablation_csv",
]
