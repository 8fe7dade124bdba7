"""Desk-scale topology learning: greedy edge pruning and team selection.

Pruning ranks edges by their mean influence weight and tries to drop the
least influential one, keeping only removals that leave training accuracy
non-decreasing and the sink reachable. Team selection enumerates bounded
subsets of an agent pool, scores relevance against the query and spectral
diversity of the role prompts, and picks from the Pareto front.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyFront,
    EmptyPool,
    NoRemovableEdge,
    NotPSD,
    NotSymmetric,
    PoolTooLarge,
    TopologyMismatch,
)
from .executor import run_dataset
from .metrics import MetricRecord, cosine, message_influence
from .model import AgentSpec, TaskInstance, Topology, validate_topology

log = logging.getLogger(__name__)

Edge = tuple[str, str]


# --------------------------------------------------------------------------
# edge importance and pruning


def edge_importance(
    traces: Sequence,
    alpha_records: Sequence[Sequence[MetricRecord]],
    edges: Iterable[Edge] = (),
) -> dict[Edge, float]:
    """Mean influence weight per edge across traces.

    Each record's alpha map is keyed by message index; the trace's input
    list recovers which agent sent that message. Edges listed in ``edges``
    but never observed carrying a message score 0.
    """
    if len(traces) != len(alpha_records):
        raise ValueError("traces and alpha_records must align")
    topo_ids = {tr.topology_id for tr in traces}
    if len(topo_ids) > 1:
        raise TopologyMismatch(f"traces span topologies {sorted(topo_ids)}")

    samples: dict[Edge, list[float]] = {tuple(e): [] for e in edges}
    for trace, records in zip(traces, alpha_records):
        steps = {s.agent_id: s for s in trace.steps}
        for rec in records:
            step = steps[rec.agent_id]
            for idx, alpha in rec.alpha.items():
                edge = (step.inputs[idx].source_id, rec.agent_id)
                samples.setdefault(edge, []).append(alpha)
    return {e: (sum(v) / len(v) if v else 0.0) for e, v in samples.items()}


@dataclass(frozen=True)
class PruneConfig:
    max_removals: int = 1
    min_edges: int = 1
    eval_instances: int = 0  # 0 = use the whole training set
    tie_break: str = "lowest_alpha_first"

    def __post_init__(self) -> None:
        if self.max_removals < 0:
            raise ValueError("max_removals must be >= 0")
        if self.min_edges < 0:
            raise ValueError("min_edges must be >= 0")
        if self.tie_break not in ("lowest_alpha_first", "lexicographic"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class PruneDecision:
    edge: Edge
    importance: float
    acc_before: float
    acc_after: float
    accepted: bool

    def to_dict(self) -> dict:
        return {
            "edge": list(self.edge),
            "importance": self.importance,
            "acc_before": self.acc_before,
            "acc_after": self.acc_after,
            "accepted": self.accepted,
        }


def _without_edge(t: Topology, edge: Edge) -> Topology:
    return Topology(
        id=t.id,
        domain_label=t.domain_label,
        agents=t.agents,
        edges=tuple(e for e in t.edges if e != edge),
        sink_id=t.sink_id,
    )


def _sources(edges: Sequence[Edge]) -> set[str]:
    """In-degree-0 endpoints that still have at least one edge; fully
    orphaned agents do not count (pruning may legitimately strand them).
    """
    touched = {v for e in edges for v in e}
    has_incoming = {dst for _, dst in edges}
    return {v for v in touched if v not in has_incoming}


def _edge_removal_ok(t: Topology, edge: Edge, min_edges: int) -> bool:
    remaining = [e for e in t.edges if e != edge]
    if len(remaining) < min_edges:
        return False
    sources = _sources(remaining)
    if not sources:
        return False
    succ: dict[str, list[str]] = {}
    for src, dst in remaining:
        succ.setdefault(src, []).append(dst)

    def reaches_sink(start: str) -> bool:
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            if node == t.sink_id:
                return True
            for nxt in succ.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return False

    return all(reaches_sink(s) for s in sources)


def prune_topology(
    t: Topology,
    trainset: Sequence[TaskInstance],
    backend,
    cfg: PruneConfig,
    on_decision: Callable[[PruneDecision], None] | None = None,
) -> Topology:
    """Greedy dropout of low-influence edges, accept-if-not-worse.

    Each round re-evaluates the current topology on the training slice,
    ranks structurally removable edges by mean alpha ascending, and tries
    the cheapest one. A removal that drops accuracy is rolled back and the
    edge protected from retry. Raises NoRemovableEdge when no edge could
    legally be removed at all (every removal would starve the sink or
    break the min_edges floor).
    """
    if not trainset:
        raise ValueError("prune_topology needs a nonempty training set")
    if cfg.max_removals == 0:
        return t

    instances = list(trainset)
    if cfg.eval_instances:
        instances = instances[: cfg.eval_instances]

    def evaluate(topology: Topology):
        result = run_dataset(topology, instances, backend)
        alpha_records = [
            message_influence(trace, topology, inst.query, backend)
            for trace, inst in zip(result.traces, instances)
        ]
        importance = edge_importance(result.traces, alpha_records, topology.edges)
        # per-edge minimum observed alpha, for the lowest_alpha_first tie rule
        minima: dict[Edge, float] = {tuple(e): math.inf for e in topology.edges}
        for trace, records in zip(result.traces, alpha_records):
            steps = {s.agent_id: s for s in trace.steps}
            for rec in records:
                step = steps[rec.agent_id]
                for idx, alpha in rec.alpha.items():
                    edge = (step.inputs[idx].source_id, rec.agent_id)
                    if alpha < minima.get(edge, math.inf):
                        minima[edge] = alpha
        return result, importance, minima

    current = t
    result, importance, minima = evaluate(current)
    acc_current = result.accuracy

    structural = [e for e in current.edges if _edge_removal_ok(current, e, cfg.min_edges)]
    if not structural:
        raise NoRemovableEdge(
            f"no edge of {t.id!r} can be removed without starving the sink"
        )

    protected: set[Edge] = set()
    removals = 0
    while removals < cfg.max_removals:
        candidates = [
            e
            for e in current.edges
            if e not in protected and _edge_removal_ok(current, e, cfg.min_edges)
        ]
        if not candidates:
            break

        if cfg.tie_break == "lowest_alpha_first":
            candidates.sort(key=lambda e: (importance[e], minima.get(e, math.inf), e))
        else:
            candidates.sort(key=lambda e: (importance[e], e))
        edge = candidates[0]

        trial = _without_edge(current, edge)
        check = validate_topology(trial)
        if not check.ok:  # pragma: no cover - removal cannot invalidate a DAG
            protected.add(edge)
            continue
        trial_result = run_dataset(trial, instances, backend)
        accepted = trial_result.accuracy >= acc_current
        if on_decision is not None:
            on_decision(
                PruneDecision(
                    edge=edge,
                    importance=importance[edge],
                    acc_before=acc_current,
                    acc_after=trial_result.accuracy,
                    accepted=accepted,
                )
            )
        if accepted:
            log.info(
                "pruned edge %s->%s (importance %.4f, accuracy %.3f -> %.3f)",
                edge[0], edge[1], importance[edge], acc_current, trial_result.accuracy,
            )
            current = trial
            removals += 1
            result, importance, minima = evaluate(current)
            acc_current = result.accuracy
        else:
            protected.add(edge)
    return current


# --------------------------------------------------------------------------
# team selection


def relevance_score(team: Sequence[AgentSpec], query_text: str, embedder) -> float:
    """Mean cosine between each member's role prompt and the query."""
    members = list(team)
    if not members:
        raise ValueError("relevance_score needs a nonempty team")
    qv = embedder.embed(query_text)
    return sum(cosine(embedder.embed(a.role_prompt), qv) for a in members) / len(members)


def jacobi_eigenvalues(
    matrix: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100
) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius mass falls under ``tol`` or
    the sweep budget runs out; returns eigenvalues in descending order.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    for _ in range(max_sweeps):
        # rounding can push the difference a hair below zero once converged
        off = math.sqrt(max(0.0, float((a**2).sum() - (a.diagonal() ** 2).sum())))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < tol * 1e-2:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    tval = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    tval = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(tval * tval + 1.0)
                s = tval * c
                # two-sided rotation in the (p, q) plane
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
    return np.sort(a.diagonal())[::-1].copy()


def vendi_score(sim_matrix, diag: float = 1.0) -> float:
    """Effective number of distinct items in a similarity matrix: the
    exponential of the Shannon entropy of the eigenvalues of K/n.

    Ranges from 1 (all items identical) to n (mutually orthogonal).
    Eigenvalues below -1e-8 reject the matrix as not PSD; tiny negatives
    are clamped to zero.
    """
    a = np.array(sim_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("similarity matrix must be square")
    n = a.shape[0]
    if diag <= 0.0:
        raise ValueError("diag must be positive")
    if not np.allclose(a, a.T, atol=1e-9, rtol=0.0):
        raise NotSymmetric("similarity matrix must be symmetric within 1e-9")
    if np.any(np.abs(a) > diag + 1e-9):
        raise ValueError(f"similarity entries must lie in [-{diag}, {diag}]")
    if np.any(np.abs(a.diagonal() - diag) > 1e-9):
        raise ValueError(f"diagonal must equal {diag}")

    eigs = jacobi_eigenvalues(a / (n * diag))
    if np.any(eigs < -1e-8):
        raise NotPSD(f"eigenvalue {eigs.min():.3e} below tolerance")
    eigs = np.clip(eigs, 0.0, None)
    entropy = -float(sum(lam * math.log(lam) for lam in eigs if lam > 0.0))
    return math.exp(entropy)


def pareto_front(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of non-dominated points, ascending.

    p dominates q when p >= q in both coordinates and beats it in at
    least one; equal points never dominate each other, so duplicates of a
    front member all survive.
    """
    order = sorted(range(len(points)), key=lambda i: (-points[i][0], -points[i][1]))
    front: list[int] = []
    best_y_prev = -math.inf  # max y over strictly larger x
    i = 0
    while i < len(order):
        j = i
        x = points[order[i]][0]
        while j < len(order) and points[order[j]][0] == x:
            j += 1
        group = order[i:j]
        group_max_y = max(points[k][1] for k in group)
        if group_max_y > best_y_prev:
            front.extend(k for k in group if points[k][1] == group_max_y)
        best_y_prev = max(best_y_prev, group_max_y)
        i = j
    return sorted(front)


@dataclass(frozen=True)
class CandidateTeam:
    agent_ids: frozenset[str]
    relevance: float
    diversity: float

    def to_dict(self) -> dict:
        return {
            "agent_ids": sorted(self.agent_ids),
            "relevance": self.relevance,
            "diversity": self.diversity,
        }


MAX_TEAM_ENUMERATION = 1_000_000


def select_team(
    pool: Sequence[AgentSpec],
    query: str,
    size_bounds: tuple[int, int],
    embedder,
) -> CandidateTeam:
    """Enumerate teams with size in [lo, hi], Pareto-filter on (relevance,
    diversity), then scalarize: relevance + diversity/hi, ties broken by
    the lexicographically smallest sorted id tuple.
    """
    lo, hi = size_bounds
    if not pool:
        raise EmptyPool("empty agent pool")
    if not (1 <= lo <= hi):
        raise ValueError(f"bad size bounds [{lo}, {hi}]")
    if lo > len(pool):
        raise EmptyFront(f"lower bound {lo} exceeds pool size {len(pool)}")

    sizes = range(lo, min(hi, len(pool)) + 1)
    n_teams = sum(math.comb(len(pool), k) for k in sizes)
    if n_teams > MAX_TEAM_ENUMERATION:
        raise PoolTooLarge(f"{n_teams} candidate teams exceed the enumeration budget")

    qv = embedder.embed(query)
    vecs = [embedder.embed(a.role_prompt) for a in pool]
    member_rel = [cosine(v, qv) for v in vecs]
    gram = np.ones((len(pool), len(pool)))
    for i in range(len(pool)):
        for j in range(i + 1, len(pool)):
            gram[i, j] = gram[j, i] = cosine(vecs[i], vecs[j])

    teams: list[tuple[tuple[int, ...], float, float]] = []
    for k in sizes:
        for combo in itertools.combinations(range(len(pool)), k):
            rel = sum(member_rel[i] for i in combo) / k
            div = vendi_score(gram[np.ix_(combo, combo)])
            teams.append((combo, rel, div))

    front = pareto_front([(rel, div) for _, rel, div in teams])
    if not front:  # pragma: no cover - front of nonempty input is nonempty
        raise EmptyFront("no non-dominated team")

    def sort_key(idx: int):
        combo, rel, div = teams[idx]
        ids = tuple(sorted(pool[i].id for i in combo))
        return (-(rel + div / hi), ids)

    best = min(front, key=sort_key)
    combo, rel, div = teams[best]
    return CandidateTeam(
        agent_ids=frozenset(pool[i].id for i in combo),
        relevance=rel,
        diversity=div,
    )


__all__ = [
    "Edge",
    "edge_importance",
    "PruneConfig",
    "PruneDecision",
    "prune_topology",
    "relevance_score",
    "jacobi_eigenvalues",
    "vendi_score",
    "pareto_front",
    "CandidateTeam",
    "select_team",
    "MAX_TEAM_ENUMERATION",
]
