"""Core domain types: agents, topologies, task instances and traces.

Topologies are plain frozen dataclasses over tuples, so a constructed value
can never drift under the feet of whoever holds a reference to it. All graph
work (validation, leveling) lives here; nothing in this module talks to a
backend.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping, Sequence

from .errors import CyclicTopology, Unparseable


class AnswerFormat(str, enum.Enum):
    BOOLEAN = "boolean"
    MULTICHOICE = "multichoice"
    NUMERIC = "numeric"
    FREEFORM = "freeform"


class Verdict(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    UNVERIFIABLE = "unverifiable"


@dataclass(frozen=True)
class AgentSpec:
    """One agent: a stable id, a display name and its role prompt."""

    id: str
    name: str
    role_prompt: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("agent id must be non-empty")
        if not self.role_prompt:
            raise ValueError(f"agent {self.id!r}: role prompt must be non-empty")


@dataclass(frozen=True)
class Topology:
    """A directed communication graph with a designated sink agent.

    ``edges`` keeps its construction order; that order is the canonical
    message order wherever inputs to an agent have to be sequenced.
    """

    id: str
    domain_label: str
    agents: tuple[AgentSpec, ...]
    edges: tuple[tuple[str, str], ...]
    sink_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(
            self, "edges", tuple((str(a), str(b)) for a, b in self.edges)
        )

    # -- lookups -----------------------------------------------------------

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def agent_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.agents)

    def in_edges(self, agent_id: str) -> tuple[tuple[str, str], ...]:
        """Incoming edges of ``agent_id`` in canonical (construction) order."""
        return tuple(e for e in self.edges if e[1] == agent_id)

    def predecessors(self, agent_id: str) -> tuple[str, ...]:
        return tuple(src for src, _ in self.in_edges(agent_id))

    def successors(self, agent_id: str) -> tuple[str, ...]:
        return tuple(dst for src, dst in self.edges if src == agent_id)


@dataclass(frozen=True)
class TaskInstance:
    id: str
    domain: str
    query: str
    gold_answer: str
    answer_format: AnswerFormat

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError(f"instance {self.id!r}: query must be non-empty")
        object.__setattr__(self, "answer_format", AnswerFormat(self.answer_format))


@dataclass(frozen=True)
class Message:
    """A message as received by an agent, tagged with its producer."""

    source_id: str
    text: str


@dataclass(frozen=True)
class AgentStep:
    """One agent's turn: what it read and what it wrote."""

    agent_id: str
    inputs: tuple[Message, ...]
    output: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class ExecutionTrace:
    topology_id: str
    instance_id: str
    steps: tuple[AgentStep, ...]
    final_answer: str
    verdict: Verdict
    incomplete: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "verdict", Verdict(self.verdict))

    def step_for(self, agent_id: str) -> AgentStep:
        for s in self.steps:
            if s.agent_id == agent_id:
                return s
        raise KeyError(agent_id)


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


# --------------------------------------------------------------------------
# graph checks


def _adjacency(t: Topology) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {a.id: [] for a in t.agents}
    for src, dst in t.edges:
        if src in adj and dst in adj:
            adj[src].append(dst)
    return adj


def _find_cycle(adj: Mapping[str, list[str]]) -> list[str] | None:
    """Return the node ids of one directed cycle, or None if acyclic."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {v: WHITE for v in adj}
    for root in adj:
        if color[root] != WHITE:
            continue
        stack: list[tuple[str, Iterable[str]]] = [(root, iter(adj[root]))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GREY:
                    return path[path.index(nxt):]
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    path.append(nxt)
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                stack.pop()
    return None


def sink_closure(t: Topology) -> set[str]:
    """Ids of all agents with a directed path to the sink (sink included)."""
    preds: dict[str, set[str]] = {a.id: set() for a in t.agents}
    for src, dst in t.edges:
        if src in preds and dst in preds:
            preds[dst].add(src)
    seen = {t.sink_id} if t.sink_id in preds else set()
    frontier = list(seen)
    while frontier:
        node = frontier.pop()
        for p in preds[node]:
            if p not in seen:
                seen.add(p)
                frontier.append(p)
    return seen


def validate_topology(t: Topology) -> ValidationResult:
    """Structural checks; violations are fatal, warnings are advisory.

    Violations: empty agent set, duplicate agent ids, edge endpoints that
    are not agents, self-loops, duplicate edges, unknown sink, any directed
    cycle. Agents with no path to the sink only warn: they are skipped at
    execution time, not rejected.
    """
    res = ValidationResult(ok=True)
    if not t.agents:
        res.violations.append("topology has no agents")
        res.ok = False
        return res

    ids = [a.id for a in t.agents]
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            res.violations.append(f"duplicate agent id {i!r}")
        seen.add(i)

    if t.sink_id not in seen:
        res.violations.append(f"sink {t.sink_id!r} is not an agent")

    seen_edges: set[tuple[str, str]] = set()
    for src, dst in t.edges:
        if src not in seen:
            res.violations.append(f"edge source {src!r} is not an agent")
        if dst not in seen:
            res.violations.append(f"edge target {dst!r} is not an agent")
        if src == dst:
            res.violations.append(f"self-loop on {src!r}")
        if (src, dst) in seen_edges:
            res.violations.append(f"duplicate edge {src!r}->{dst!r}")
        seen_edges.add((src, dst))

    cycle = _find_cycle(_adjacency(t))
    if cycle is not None:
        res.violations.append("cycle {" + ", ".join(sorted(cycle)) + "}")

    if not res.violations and t.sink_id in seen:
        reaching = sink_closure(t)
        for a in t.agents:
            if a.id not in reaching:
                res.warnings.append(f"agent {a.id!r} has no path to the sink")

    res.ok = not res.violations
    return res


def topological_levels(t: Topology) -> list[tuple[str, ...]]:
    """Longest-path levels of the sink-reaching subgraph.

    Level k holds the agents whose longest chain of predecessors (within
    the subgraph of agents that can reach the sink) has length k, so level
    0 is exactly the sources of that subgraph and the sink sits in the last
    level. Agents inside a level follow the topology's agent order.
    Raises CyclicTopology if the graph (as a whole) has a cycle.
    """
    cycle = _find_cycle(_adjacency(t))
    if cycle is not None:
        raise CyclicTopology("cycle {" + ", ".join(sorted(cycle)) + "}")

    active = sink_closure(t)
    preds: dict[str, list[str]] = {v: [] for v in active}
    for src, dst in t.edges:
        if src in active and dst in active:
            preds[dst].append(src)

    level: dict[str, int] = {}

    def depth(v: str) -> int:
        # active set is predecessor-closed, so recursion stays inside it
        if v in level:
            return level[v]
        d = 0 if not preds[v] else 1 + max(depth(u) for u in preds[v])
        level[v] = d
        return d

    for v in active:
        depth(v)

    if not level:
        return []
    out: list[list[str]] = [[] for _ in range(max(level.values()) + 1)]
    for a in t.agents:
        if a.id in level:
            out[level[a.id]].append(a.id)
    return [tuple(lvl) for lvl in out]


# --------------------------------------------------------------------------
# answer normalization

_NUM_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_CHOICE_RE = re.compile(r"\b([A-E])\b")
_WORD_RE = re.compile(r"[A-Za-z]+")
_BOOL_WORDS = {"true": "true", "yes": "true", "false": "false", "no": "false"}


def normalize_answer(text: str, fmt: AnswerFormat) -> str:
    """Canonicalize free model output for comparison against gold.

    boolean      -> "true" / "false" from the last yes/no/true/false word
    multichoice  -> last standalone capital letter A-E
    numeric      -> last number, re-rendered in plain (non-scientific) form
    freeform     -> whitespace-collapsed text

    The mapping is idempotent: normalizing an already-normalized string
    returns it unchanged. Raises Unparseable when no token of the required
    shape occurs.
    """
    fmt = AnswerFormat(fmt)
    if fmt is AnswerFormat.BOOLEAN:
        for word in reversed(_WORD_RE.findall(text)):
            val = _BOOL_WORDS.get(word.lower())
            if val is not None:
                return val
        raise Unparseable(f"no boolean token in {text!r}")

    if fmt is AnswerFormat.MULTICHOICE:
        hits = _CHOICE_RE.findall(text)
        if not hits:
            raise Unparseable(f"no option letter in {text!r}")
        return hits[-1]

    if fmt is AnswerFormat.NUMERIC:
        hits = _NUM_RE.findall(text)
        if not hits:
            raise Unparseable(f"no number in {text!r}")
        try:
            value = Decimal(hits[-1])
        except InvalidOperation as exc:  # pragma: no cover - regex guards this
            raise Unparseable(f"bad number {hits[-1]!r}") from exc
        # plain (non-scientific) rendering; magnitudes past 1e±100 are noise,
        # not answers, and would expand to absurd digit strings
        if value != 0 and not -100 <= value.adjusted() <= 100:
            raise Unparseable(f"number {hits[-1]!r} out of plausible range")
        return format(value, "f")

    collapsed = " ".join(text.split())
    if not collapsed:
        raise Unparseable("empty freeform answer")
    return collapsed


def verify_answer(
    final: str,
    gold: str,
    fmt: AnswerFormat,
    freeform_judge=None,
) -> Verdict:
    """Score a canonical final answer against gold.

    boolean / multichoice: case-insensitive equality of canonical forms.
    numeric: relative error <= 1e-3 or absolute error <= 1e-6.
    freeform: exact (case-insensitive) matches are correct outright;
    otherwise the optional ``freeform_judge(final, gold) -> bool`` decides,
    and with no judge configured the verdict is unverifiable.
    """
    fmt = AnswerFormat(fmt)
    try:
        p = normalize_answer(final, fmt)
        g = normalize_answer(gold, fmt)
    except Unparseable:
        return Verdict.UNVERIFIABLE

    if fmt is AnswerFormat.NUMERIC:
        pv, gv = float(p), float(g)
        ok = abs(pv - gv) <= 1e-6 or (gv != 0.0 and abs(pv - gv) / abs(gv) <= 1e-3)
        return Verdict.CORRECT if ok else Verdict.INCORRECT

    if fmt is AnswerFormat.FREEFORM:
        if p.lower() == g.lower():
            return Verdict.CORRECT
        if freeform_judge is None:
            return Verdict.UNVERIFIABLE
        return Verdict.CORRECT if freeform_judge(p, g) else Verdict.INCORRECT

    return Verdict.CORRECT if p.lower() == g.lower() else Verdict.INCORRECT


__all__ = [
    "AnswerFormat",
    "Verdict",
    "AgentSpec",
    "Topology",
    "TaskInstance",
    "Message",
    "AgentStep",
    "ExecutionTrace",
    "ValidationResult",
    "validate_topology",
    "topological_levels",
    "sink_closure",
    "normalize_answer",
    "verify_answer",
]
