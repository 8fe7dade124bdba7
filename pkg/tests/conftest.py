"""Shared fixtures: canonical topologies, synthetic tasks, and scripted
backends that give tests exact control over embeddings, completions and
judge verdicts.
"""

from __future__ import annotations

import math

import pytest

from masscope.backend import EmbeddingVector, MockBackend
from masscope.errors import JudgeParseFailure
from masscope.model import AgentSpec, TaskInstance, Topology


def unit(values) -> EmbeddingVector:
    norm = math.sqrt(sum(v * v for v in values))
    return EmbeddingVector(tuple(v / norm for v in values))


def basis(dim: int, axis: int) -> EmbeddingVector:
    return EmbeddingVector(tuple(1.0 if i == axis else 0.0 for i in range(dim)))


class TableBackend:
    """Backend double driven by lookup tables and callables.

    embeddings: exact text -> EmbeddingVector (missing text is a test bug,
    so it raises KeyError loudly). completer(role_prompt, query, inputs)
    -> text. judge(query, role_prompt, message) -> ±1 or raises.
    """

    def __init__(self, embeddings=None, completer=None, judge=None):
        self.embeddings = dict(embeddings or {})
        self.completer = completer
        self.judge = judge or (lambda q, p, m: 1)

    def complete(self, role_prompt, query, inputs):
        if self.completer is None:
            raise NotImplementedError("no completer configured")
        return self.completer(role_prompt, query, inputs)

    def embed(self, text):
        return self.embeddings[text]

    def judge_usefulness(self, query, role_prompt, message):
        return self.judge(query, role_prompt, message)


class ScriptedChat:
    """Judge-backend double for failure-mode classification: returns
    queued replies from complete() in order, repeating the last one."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, role_prompt, query, inputs):
        reply = self.replies[min(self.calls, len(self.replies) - 1)]
        self.calls += 1
        return reply


class FailingJudge:
    def judge_usefulness(self, query, role_prompt, message):
        raise JudgeParseFailure("scripted failure")


@pytest.fixture
def mock_backend():
    return MockBackend()


def chain_topology(n: int = 3, tid: str = "chain", domain: str = "demo") -> Topology:
    agents = tuple(
        AgentSpec(f"a{i}", f"Agent {i}", f"chain role prompt {i}") for i in range(n)
    )
    edges = tuple((f"a{i}", f"a{i + 1}") for i in range(n - 1))
    return Topology(tid, domain, agents, edges, f"a{n - 1}")


def diamond_topology(tid: str = "diamond", domain: str = "demo") -> Topology:
    agents = tuple(
        AgentSpec(aid, aid.upper(), f"diamond role prompt {aid}")
        for aid in ("a", "b", "c", "d")
    )
    edges = (("a", "b"), ("a", "c"), ("b", "d"), ("c", "d"))
    return Topology(tid, domain, agents, edges, "d")


def numeric_instances(n: int, domain: str = "demo") -> list[TaskInstance]:
    return [
        TaskInstance(
            id=f"inst-{k:03d}",
            domain=domain,
            query=f"Compute the value for case {k}.",
            gold_answer=str(k),
            answer_format="numeric",
        )
        for k in range(n)
    ]


@pytest.fixture
def chain3() -> Topology:
    return chain_topology(3)


@pytest.fixture
def diamond() -> Topology:
    return diamond_topology()


# --------------------------------------------------------------------------
# role-dominant ablation fixture: the sink's role prompt is what extracts
# the gold answer, and the source topology has the same wiring positionally,
# so swapping connections is free while swapping roles is fatal.

EXTRACT_ROLE = "extract-role: copy the number between brackets"
HELPER_ROLE = "helper-role: restate the question"
NOISE_ROLE_A = "noise-role-a: reply zero"
NOISE_ROLE_B = "noise-role-b: reply zero"


def role_dominant_completer(role_prompt, query, inputs):
    if role_prompt == EXTRACT_ROLE:
        start = query.index("[") + 1
        return query[start:query.index("]")]
    if role_prompt == HELPER_ROLE:
        return "restating: " + query
    return "0"


def role_dominant_pair() -> tuple[Topology, Topology, list[TaskInstance]]:
    t_in = Topology(
        "t-in",
        "demo",
        (AgentSpec("g1", "Helper", HELPER_ROLE), AgentSpec("g2", "Extractor", EXTRACT_ROLE)),
        (("g1", "g2"),),
        "g2",
    )
    t_src = Topology(
        "t-src",
        "other",
        (AgentSpec("h1", "NoiseA", NOISE_ROLE_A), AgentSpec("h2", "NoiseB", NOISE_ROLE_B)),
        (("h1", "h2"),),
        "h2",
    )
    instances = [
        TaskInstance(
            id=f"rd-{k}",
            domain="demo",
            query=f"The hidden value is [{k + 3}]; report it.",
            gold_answer=str(k + 3),
            answer_format="numeric",
        )
        for k in range(6)
    ]
    return t_in, t_src, instances


# --------------------------------------------------------------------------
# edge-dominant ablation fixture: a decoder agent produces the gold and the
# sink merely copies its first input, so breaking the wire is fatal while
# the (identical) roles make the role swap a no-op.

DECODER_ROLE = "decoder-role: derive the answer"
COPY_ROLE = "copy-role: forward the first message"


def edge_dominant_completer(role_prompt, query, inputs):
    if role_prompt == DECODER_ROLE:
        return query.rsplit(" ", 1)[-1].rstrip(".")
    if role_prompt == COPY_ROLE:
        return inputs[0].text if inputs else "no input received"
    raise AssertionError(f"unexpected role {role_prompt!r}")


def edge_dominant_pair() -> tuple[Topology, Topology, list[TaskInstance]]:
    t_in = Topology(
        "e-in",
        "demo",
        (AgentSpec("r1", "Decoder", DECODER_ROLE), AgentSpec("r2", "Copier", COPY_ROLE)),
        (("r1", "r2"),),
        "r2",
    )
    # same roles in the same positions, but no wiring at all
    t_src = Topology(
        "e-src",
        "other",
        (AgentSpec("s1", "Decoder", DECODER_ROLE), AgentSpec("s2", "Copier", COPY_ROLE)),
        (),
        "s2",
    )
    instances = [
        TaskInstance(
            id=f"ed-{k}",
            domain="demo",
            query=f"After simplification the result equals {k + 11}.",
            gold_answer=str(k + 11),
            answer_format="numeric",
        )
        for k in range(5)
    ]
    return t_in, t_src, instances


# --------------------------------------------------------------------------
# pruning fixture: agent z feeds the sink pure noise with the lowest
# influence weight, so greedy pruning should drop (z, c) first and keep
# accuracy at 1.0.

USEFUL_ROLE = "useful-role"
NOISE_ROLE = "noise-role"
SINK_ROLE = "sink-role"


def prune_fixture() -> tuple[Topology, list[TaskInstance], TableBackend]:
    t = Topology(
        "prunable",
        "demo",
        (
            AgentSpec("x", "Useful", USEFUL_ROLE),
            AgentSpec("z", "Noise", NOISE_ROLE),
            AgentSpec("c", "Sink", SINK_ROLE),
        ),
        (("x", "c"), ("z", "c")),
        "c",
    )
    instances = [
        TaskInstance(
            id=f"pr-{k}",
            domain="demo",
            query=f"prune-query-{k}",
            gold_answer="1",
            answer_format="numeric",
        )
        for k in range(4)
    ]

    def completer(role_prompt, query, inputs):
        if role_prompt == USEFUL_ROLE:
            return "ans 1"
        if role_prompt == NOISE_ROLE:
            return "zzz"
        return inputs[0].text if inputs else "no answer"

    embeddings = {
        "ans 1": basis(4, 0),
        "zzz": basis(4, 1),
        "no answer": basis(4, 1),
        USEFUL_ROLE: basis(4, 2),
        NOISE_ROLE: basis(4, 2),
        SINK_ROLE: basis(4, 2),
    }
    for inst in instances:
        embeddings[inst.query] = basis(4, 3)
    return t, instances, TableBackend(embeddings=embeddings, completer=completer)
