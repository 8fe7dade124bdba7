"""Execution semantics: routing, leveling, scoring, determinism."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from masscope.backend import MockBackend
from masscope.errors import BackendUnavailable, EmptyDataset
from masscope.executor import run_dataset, run_instance
from masscope.model import AgentSpec, TaskInstance, Topology, Verdict, normalize_answer
from masscope.store import traces_to_jsonl

from .conftest import TableBackend, chain_topology, diamond_topology, numeric_instances
from .test_backend import oracle_fnv1a64

GOLDEN_PATH = Path(__file__).parent / "data" / "golden_traces.jsonl"


def golden_setup():
    topology = chain_topology(3, tid="golden-chain", domain="demo")
    instances = [
        TaskInstance("g-0", "demo", "State the first checkpoint value.", "7", "numeric"),
        TaskInstance("g-1", "demo", "State the second checkpoint value.", "11", "numeric"),
    ]
    return topology, instances


def mock_output(role_prompt: str, query: str, input_texts: list[str]) -> str:
    payload = role_prompt + "\n" + query + "\n" + "".join(t + "\n" for t in input_texts)
    return f"[{role_prompt[:8]}|{oracle_fnv1a64(payload.encode()):016x}]"


class TestRouting:
    def test_chain_passes_outputs_forward(self, chain3, mock_backend):
        inst = numeric_instances(1)[0]
        trace = run_instance(chain3, inst, mock_backend)
        assert [s.agent_id for s in trace.steps] == ["a0", "a1", "a2"]
        assert trace.steps[0].inputs == ()
        assert [m.source_id for m in trace.steps[1].inputs] == ["a0"]
        assert trace.steps[1].inputs[0].text == trace.steps[0].output
        assert [m.source_id for m in trace.steps[2].inputs] == ["a1"]
        assert trace.steps[2].inputs[0].text == trace.steps[1].output

    def test_diamond_sink_gets_two_messages_in_edge_order(self, diamond, mock_backend):
        inst = numeric_instances(1)[0]
        trace = run_instance(diamond, inst, mock_backend)
        sink = trace.step_for("d")
        assert [m.source_id for m in sink.inputs] == ["b", "c"]
        assert sink.inputs[0].text == trace.step_for("b").output
        assert sink.inputs[1].text == trace.step_for("c").output

    def test_chain_trace_matches_hand_built_oracle(self, mock_backend):
        topology, instances = golden_setup()
        inst = instances[0]
        trace = run_instance(topology, inst, mock_backend)

        roles = [a.role_prompt for a in topology.agents]
        out0 = mock_output(roles[0], inst.query, [])
        out1 = mock_output(roles[1], inst.query, [out0])
        out2 = mock_output(roles[2], inst.query, [out1])
        assert [s.output for s in trace.steps] == [out0, out1, out2]
        assert trace.final_answer == normalize_answer(out2, inst.answer_format)

    def test_agents_not_reaching_sink_are_skipped(self, mock_backend):
        agents = tuple(AgentSpec(a, a, f"role {a}") for a in ("a", "b", "o"))
        t = Topology("t", "d", agents, (("a", "b"), ("b", "o")), "b")
        trace = run_instance(t, numeric_instances(1)[0], mock_backend)
        assert [s.agent_id for s in trace.steps] == ["a", "b"]

    def test_message_conservation_on_random_dags(self, mock_backend):
        # delivered messages = edges among executed agents; steps = agents
        # that can reach the sink
        rng = random.Random(3)
        from masscope.model import sink_closure

        for _ in range(50):
            n = rng.randint(2, 7)
            ids = [f"n{i}" for i in range(n)]
            agents = tuple(AgentSpec(a, a, f"role {a}") for a in ids)
            edges = tuple(
                (ids[i], ids[j])
                for i in range(n)
                for j in range(i + 1, n)
                if rng.random() < 0.5
            )
            t = Topology("t", "d", agents, edges, ids[-1])
            trace = run_instance(t, numeric_instances(1)[0], mock_backend)
            executed = {s.agent_id for s in trace.steps}
            assert executed == sink_closure(t)
            live_edges = [e for e in edges if e[0] in executed and e[1] in executed]
            assert sum(len(s.inputs) for s in trace.steps) == len(live_edges)


class TestScoring:
    def test_accuracy_half(self):
        # sink echoes the gold for even instances, garbage digits otherwise
        def completer(role_prompt, query, inputs):
            k = int(query.split("#")[1])
            return str(k) if k % 2 == 0 else "999999"

        backend = TableBackend(completer=completer)
        t = chain_topology(1)
        instances = [
            TaskInstance(f"i{k}", "d", f"case #{k}", str(k), "numeric") for k in range(4)
        ]
        result = run_dataset(t, instances, backend)
        assert result.n_total == 4
        assert result.n_correct == 2
        assert result.accuracy == 0.5

    def test_unparseable_sink_output_is_unverifiable(self):
        backend = TableBackend(completer=lambda r, q, i: "no numbers whatsoever")
        t = chain_topology(1)
        inst = TaskInstance("i", "d", "q?", "3", "numeric")
        trace = run_instance(t, inst, backend)
        assert trace.verdict is Verdict.UNVERIFIABLE
        assert trace.final_answer == "no numbers whatsoever"
        assert not trace.incomplete

    def test_unverifiable_counts_against_accuracy(self):
        backend = TableBackend(completer=lambda r, q, i: "mystery")
        t = chain_topology(1)
        result = run_dataset(t, numeric_instances(3), backend)
        assert result.n_unverifiable == 3
        assert result.accuracy == 0.0


class TestFailureHandling:
    def test_backend_failure_marks_trace_incomplete(self):
        calls = {"n": 0}

        def completer(role_prompt, query, inputs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise BackendUnavailable("endpoint down")
            return "42"

        backend = TableBackend(completer=completer)
        t = chain_topology(3)
        inst = numeric_instances(1)[0]
        trace = run_instance(t, inst, backend)
        assert trace.incomplete
        assert trace.verdict is Verdict.UNVERIFIABLE
        assert [s.agent_id for s in trace.steps] == ["a0"]

    def test_dataset_survives_partial_failures(self):
        def completer(role_prompt, query, inputs):
            if query.endswith("1."):
                raise BackendUnavailable("down")
            return "0"

        backend = TableBackend(completer=completer)
        t = chain_topology(1)
        result = run_dataset(t, numeric_instances(3), backend)
        assert result.n_total == 3
        assert sum(1 for tr in result.traces if tr.incomplete) == 1

    def test_empty_dataset(self, chain3, mock_backend):
        with pytest.raises(EmptyDataset):
            run_dataset(chain3, [], mock_backend)

    def test_invalid_parallelism(self, chain3, mock_backend):
        with pytest.raises(ValueError):
            run_dataset(chain3, numeric_instances(1), mock_backend, parallelism=0)


class TestDeterminism:
    def test_parallelism_invariance(self, diamond, mock_backend):
        instances = numeric_instances(8)
        seq = run_dataset(diamond, instances, mock_backend, parallelism=1)
        par = run_dataset(diamond, instances, mock_backend, parallelism=8)
        assert seq == par
        assert [t.instance_id for t in par.traces] == [i.id for i in instances]

    def test_repeat_runs_identical(self, diamond, mock_backend):
        instances = numeric_instances(3)
        a = run_dataset(diamond, instances, mock_backend)
        b = run_dataset(diamond, instances, MockBackend())
        assert a == b

    def test_golden_traces_byte_identical(self, mock_backend):
        topology, instances = golden_setup()
        result = run_dataset(topology, instances, mock_backend)
        produced = traces_to_jsonl(result.traces)
        assert produced.encode("utf-8") == GOLDEN_PATH.read_bytes()
