"""Edge pruning and team selection: importance arithmetic, the greedy
accept-if-not-worse loop, spectral diversity (checked against numpy's
eigensolver), Pareto extraction (checked against a pairwise oracle), and
the scalarized final pick."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from masscope.errors import (
    EmptyFront,
    EmptyPool,
    NoRemovableEdge,
    NotPSD,
    NotSymmetric,
    PoolTooLarge,
    TopologyMismatch,
)
from masscope.executor import run_dataset
from masscope.metrics import MetricRecord, message_influence
from masscope.model import (
    AgentSpec,
    AgentStep,
    ExecutionTrace,
    Message,
    Topology,
    Verdict,
    validate_topology,
)
from masscope.optimize import (
    CandidateTeam,
    PruneConfig,
    PruneDecision,
    edge_importance,
    jacobi_eigenvalues,
    pareto_front,
    prune_topology,
    relevance_score,
    select_team,
    vendi_score,
)

from .conftest import (
    TableBackend,
    basis,
    chain_topology,
    numeric_instances,
    prune_fixture,
    unit,
)


def trace_with_alpha(alpha: float, tid: str = "t") -> tuple[ExecutionTrace, list[MetricRecord]]:
    steps = (
        AgentStep("u", (), "from u"),
        AgentStep("v", (Message("u", "from u"),), "from v"),
    )
    trace = ExecutionTrace(tid, "i", steps, "x", Verdict.UNVERIFIABLE)
    records = [
        MetricRecord(agent_id="u"),
        MetricRecord(agent_id="v", alpha={0: alpha}),
    ]
    return trace, records


class TestEdgeImportance:
    def test_constant_alpha_over_five_traces(self):
        pairs = [trace_with_alpha(0.4) for _ in range(5)]
        importance = edge_importance([t for t, _ in pairs], [r for _, r in pairs])
        assert importance == {("u", "v"): pytest.approx(0.4)}

    def test_mixed_alpha_averages(self):
        pairs = [trace_with_alpha(0.2), trace_with_alpha(0.6)]
        importance = edge_importance([t for t, _ in pairs], [r for _, r in pairs])
        assert importance[("u", "v")] == pytest.approx(0.4)

    def test_unused_edge_scores_zero(self):
        trace, records = trace_with_alpha(0.5)
        importance = edge_importance(
            [trace], [records], edges=[("u", "v"), ("w", "v")]
        )
        assert importance[("w", "v")] == 0.0
        assert importance[("u", "v")] == pytest.approx(0.5)

    def test_mixed_topologies_rejected(self):
        t1, r1 = trace_with_alpha(0.3, tid="one")
        t2, r2 = trace_with_alpha(0.3, tid="two")
        with pytest.raises(TopologyMismatch):
            edge_importance([t1, t2], [r1, r2])

    def test_misaligned_inputs_rejected(self):
        trace, records = trace_with_alpha(0.3)
        with pytest.raises(ValueError):
            edge_importance([trace], [records, records])

    def test_end_to_end_covers_every_edge(self, diamond, mock_backend):
        instances = numeric_instances(3)
        result = run_dataset(diamond, instances, mock_backend)
        alpha_records = [
            message_influence(tr, diamond, inst.query, mock_backend)
            for tr, inst in zip(result.traces, instances)
        ]
        importance = edge_importance(result.traces, alpha_records, diamond.edges)
        assert set(importance) == set(diamond.edges)
        assert all(0.0 < v < 1.0 for v in importance.values())


class TestPrune:
    def test_noise_edge_removed_and_accuracy_kept(self):
        t, instances, backend = prune_fixture()
        decisions: list[PruneDecision] = []
        pruned = prune_topology(
            t, instances, backend, PruneConfig(max_removals=1), decisions.append
        )
        assert pruned.edges == (("x", "c"),)
        assert validate_topology(pruned).ok
        assert decisions[0].edge == ("z", "c")
        assert decisions[0].accepted
        assert decisions[0].acc_after >= decisions[0].acc_before == 1.0

    def test_noise_edge_has_lowest_importance(self):
        t, instances, backend = prune_fixture()
        result = run_dataset(t, instances, backend)
        alpha_records = [
            message_influence(tr, t, inst.query, backend)
            for tr, inst in zip(result.traces, instances)
        ]
        importance = edge_importance(result.traces, alpha_records, t.edges)
        assert importance[("z", "c")] < importance[("x", "c")]

    def test_accuracy_never_decreases(self):
        t, instances, backend = prune_fixture()
        base = run_dataset(t, instances, backend).accuracy
        pruned = prune_topology(t, instances, backend, PruneConfig(max_removals=2))
        assert run_dataset(pruned, instances, backend).accuracy >= base

    def test_harmful_removals_are_rolled_back(self):
        # here the sink answers correctly only when both messages arrive,
        # so every removal is tried, fails, and is restored
        t, instances, backend = prune_fixture()
        sim = math.sqrt(1 - 0.81)

        def completer(role_prompt, query, inputs):
            if role_prompt == "useful-role":
                return "ans 1"
            if role_prompt == "noise-role":
                return "zzz"
            return "got 1" if len(inputs) == 2 else "got 0"

        backend.completer = completer
        backend.embeddings["got 1"] = unit((0.9, sim, 0.0, 0.0))
        backend.embeddings["got 0"] = basis(4, 1)
        decisions: list[PruneDecision] = []
        pruned = prune_topology(
            t, instances, backend, PruneConfig(max_removals=2), decisions.append
        )
        assert pruned.edges == t.edges
        assert [d.accepted for d in decisions] == [False, False]
        assert {d.edge for d in decisions} == set(t.edges)
        assert all(d.acc_after < d.acc_before for d in decisions)

    def test_chain_with_edge_floor_has_no_candidates(self, mock_backend):
        t = chain_topology(3)
        with pytest.raises(NoRemovableEdge):
            prune_topology(
                t,
                numeric_instances(2),
                mock_backend,
                PruneConfig(max_removals=1, min_edges=2),
            )

    def test_single_edge_is_protected_by_reachability(self, mock_backend):
        agents = (AgentSpec("a", "a", "role a"), AgentSpec("b", "b", "role b"))
        t = Topology("two", "d", agents, (("a", "b"),), "b")
        with pytest.raises(NoRemovableEdge):
            prune_topology(t, numeric_instances(2), mock_backend, PruneConfig())

    def test_zero_removals_is_identity(self, mock_backend):
        t = chain_topology(3)
        assert prune_topology(
            t, numeric_instances(2), mock_backend, PruneConfig(max_removals=0)
        ) is t

    def test_eval_instances_limits_the_slice(self):
        t, instances, backend = prune_fixture()
        seen: set[str] = set()
        inner = backend.completer

        def tracking(role_prompt, query, inputs):
            seen.add(query)
            return inner(role_prompt, query, inputs)

        backend.completer = tracking
        prune_topology(
            t, instances, backend, PruneConfig(max_removals=1, eval_instances=2)
        )
        assert seen == {"prune-query-0", "prune-query-1"}

    def test_empty_trainset_rejected(self, mock_backend):
        with pytest.raises(ValueError):
            prune_topology(chain_topology(2), [], mock_backend, PruneConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PruneConfig(max_removals=-1)
        with pytest.raises(ValueError):
            PruneConfig(tie_break="random")


class TestRelevance:
    def test_role_equal_to_query_is_one(self, mock_backend):
        agent = AgentSpec("a", "A", "exactly the question text")
        assert relevance_score([agent], "exactly the question text", mock_backend) == 1.0

    def test_orthogonal_pair_averages_to_half(self):
        backend = TableBackend(
            embeddings={
                "on topic": basis(3, 0),
                "off topic": basis(3, 1),
                "the query": basis(3, 0),
            }
        )
        team = [AgentSpec("a", "A", "on topic"), AgentSpec("b", "B", "off topic")]
        assert relevance_score(team, "the query", backend) == pytest.approx(0.5)

    def test_three_agents_match_dot_product_oracle(self, mock_backend):
        team = [AgentSpec(f"a{i}", "A", f"specialist number {i}") for i in range(3)]
        got = relevance_score(team, "a question", mock_backend)
        qv = mock_backend.embed("a question")
        sims = [
            sum(x * y for x, y in zip(mock_backend.embed(a.role_prompt).values, qv.values))
            for a in team
        ]
        assert got == pytest.approx(sum(sims) / 3, abs=1e-12)

    def test_empty_team_rejected(self, mock_backend):
        with pytest.raises(ValueError):
            relevance_score([], "q", mock_backend)


class TestJacobi:
    def test_matches_numpy_on_random_symmetric_matrices(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            raw = rng.normal(size=(n, n))
            sym = (raw + raw.T) / 2
            got = jacobi_eigenvalues(sym)
            expect = np.sort(np.linalg.eigvalsh(sym))[::-1]
            assert np.allclose(got, expect, atol=1e-8)

    def test_preserves_trace(self):
        rng = np.random.default_rng(6)
        raw = rng.normal(size=(6, 6))
        sym = (raw + raw.T) / 2
        assert float(jacobi_eigenvalues(sym).sum()) == pytest.approx(
            float(np.trace(sym)), abs=1e-8
        )

    def test_diagonal_matrix(self):
        got = jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0]))
        assert np.allclose(got, [3.0, 2.0, -1.0])

    def test_one_by_one(self):
        assert jacobi_eigenvalues(np.array([[4.2]]))[0] == 4.2


class TestVendi:
    def test_identity_counts_every_item(self):
        assert vendi_score(np.eye(3)) == pytest.approx(3.0, abs=1e-6)

    def test_all_ones_counts_one_item(self):
        assert vendi_score(np.ones((3, 3))) == pytest.approx(1.0, abs=1e-6)

    def test_two_identical_pairs_count_two(self):
        # eigenvalues of K/4 are {1/2, 1/2, 0, 0}: entropy ln 2 by hand
        block = np.ones((2, 2))
        k = np.block([[block, np.zeros((2, 2))], [np.zeros((2, 2)), block]])
        assert vendi_score(k) == pytest.approx(2.0, abs=1e-6)

    def test_singleton(self):
        assert vendi_score(np.ones((1, 1))) == pytest.approx(1.0, abs=1e-12)

    def test_range_and_permutation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            vecs = rng.normal(size=(n, 12))
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            gram = np.clip(vecs @ vecs.T, -1.0, 1.0)
            np.fill_diagonal(gram, 1.0)
            score = vendi_score(gram)
            assert 1.0 - 1e-9 <= score <= n + 1e-9
            perm = rng.permutation(n)
            assert vendi_score(gram[np.ix_(perm, perm)]) == pytest.approx(
                score, abs=1e-9
            )

    def test_scaled_diagonal(self):
        assert vendi_score(2.0 * np.eye(2), diag=2.0) == pytest.approx(2.0, abs=1e-9)

    def test_not_symmetric(self):
        with pytest.raises(NotSymmetric):
            vendi_score(np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_not_psd(self):
        # impossible correlation pattern: two strong positives forcing a
        # positive (A, C) correlation, asserted negative instead
        k = np.array(
            [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]
        )
        assert float(np.linalg.eigvalsh(k).min()) < -1e-8
        with pytest.raises(NotPSD):
            vendi_score(k)

    def test_entry_and_diagonal_validation(self):
        with pytest.raises(ValueError):
            vendi_score(np.array([[1.0, 1.5], [1.5, 1.0]]))
        with pytest.raises(ValueError):
            vendi_score(np.array([[0.9, 0.0], [0.0, 0.9]]))
        with pytest.raises(ValueError):
            vendi_score(np.ones((2, 3)))


def oracle_front(points):
    def dominates(p, q):
        return p[0] >= q[0] and p[1] >= q[1] and (p[0] > q[0] or p[1] > q[1])

    return [
        i
        for i, p in enumerate(points)
        if not any(dominates(q, p) for j, q in enumerate(points) if j != i)
    ]


class TestPareto:
    def test_reference_points(self):
        assert pareto_front([(1, 1), (2, 0), (0, 2), (0.5, 0.5)]) == [0, 1, 2]

    def test_identical_points_all_survive(self):
        assert pareto_front([(1.0, 1.0)] * 4) == [0, 1, 2, 3]

    def test_duplicates_of_front_member_survive(self):
        assert pareto_front([(1, 1), (1, 1), (0, 0)]) == [0, 1]

    def test_same_x_lower_y_is_dominated(self):
        assert pareto_front([(1, 2), (1, 1)]) == [0]

    def test_empty(self):
        assert pareto_front([]) == []

    def test_matches_pairwise_oracle_on_random_points(self):
        rng = random.Random(23)
        for _ in range(50):
            n = rng.randint(1, 50)
            pts = [
                (rng.choice([0.0, 0.5, 1.0, rng.random()]), rng.random())
                for _ in range(n)
            ]
            assert pareto_front(pts) == sorted(oracle_front(pts))


def team_pool_backend():
    pool = [
        AgentSpec("p0", "P0", "role zero"),
        AgentSpec("p1", "P1", "role one"),
        AgentSpec("p2", "P2", "role two"),
    ]
    backend = TableBackend(
        embeddings={
            "role zero": basis(4, 0),
            "role one": basis(4, 1),
            "role two": basis(4, 2),
            "the task": unit((4.0, 3.0, 0.0, 0.0)),
        }
    )
    return pool, backend


class TestSelectTeam:
    def test_orthogonal_pool_picks_relevance_maximal_pair(self):
        pool, backend = team_pool_backend()
        team = select_team(pool, "the task", (2, 2), backend)
        assert team.agent_ids == {"p0", "p1"}
        assert team.relevance == pytest.approx(0.7)
        assert team.diversity == pytest.approx(2.0, abs=1e-6)

    def test_singleton_bounds_pick_best_single_agent(self):
        pool, backend = team_pool_backend()
        team = select_team(pool, "the task", (1, 1), backend)
        assert team.agent_ids == {"p0"}
        assert team.relevance == pytest.approx(0.8)
        assert team.diversity == pytest.approx(1.0, abs=1e-9)

    def test_scalarization_prefers_diverse_pair_over_single(self):
        # front holds {p0} at (0.8, 1.0) and {p0, p1} at (0.7, 2.0); with
        # hi = 2 the pair scores 1.7 against the singleton's 1.3
        pool, backend = team_pool_backend()
        team = select_team(pool, "the task", (1, 2), backend)
        assert team.agent_ids == {"p0", "p1"}

    def test_tie_broken_by_sorted_agent_ids(self):
        pool = [AgentSpec("b", "B", "same role"), AgentSpec("a", "A", "same role")]
        backend = TableBackend(
            embeddings={"same role": basis(2, 0), "q": basis(2, 0)}
        )
        team = select_team(pool, "q", (1, 1), backend)
        assert team.agent_ids == {"a"}

    def test_empty_pool(self, mock_backend):
        with pytest.raises(EmptyPool):
            select_team([], "q", (1, 1), mock_backend)

    def test_lower_bound_beyond_pool(self, mock_backend):
        pool = [AgentSpec("a", "A", "r")]
        with pytest.raises(EmptyFront):
            select_team(pool, "q", (2, 2), mock_backend)

    def test_bad_bounds(self, mock_backend):
        pool = [AgentSpec("a", "A", "r")]
        with pytest.raises(ValueError):
            select_team(pool, "q", (0, 1), mock_backend)
        with pytest.raises(ValueError):
            select_team(pool, "q", (2, 1), mock_backend)

    def test_enumeration_guard(self, mock_backend):
        pool = [AgentSpec(f"a{i}", "A", f"r{i}") for i in range(25)]
        with pytest.raises(PoolTooLarge):
            select_team(pool, "q", (12, 13), mock_backend)

    def test_team_dict_sorts_ids(self):
        team = CandidateTeam(agent_ids=frozenset({"z", "a"}), relevance=0.5, diversity=1.5)
        assert team.to_dict()["agent_ids"] == ["a", "z"]
