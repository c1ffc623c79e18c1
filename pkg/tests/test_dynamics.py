"""
Test suite for dynamics.py

Covers the rate table against naive recomputation, the sum-tree sampler,
single steps, full runs, trajectory bookkeeping and replicate seeding.
"""

import itertools
import json
import math
import os
import sys

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add parent directory to path to import the simulator modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import dynamics
from dynamics import ModelParams, SumTree, SystemState, Variant
from errors import AbsorbedError, InconsistentStateError, InvalidParameterError, TrajectoryUnavailableError
from netgen import Graph

pytestmark = pytest.mark.unit

ALL_VARIANTS = list(Variant)


def small_graphs():
    """Every graph on 1 to 4 vertices, up to isomorphism"""
    return [Graph.from_networkx(g) for g in nx.graph_atlas_g() if 1 <= g.number_of_nodes() <= 4]


def naive_rates(g, states, p):
    si = sum(1 for u, v in g.edges() if {states[u], states[v]} == {0, 1})
    healthy, infected, isolated = states.count(0), states.count(1), states.count(-1)
    isolation = {
        Variant.CLASSICAL: 0.0,
        Variant.ISOLATION: p.alpha * infected,
        Variant.VIGILANCE: p.alpha * si,
        Variant.COMPARISON: p.alpha * (healthy + infected),
    }[p.variant]
    release = 0.0 if p.variant is Variant.CLASSICAL else float(isolated)
    return dynamics.RateTable(p.lam * si, float(infected), isolation, release)


@pytest.fixture
def edge():
    return Graph.from_edges(2, [(0, 1)])


@pytest.fixture
def lone_vertex():
    return Graph.from_edges(1, [])


class TestModelParams:
    """Test parameter validation"""

    def test_variant_from_string(self):
        assert ModelParams('vigilance', 1.0, 2.0).variant is Variant.VIGILANCE

    @pytest.mark.parametrize("lam,alpha", [(-1.0, 0.0), (1.0, -0.5), (math.inf, 1.0), (1.0, math.nan)])
    def test_bad_rates(self, lam, alpha):
        with pytest.raises(InvalidParameterError):
            ModelParams(Variant.ISOLATION, lam, alpha)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ModelParams('sirs', 1.0, 1.0)


class TestSumTree:
    """Test the partial-sum index"""

    def test_total_and_update(self):
        tree = SumTree([1.0, 2.0, 3.0])
        assert tree.total() == 6.0
        tree.update(1, 0.5)
        assert tree.total() == 4.5
        assert tree.leaves() == [1.0, 0.5, 3.0]

    def test_find_boundaries(self):
        tree = SumTree([1.0, 0.0, 2.0, 1.0, 0.0])
        assert tree.find(0.0) == 0
        assert tree.find(0.999) == 0
        assert tree.find(1.0) == 2
        assert tree.find(2.999) == 2
        assert tree.find(3.5) == 3

    def test_find_never_returns_zero_leaf(self):
        tree = SumTree([0.0, 0.3, 0.0, 0.0])
        for u in np.linspace(0.0, 0.3, 31):
            assert tree.find(float(u)) == 1

    def test_sampling_frequencies(self):
        weights = [1.0, 3.0, 0.0, 6.0]
        tree = SumTree(weights)
        rng = np.random.default_rng(0)
        hits = np.bincount([tree.find(u * tree.total()) for u in rng.random(40_000)], minlength=4)
        assert hits[2] == 0
        np.testing.assert_allclose(hits / hits.sum(), np.array(weights) / 10.0, atol=0.01)


class TestTotalRates:
    """Test aggregate rates per event class"""

    def test_single_edge_isolation(self, edge):
        p = ModelParams(Variant.ISOLATION, 2.0, 3.0)
        rates = dynamics.total_rates(edge, SystemState(edge, [1, 0], p), p)
        assert rates == (2.0, 1.0, 3.0, 0.0)
        assert rates.total == 6.0

    def test_triangle_vigilance(self):
        g = Graph.from_networkx(nx.complete_graph(3))
        p = ModelParams(Variant.VIGILANCE, 1.3, 0.7)
        rates = dynamics.total_rates(g, SystemState(g, [1, 0, -1], p), p)
        assert rates == (1.3, 1.0, 0.7, 1.0)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_all_healthy(self, variant):
        g = Graph.from_networkx(nx.cycle_graph(6))
        p = ModelParams(variant, 2.0, 0.5)
        rates = dynamics.total_rates(g, SystemState(g, [0] * 6, p), p)
        expected_isolation = 0.5 * 6 if variant is Variant.COMPARISON else 0.0
        assert rates == (0.0, 0.0, expected_isolation, 0.0)

    def test_exhaustive_small_graphs(self):
        """Every graph on <= 4 vertices and every state matches a naive recount"""
        checked = 0
        for g in small_graphs():
            for states in itertools.product((0, 1, -1), repeat=g.n):
                states = list(states)
                for variant in ALL_VARIANTS:
                    p = ModelParams(variant, 1.7, 0.6)
                    sys_state = SystemState(g, states, p)
                    assert dynamics.total_rates(g, sys_state, p) == naive_rates(g, states, p)
                    assert dynamics.audit_state(g, sys_state)
                    checked += 1
        assert checked > 4 * 81

    def test_vigilance_up_moves_biased_down(self):
        """With |I| > 0 the vigilance up-move share never exceeds lambda / (lambda + alpha)"""
        for lam, alpha in ((1.0, 2.0), (0.3, 0.1), (5.0, 5.0)):
            bound = lam / (lam + alpha)
            p = ModelParams(Variant.VIGILANCE, lam, alpha)
            for g in small_graphs():
                for states in itertools.product((0, 1, -1), repeat=g.n):
                    if 1 not in states:
                        continue
                    rates = dynamics.total_rates(g, SystemState(g, list(states), p), p)
                    assert dynamics.up_move_fraction(rates) <= bound * (1 + 1e-15)

    def test_audit_flag_raises_on_corruption(self, edge):
        p = ModelParams(Variant.ISOLATION, 1.0, 1.0)
        sys_state = SystemState(edge, [1, 0], p)
        sys_state.inf_nbrs[1] = 0
        with pytest.raises(InconsistentStateError):
            dynamics.total_rates(edge, sys_state, p, audit=True)


class TestAudit:
    """Test the full-recount audit"""

    def test_after_steps(self):
        g = Graph.from_networkx(nx.petersen_graph())
        p = ModelParams(Variant.VIGILANCE, 2.0, 0.5)
        sys_state = SystemState(g, [1] * g.n, p)
        rng = np.random.default_rng(1)
        for _ in range(200):
            if sys_state.rate_index.total() == 0:
                break
            dynamics.step(g, sys_state, p, rng)
            assert dynamics.audit_state(g, sys_state)

    def test_corrupted_count(self):
        g = Graph.from_networkx(nx.path_graph(4))
        p = ModelParams(Variant.CLASSICAL, 1.0)
        sys_state = SystemState(g, [1, 0, 1, 0], p)
        assert dynamics.audit_state(g, sys_state)
        sys_state.inf_nbrs[3] += 1
        assert not dynamics.audit_state(g, sys_state)

    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_random_state_and_moves(self, data):
        """Any installed state and any sequence of applied moves stays consistent"""
        g = Graph.from_networkx(nx.random_regular_graph(3, 8, seed=3))
        variant = data.draw(st.sampled_from(ALL_VARIANTS))
        p = ModelParams(variant, 1.5, 0.5)
        states = data.draw(st.lists(st.sampled_from([0, 1, -1]), min_size=8, max_size=8))
        sys_state = SystemState(g, states, p)
        assert dynamics.audit_state(g, sys_state)
        moves = data.draw(st.lists(st.tuples(st.integers(0, 7), st.sampled_from([0, 1, -1])), max_size=20))
        for v, new in moves:
            sys_state.apply(v, new)
        assert dynamics.audit_state(g, sys_state)


class TestStep:
    """Test single Gillespie steps"""

    def test_isolated_infected_vertex_branching(self, lone_vertex):
        """Recovery w.p. 1/(1+alpha), isolation w.p. alpha/(1+alpha)"""
        p = ModelParams(Variant.ISOLATION, 1.0, 3.0)
        rng = np.random.default_rng(11)
        trials = 40_000
        isolated = 0
        for _ in range(trials):
            transition, _ = dynamics.step(lone_vertex, SystemState(lone_vertex, [1], p), p, rng)
            isolated += transition.after == -1
        assert abs(isolated / trials - 0.75) < 0.01

    def test_classical_single_vertex(self, lone_vertex):
        p = ModelParams(Variant.CLASSICAL, 4.0)
        rng = np.random.default_rng(2)
        waits = []
        for _ in range(20_000):
            transition, dt = dynamics.step(lone_vertex, SystemState(lone_vertex, [1], p), p, rng)
            assert transition == (0, 1, 0)
            waits.append(dt)
        assert abs(np.mean(waits) - 1.0) < 0.03

    def test_k2_both_infected_vigilance(self, edge):
        p = ModelParams(Variant.VIGILANCE, 1.0, 5.0)
        sys_state = SystemState(edge, [1, 1], p)
        assert sys_state.rate_index.total() == 2.0
        transition, _ = dynamics.step(edge, sys_state, p, np.random.default_rng(0))
        assert transition.after == 0

    def test_absorbed(self, edge):
        p = ModelParams(Variant.CLASSICAL, 1.0)
        with pytest.raises(AbsorbedError):
            dynamics.step(edge, SystemState(edge, [0, 0], p), p, np.random.default_rng(0))


class TestRun:
    """Test full runs and their trajectories"""

    def test_all_healthy_start(self, edge):
        traj = dynamics.run(edge, [0, 0], ModelParams(Variant.ISOLATION, 1.0, 1.0), 10.0, seed=1)
        assert traj.extinction_time == 0.0
        assert traj.events == []
        assert not traj.censored

    def test_k2_classical_no_infection(self, edge):
        """Extinction is the maximum of two Exp(1) clocks, mean 3/2"""
        p = ModelParams(Variant.CLASSICAL, 0.0)
        times = [dynamics.run(edge, [1, 1], p, 1e6, seed=s, log_mode='thinned').extinction_time
                 for s in range(20_000)]
        assert abs(np.mean(times) - 1.5) < 0.03

    def test_lone_vertex_isolation_times(self, lone_vertex):
        """Extinction has mean 1/2; absorption adds an Exp(1) half the time, mean 1"""
        p = ModelParams(Variant.ISOLATION, 1.0, 1.0)
        extinction, absorption = [], []
        for s in range(20_000):
            traj = dynamics.run(lone_vertex, [1], p, 1e6, seed=s, log_mode='thinned', until='absorption')
            extinction.append(traj.extinction_time)
            absorption.append(traj.absorption_time)
        assert abs(np.mean(extinction) - 0.5) < 0.02
        assert abs(np.mean(absorption) - 1.0) < 0.03

    def test_comparison_never_absorbs(self, edge):
        with pytest.raises(InvalidParameterError):
            dynamics.run(edge, [1, 1], ModelParams(Variant.COMPARISON, 1.0, 1.0), 5.0, until='absorption')

    @pytest.mark.parametrize("t_cap", [0.0, -1.0])
    def test_bad_cap(self, edge, t_cap):
        with pytest.raises(InvalidParameterError):
            dynamics.run(edge, [1, 1], ModelParams(Variant.CLASSICAL, 1.0), t_cap)

    def test_censoring_extends_prefix(self):
        """A longer cap with the same seed keeps every earlier event"""
        g = Graph.from_networkx(nx.complete_graph(12))
        p = ModelParams(Variant.ISOLATION, 3.0, 0.2)
        short = dynamics.run(g, [1] * 12, p, 2.0, seed=9)
        long = dynamics.run(g, [1] * 12, p, 8.0, seed=9)
        assert short.censored
        assert long.events[:len(short.events)] == short.events
        assert all(e.time < 2.0 for e in short.events)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_trajectory_consistency(self, variant):
        """Strictly increasing times, series matching replay, no events after extinction"""
        g = Graph.from_networkx(nx.cycle_graph(10))
        traj = dynamics.run(g, [1] * 10, ModelParams(variant, 1.2, 0.4), 50.0, seed=4)
        times = [e.time for e in traj.events]
        assert all(a < b for a, b in zip(times, times[1:]))
        final = traj.final_states()
        assert final.count(1) == traj.infected[-1]
        assert final.count(-1) == traj.isolated[-1]
        if not traj.censored:
            assert traj.infected[-1] == 0
            assert traj.events[-1].time == traj.extinction_time

    def test_thinned_mode(self, edge):
        traj = dynamics.run(edge, [1, 1], ModelParams(Variant.ISOLATION, 1.0, 1.0), 10.0, seed=3, log_mode='thinned')
        assert traj.thinned
        assert len(traj.times) == len(traj.infected) == len(traj.isolated)
        with pytest.raises(TrajectoryUnavailableError):
            traj.states_at(1.0)

    def test_from_events_replay(self):
        events = [dynamics.Event(0.5, 0, 1, -1), dynamics.Event(1.0, 1, 1, 0), dynamics.Event(2.0, 0, -1, 0)]
        traj = dynamics.Trajectory.from_events([1, 1], events, t_cap=5.0)
        assert traj.infected == [2, 1, 0, 0]
        assert traj.isolated == [0, 1, 1, 0]
        assert traj.extinction_time == 1.0
        assert traj.absorption_time == 2.0
        assert traj.states_at(0.75) == [-1, 1]
        assert traj.series_at(1.5) == (0, 1)


class TestTrajectoryFiles:
    """Test trajectory export formats"""

    def test_full_log_jsonl(self, tmp_path, edge):
        traj = dynamics.run(edge, [1, 1], ModelParams(Variant.ISOLATION, 1.0, 1.0), 10.0, seed=5)
        paths = traj.write(tmp_path / 'run')
        lines = paths[0].read_text().splitlines()
        assert len(lines) == len(traj.events) + 1
        first = json.loads(lines[0])
        assert set(first) == {'t', 'v', 'from', 'to'}
        assert json.loads(lines[-1])['summary']['seed'] == 5

    def test_thinned_summary_and_csv(self, tmp_path, edge):
        traj = dynamics.run(edge, [1, 1], ModelParams(Variant.ISOLATION, 1.0, 1.0), 10.0, seed=5,
                            log_mode='thinned')
        summary_path, csv_path = traj.write(tmp_path / 'run')
        assert json.loads(summary_path.read_text())['censored'] == traj.censored
        rows = csv_path.read_text().splitlines()
        assert rows[0] == 't,I,A'
        assert len(rows) == len(traj.times) + 1


class TestReplicates:
    """Test seed derivation and replicate scheduling"""

    def test_derive_seed_is_stable(self):
        assert dynamics.derive_seed(7, 3) == dynamics.derive_seed(7, 3)
        assert dynamics.derive_seed(7, 3) != dynamics.derive_seed(7, 4)
        assert dynamics.derive_seed(7, 3) != dynamics.derive_seed(7, 3, 1)
        assert 0 <= dynamics.derive_seed(2 ** 64 - 1, 0) < 2 ** 64

    def test_serial_and_pooled_agree(self):
        g = Graph.from_networkx(nx.cycle_graph(20))
        p = ModelParams(Variant.VIGILANCE, 1.0, 2.0)
        serial = dynamics.run_replicates(g, [1] * 20, p, 1000.0, master_seed=13, replicates=6, workers=1)
        pooled = dynamics.run_replicates(g, [1] * 20, p, 1000.0, master_seed=13, replicates=6, workers=2)
        assert [t.extinction_time for t in serial] == [t.extinction_time for t in pooled]
        assert [t.seed for t in serial] == [dynamics.derive_seed(13, r) for r in range(6)]


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
