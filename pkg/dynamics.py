"""
Exact continuous-time simulation of the contact process and its variants.

Gillespie direct method: one exponential clock at the total rate, the firing
vertex drawn from a sum-tree over per-vertex rates, the transition drawn from
that vertex's own rates. Four variants share one state vector with values
healthy (0), infected (1) and isolated (-1):

    classical   0->1 at lambda * #infected nbrs, 1->0 at 1
    isolation   adds 1->-1 at alpha and -1->0 at 1
    vigilance   1->-1 at alpha * #healthy nbrs, -1->0 at 1
    comparison  0->-1 and 1->-1 at alpha, -1->0 at 1
"""

import bisect
import json
import logging
import math
import pathlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import AbsorbedError, InconsistentStateError, InvalidParameterError, TrajectoryUnavailableError
from netgen import Graph

logger = logging.getLogger(__name__)

HEALTHY, INFECTED, ISOLATED = 0, 1, -1
VERTEX_STATES = (HEALTHY, INFECTED, ISOLATED)
LOG_MODES = ('full', 'thinned')


class Variant(str, Enum):
    CLASSICAL = 'classical'
    ISOLATION = 'isolation'
    VIGILANCE = 'vigilance'
    COMPARISON = 'comparison'


@dataclass(frozen=True)
class ModelParams:
    variant: Variant
    lam: float
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'variant', Variant(self.variant))
        for name in ('lam', 'alpha'):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidParameterError(f"{name} must be finite and non-negative, got {value}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> dict:
        return {'variant': self.variant.value, 'lambda': self.lam, 'alpha': self.alpha}


class RateTable(NamedTuple):
    infection: float
    recovery: float
    isolation: float
    release: float

    @property
    def total(self) -> float:
        return self.infection + self.recovery + self.isolation + self.release


class Transition(NamedTuple):
    vertex: int
    before: int
    after: int


class Event(NamedTuple):
    time: float
    vertex: int
    before: int
    after: int

    def to_json(self) -> str:
        return json.dumps({'t': self.time, 'v': self.vertex, 'from': self.before, 'to': self.after})


class SumTree:
    """Binary tree of partial sums; leaf i holds the rate of vertex i"""

    def __init__(self, values: Sequence[float]):
        size = max(1, len(values))
        cap = 1
        while cap < size:
            cap <<= 1
        self._cap = cap
        self._size = len(values)
        tree = [0.0] * (2 * cap)
        tree[cap:cap + len(values)] = [float(x) for x in values]
        for pos in range(cap - 1, 0, -1):
            tree[pos] = tree[2 * pos] + tree[2 * pos + 1]
        self._tree = tree

    def __len__(self):
        return self._size

    def total(self) -> float:
        return self._tree[1]

    def get(self, i: int) -> float:
        return self._tree[self._cap + i]

    def leaves(self) -> List[float]:
        return self._tree[self._cap:self._cap + self._size]

    def update(self, i: int, value: float):
        tree = self._tree
        pos = self._cap + i
        tree[pos] = value
        pos >>= 1
        while pos:
            tree[pos] = tree[2 * pos] + tree[2 * pos + 1]
            pos >>= 1

    def find(self, u: float) -> int:
        """Leaf index whose cumulative interval contains u, for 0 <= u < total"""
        tree = self._tree
        cap = self._cap
        pos = 1
        while pos < cap:
            left = tree[2 * pos]
            # rounding can push u past a right subtree; never descend into an empty one
            if u < left or tree[2 * pos + 1] <= 0.0:
                pos = 2 * pos
            else:
                u -= left
                pos = 2 * pos + 1
        return pos - cap


class UniformStream:
    """Block-buffered uniforms from a numpy Generator, drawn in a fixed order"""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._buffer: List[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buffer):
            self._buffer = self._rng.random(self._block).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return u


class SystemState:
    """Mutable per-replicate state with cached neighbour counts and a rate index"""

    def __init__(self, graph: Graph, states: Sequence[int], params: ModelParams):
        if len(states) != graph.n:
            raise InvalidParameterError(f"state vector has length {len(states)}, graph has {graph.n} vertices")
        if any(s not in VERTEX_STATES for s in states):
            raise InvalidParameterError("states must take values in {0, 1, -1}")
        self.graph = graph
        self.params = params
        self.states = [int(s) for s in states]
        self._lam = params.lam
        self._alpha = params.alpha
        variant = params.variant
        self._vigilant = variant is Variant.VIGILANCE
        self._healthy_isolation = params.alpha if variant is Variant.COMPARISON else 0.0
        self._infected_isolation = params.alpha if variant in (Variant.ISOLATION, Variant.COMPARISON) else 0.0
        self._release = 0.0 if variant is Variant.CLASSICAL else 1.0

        self.inf_nbrs, self.healthy_nbrs = _neighbour_counts(graph, self.states)
        self.n_healthy = self.states.count(HEALTHY)
        self.n_infected = self.states.count(INFECTED)
        self.n_isolated = self.states.count(ISOLATED)
        self.rate_index = SumTree([self.vertex_rate(v) for v in range(graph.n)])

    @property
    def counts(self) -> Tuple[int, int, int]:
        return self.n_healthy, self.n_infected, self.n_isolated

    def vertex_rate(self, v: int) -> float:
        s = self.states[v]
        if s == HEALTHY:
            return self._lam * self.inf_nbrs[v] + self._healthy_isolation
        if s == INFECTED:
            if self._vigilant:
                return 1.0 + self._alpha * self.healthy_nbrs[v]
            return 1.0 + self._infected_isolation
        return self._release

    def choose_target(self, v: int, u: float) -> int:
        """Target state of the transition at v, for u uniform on [0, 1)"""
        s = self.states[v]
        if s == HEALTHY:
            infection = self._lam * self.inf_nbrs[v]
            if u * (infection + self._healthy_isolation) < infection:
                return INFECTED
            return ISOLATED
        if s == INFECTED:
            if u * self.vertex_rate(v) < 1.0:
                return HEALTHY
            return ISOLATED
        return HEALTHY

    def apply(self, v: int, new: int):
        old = self.states[v]
        if old == new:
            return
        self.states[v] = new
        self._shift_count(old, -1)
        self._shift_count(new, 1)

        d_inf = (new == INFECTED) - (old == INFECTED)
        d_healthy = (new == HEALTHY) - (old == HEALTHY)
        states, inf_nbrs, healthy_nbrs = self.states, self.inf_nbrs, self.healthy_nbrs
        tree = self.rate_index
        for w in self.graph.adjacency[v]:
            inf_nbrs[w] += d_inf
            healthy_nbrs[w] += d_healthy
            sw = states[w]
            if (sw == HEALTHY and d_inf) or (sw == INFECTED and d_healthy and self._vigilant):
                tree.update(w, self.vertex_rate(w))
        tree.update(v, self.vertex_rate(v))

    def _shift_count(self, state: int, delta: int):
        if state == HEALTHY:
            self.n_healthy += delta
        elif state == INFECTED:
            self.n_infected += delta
        else:
            self.n_isolated += delta


def _neighbour_counts(graph: Graph, states: Sequence[int]) -> Tuple[List[int], List[int]]:
    inf_nbrs = [0] * graph.n
    healthy_nbrs = [0] * graph.n
    for v, nb in enumerate(graph.adjacency):
        inf_nbrs[v] = sum(1 for w in nb if states[w] == INFECTED)
        healthy_nbrs[v] = sum(1 for w in nb if states[w] == HEALTHY)
    return inf_nbrs, healthy_nbrs


def total_rates(g: Graph, st: SystemState, p: ModelParams, audit: bool = False) -> RateTable:
    """Aggregate rate of each event class in state `st` under parameters `p`"""
    if audit and not audit_state(g, st):
        raise InconsistentStateError("cached counts disagree with a full recount")
    states = st.states
    si_edges = sum(st.inf_nbrs[v] for v in range(g.n) if states[v] == HEALTHY)
    n_healthy, n_infected, n_isolated = st.counts
    infection = p.lam * si_edges
    recovery = float(n_infected)
    if p.variant is Variant.ISOLATION:
        isolation = p.alpha * n_infected
    elif p.variant is Variant.VIGILANCE:
        isolation = p.alpha * si_edges
    elif p.variant is Variant.COMPARISON:
        isolation = p.alpha * (n_healthy + n_infected)
    else:
        isolation = 0.0
    release = 0.0 if p.variant is Variant.CLASSICAL else float(n_isolated)
    return RateTable(infection, recovery, isolation, release)


def up_move_fraction(rates: RateTable) -> float:
    """Share of |I|-changing rate that increases |I|"""
    moving = rates.infection + rates.recovery + rates.isolation
    return rates.infection / moving if moving > 0 else 0.0


def audit_state(g: Graph, st: SystemState, rel_tol: float = 1e-9) -> bool:
    """Full recount of neighbour counts, class counts and rate totals"""
    states = st.states
    if len(states) != g.n or any(s not in VERTEX_STATES for s in states):
        return False
    inf_nbrs, healthy_nbrs = _neighbour_counts(g, states)
    if inf_nbrs != st.inf_nbrs or healthy_nbrs != st.healthy_nbrs:
        return False
    if st.counts != (states.count(HEALTHY), states.count(INFECTED), states.count(ISOLATED)):
        return False
    if any(abs(st.rate_index.get(v) - st.vertex_rate(v)) > rel_tol * max(1.0, st.vertex_rate(v))
           for v in range(g.n)):
        return False
    analytic = total_rates(g, st, st.params).total
    indexed = st.rate_index.total()
    return abs(indexed - analytic) <= rel_tol * max(1.0, abs(analytic))


def _next_uniform(rng):
    return rng.next() if isinstance(rng, UniformStream) else float(rng.random())


def _draw_dt(st: SystemState, rng) -> float:
    total = st.rate_index.total()
    if total <= 0.0:
        raise AbsorbedError("total rate is zero")
    return -math.log1p(-_next_uniform(rng)) / total


def _fire(st: SystemState, rng) -> Transition:
    v = st.rate_index.find(_next_uniform(rng) * st.rate_index.total())
    before = st.states[v]
    after = st.choose_target(v, _next_uniform(rng))
    st.apply(v, after)
    return Transition(v, before, after)


def step(g: Graph, st: SystemState, p: ModelParams, rng) -> Tuple[Transition, float]:
    """
    Draw the waiting time and the next transition, and apply it to `st`.

    `st` must have been built with `p`. `rng` is a numpy Generator or a
    UniformStream wrapping one.
    """
    dt = _draw_dt(st, rng)
    return _fire(st, rng), dt


@dataclass
class Trajectory:
    """Event log and piecewise-constant (|I|, |A|) series of one run"""

    n: int
    initial: Tuple[int, ...]
    times: List[float]
    infected: List[int]
    isolated: List[int]
    events: Optional[List[Event]]
    t_cap: float
    extinction_time: Optional[float]
    absorption_time: Optional[float] = None
    seed: Optional[int] = None
    params: Optional[dict] = field(default=None)

    @property
    def censored(self) -> bool:
        return self.extinction_time is None

    @property
    def thinned(self) -> bool:
        return self.events is None

    @property
    def end_time(self) -> float:
        return self.t_cap if self.extinction_time is None else min(self.extinction_time, self.t_cap)

    @classmethod
    def from_events(cls, initial: Sequence[int], events: Sequence[Event], t_cap: float,
                    seed: Optional[int] = None, params: Optional[dict] = None) -> 'Trajectory':
        """Rebuild series and extinction time by replaying `events` from `initial`"""
        states = [int(s) for s in initial]
        n_inf, n_iso = states.count(INFECTED), states.count(ISOLATED)
        times, infected, isolated = [0.0], [n_inf], [n_iso]
        extinction = 0.0 if n_inf == 0 else None
        absorption = 0.0 if n_inf == 0 and n_iso == 0 else None
        kept = []
        for event in events:
            event = Event(*event)
            states[event.vertex] = event.after
            n_inf += (event.after == INFECTED) - (event.before == INFECTED)
            n_iso += (event.after == ISOLATED) - (event.before == ISOLATED)
            times.append(event.time)
            infected.append(n_inf)
            isolated.append(n_iso)
            kept.append(event)
            if extinction is None and n_inf == 0:
                extinction = event.time
            if absorption is None and n_inf == 0 and n_iso == 0:
                absorption = event.time
        return cls(len(states), tuple(int(s) for s in initial), times, infected, isolated, kept,
                   t_cap, extinction, absorption, seed, params)

    def require_events(self) -> List[Event]:
        if self.events is None:
            raise TrajectoryUnavailableError("thinned trajectory has no per-vertex events")
        return self.events

    def states_at(self, t: float) -> List[int]:
        """Vertex states after every event with time <= t"""
        states = list(self.initial)
        for event in self.require_events():
            if event.time > t:
                break
            states[event.vertex] = event.after
        return states

    def final_states(self) -> List[int]:
        return self.states_at(math.inf)

    def series_at(self, t: float) -> Tuple[int, int]:
        i = bisect.bisect_right(self.times, t) - 1
        return self.infected[max(i, 0)], self.isolated[max(i, 0)]

    def summary(self) -> dict:
        return {
            'n': self.n,
            'params': self.params,
            'seed': self.seed,
            't_cap': self.t_cap,
            'extinction_time': self.extinction_time,
            'absorption_time': self.absorption_time,
            'censored': self.censored,
            'jumps': len(self.times) - 1,
        }

    def series_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t': self.times, 'I': self.infected, 'A': self.isolated})

    def write_jsonl(self, path, provenance: Optional[dict] = None) -> pathlib.Path:
        """One event per line, then a summary record carrying `provenance` keys"""
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8', newline='\n') as handle:
            for event in self.require_events():
                handle.write(event.to_json() + '\n')
            handle.write(json.dumps({'summary': self.summary(), **(provenance or {})}, sort_keys=True) + '\n')
        return path

    def write_series_csv(self, path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.series_frame().to_csv(path, index=False, lineterminator='\n')
        return path

    def write(self, stem, provenance: Optional[dict] = None) -> List[pathlib.Path]:
        """
        Full logs go to `<stem>.jsonl`.
        Thinned logs go to `<stem>.summary.json` plus the step CSV `<stem>.csv`.
        """
        stem = pathlib.Path(stem)
        if self.events is not None:
            return [self.write_jsonl(stem.with_name(stem.name + '.jsonl'), provenance)]
        summary_path = stem.with_name(stem.name + '.summary.json')
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        payload = {**self.summary(), **(provenance or {})}
        summary_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + '\n', encoding='utf-8')
        return [summary_path, self.write_series_csv(stem.with_name(stem.name + '.csv'))]


def run(g: Graph, init: Sequence[int], p: ModelParams, t_cap: float, seed: Optional[int] = None,
        log_mode: str = 'full', until: str = 'extinction') -> Trajectory:
    """
    Simulate from `init` until no vertex is infected or time reaches t_cap.

    With until='absorption' the run continues past extinction until no vertex
    is infected or isolated; the comparison variant never absorbs.
    """
    if t_cap <= 0:
        raise InvalidParameterError(f"t_cap must be positive, got {t_cap}")
    if log_mode not in LOG_MODES:
        raise InvalidParameterError(f"log_mode must be one of {LOG_MODES}, got {log_mode!r}")
    if until not in ('extinction', 'absorption'):
        raise InvalidParameterError(f"until must be 'extinction' or 'absorption', got {until!r}")
    if until == 'absorption' and p.variant is Variant.COMPARISON:
        raise InvalidParameterError("the comparison process never absorbs")

    st = SystemState(g, init, p)
    uniforms = UniformStream(np.random.default_rng(seed))
    full = log_mode == 'full'
    events: Optional[List[Event]] = [] if full else None
    times, infected, isolated = [0.0], [st.n_infected], [st.n_isolated]
    extinction = 0.0 if st.n_infected == 0 else None
    absorption = 0.0 if st.n_infected == 0 and st.n_isolated == 0 else None
    target_reached = (lambda: extinction is not None) if until == 'extinction' else (lambda: absorption is not None)

    t = 0.0
    while not target_reached():
        if st.rate_index.total() <= 0.0:
            # frozen: isolated vertices that can never return (classical variant)
            break
        dt = _draw_dt(st, uniforms)
        if t + dt >= t_cap:
            break
        t += dt
        v, before, after = _fire(st, uniforms)
        if full:
            events.append(Event(t, v, before, after))
        times.append(t)
        infected.append(st.n_infected)
        isolated.append(st.n_isolated)
        if extinction is None and st.n_infected == 0:
            extinction = t
        if st.n_infected == 0 and st.n_isolated == 0:
            absorption = t

    return Trajectory(g.n, tuple(int(s) for s in init), times, infected, isolated, events, float(t_cap),
                      extinction, absorption, seed, p.to_dict())


def derive_seed(master: int, index: int, *keys: int) -> int:
    """Stable 64-bit seed for replicate `index` of master seed `master`; extra keys name sub-streams"""
    entropy = [int(master), int(index), *(int(k) for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


_WORKER_GRAPH: Optional[Graph] = None


def _init_worker(graph: Graph):
    global _WORKER_GRAPH
    _WORKER_GRAPH = graph


def _run_replicate(job) -> Trajectory:
    init, params, t_cap, seed, log_mode, until = job
    return run(_WORKER_GRAPH, init, params, t_cap, seed, log_mode, until)


def run_replicates(g: Graph, init: Sequence[int], p: ModelParams, t_cap: float, master_seed: int,
                   replicates: int, workers: int = 1, log_mode: str = 'thinned',
                   until: str = 'extinction') -> List[Trajectory]:
    """Independent replicates in replicate order; replicate r uses derive_seed(master_seed, r)"""
    jobs = [(tuple(init), p, t_cap, derive_seed(master_seed, r), log_mode, until) for r in range(replicates)]
    logger.info("running %d replicates of %s on n=%d (workers=%d)", replicates, p.variant.value, g.n, workers)
    if workers <= 1 or replicates <= 1:
        return [run(g, *job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(g,)) as executor:
        return list(executor.map(_run_replicate, jobs, chunksize=max(1, replicates // (4 * workers))))


def all_infected(n: int) -> List[int]:
    return [INFECTED] * n
