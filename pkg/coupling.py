"""
Graphical construction: shared Poisson marks and pathwise realizations.

Marks are infection arrows on directed edges (rate lambda), recovery dots on
vertices (rate 1) and isolation crosses on vertices (rate alpha). A
realization processes every mark in (time, stream id, index) order, where
stream ids are dots v -> v, crosses v -> n + v, and arrows -> 2n + position
of the directed edge in the lexicographic edge order (u->v before v->u).
"""

import json
import logging
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dynamics import HEALTHY, INFECTED, ISOLATED, Event, Trajectory, Variant, derive_seed
from errors import InvalidParameterError, MalformedMarksError
from netgen import Graph

logger = logging.getLogger(__name__)

_DOT, _CROSS, _ARROW = 0, 1, 2


@dataclass(frozen=True)
class MarkSet:
    """Immutable Poisson marks on (0, horizon] for one graph"""

    n: int
    edges: Tuple[Tuple[int, int], ...]
    horizon: float
    arrows: Dict[Tuple[int, int], Tuple[float, ...]] = field(default_factory=dict)
    dots: Dict[int, Tuple[float, ...]] = field(default_factory=dict)
    crosses: Dict[int, Tuple[float, ...]] = field(default_factory=dict)
    seed: Optional[int] = None
    lam: Optional[float] = None
    alpha: Optional[float] = None

    __hash__ = None

    def graph(self) -> Graph:
        return Graph.from_edges(self.n, self.edges)

    def count(self) -> int:
        return sum(len(ts) for streams in (self.arrows, self.dots, self.crosses) for ts in streams.values())

    def truncated(self, t: float) -> 'MarkSet':
        """Marks with time <= t, on horizon t"""
        def cut(streams):
            return {key: tuple(x for x in ts if x <= t) for key, ts in streams.items()}
        return replace(self, horizon=t, arrows=cut(self.arrows), dots=cut(self.dots), crosses=cut(self.crosses))

    def validate(self, g: Optional[Graph] = None):
        if not self.horizon > 0:
            raise MalformedMarksError(f"horizon must be positive, got {self.horizon}")
        if g is not None and g.n != self.n:
            raise MalformedMarksError(f"marks are for n={self.n}, graph has n={g.n}")
        for kind, streams in (('arrow', self.arrows), ('dot', self.dots), ('cross', self.crosses)):
            for key, ts in streams.items():
                if any(not (0.0 < x <= self.horizon) for x in ts):
                    raise MalformedMarksError(f"{kind} stream {key} leaves (0, {self.horizon}]")
                if any(ts[i] >= ts[i + 1] for i in range(len(ts) - 1)):
                    raise MalformedMarksError(f"{kind} stream {key} is not strictly increasing")
        for v in list(self.dots) + list(self.crosses):
            if not 0 <= v < self.n:
                raise MalformedMarksError(f"vertex {v} out of range")
        if g is not None:
            for u, v in self.arrows:
                if not g.has_edge(u, v):
                    raise MalformedMarksError(f"arrow stream {u}->{v} is not on an edge")


@dataclass(frozen=True)
class RealizationRules:
    variant: Variant

    def __post_init__(self):
        variant = Variant(self.variant)
        if variant is Variant.VIGILANCE:
            raise InvalidParameterError("the vigilance variant has no graphical construction")
        object.__setattr__(self, 'variant', variant)

    def cross_applies(self, state: int) -> bool:
        if self.variant is Variant.ISOLATION:
            return state == INFECTED
        if self.variant is Variant.COMPARISON:
            return state != ISOLATED
        return False


class ContainmentViolation(NamedTuple):
    time: float
    vertex: int


def _poisson_times(rng: np.random.Generator, rate: float, horizon: float) -> Tuple[float, ...]:
    if rate <= 0.0:
        return ()
    mean = rate * horizon
    chunk = int(mean + 4.0 * math.sqrt(mean) + 8)
    times = np.cumsum(rng.exponential(1.0 / rate, chunk))
    while times[-1] <= horizon:
        times = np.concatenate([times, times[-1] + np.cumsum(rng.exponential(1.0 / rate, chunk))])
    return tuple(times[times <= horizon].tolist())


def generate_marks(g: Graph, lam: float, alpha: float, horizon: float, seed: Optional[int] = None) -> MarkSet:
    """Sample every stream by successive exponential gaps: dots, then crosses, then arrows"""
    if not horizon > 0:
        raise InvalidParameterError(f"horizon must be positive, got {horizon}")
    if lam < 0 or alpha < 0:
        raise InvalidParameterError("lambda and alpha must be non-negative")
    rng = np.random.default_rng(seed)
    dots = {v: _poisson_times(rng, 1.0, horizon) for v in range(g.n)}
    crosses = {v: _poisson_times(rng, alpha, horizon) for v in range(g.n)}
    arrows = {}
    edges = tuple(g.edges())
    for u, v in edges:
        arrows[(u, v)] = _poisson_times(rng, lam, horizon)
        arrows[(v, u)] = _poisson_times(rng, lam, horizon)
    return MarkSet(g.n, edges, float(horizon), arrows, dots, crosses, seed, float(lam), float(alpha))


def _schedule(g: Graph, marks: MarkSet) -> List[tuple]:
    n = g.n
    merged = []
    for v in range(n):
        merged.extend((t, v, i, _DOT, v, v) for i, t in enumerate(marks.dots.get(v, ())))
        merged.extend((t, n + v, i, _CROSS, v, v) for i, t in enumerate(marks.crosses.get(v, ())))
    position = 0
    for u, v in g.edges():
        for a, b in ((u, v), (v, u)):
            merged.extend((t, 2 * n + position, i, _ARROW, a, b) for i, t in enumerate(marks.arrows.get((a, b), ())))
            position += 1
    merged.sort(key=lambda mark: mark[:3])
    return merged


def realize(g: Graph, marks: MarkSet, rules: RealizationRules, init: Sequence[int]) -> Trajectory:
    """Deterministic trajectory of `rules.variant` driven by `marks` from `init`"""
    if len(init) != g.n or any(s not in (HEALTHY, INFECTED, ISOLATED) for s in init):
        raise InvalidParameterError("init must be a {0, 1, -1} vector of length n")
    marks.validate(g)
    states = [int(s) for s in init]
    events = []
    for t, _, _, kind, a, b in _schedule(g, marks):
        if kind == _ARROW:
            # arrows into isolated vertices have no effect
            if states[a] == INFECTED and states[b] == HEALTHY:
                states[b] = INFECTED
                events.append(Event(t, b, HEALTHY, INFECTED))
        elif kind == _DOT:
            if states[a] != HEALTHY:
                events.append(Event(t, a, states[a], HEALTHY))
                states[a] = HEALTHY
        elif rules.cross_applies(states[a]):
            events.append(Event(t, a, states[a], ISOLATED))
            states[a] = ISOLATED
    params = {'variant': rules.variant.value, 'lambda': marks.lam, 'alpha': marks.alpha, 'marks_seed': marks.seed}
    return Trajectory.from_events(init, events, marks.horizon, seed=marks.seed, params=params)


def first_containment_violation(smaller: Trajectory, larger: Trajectory) -> Optional[ContainmentViolation]:
    """
    First (time, vertex) at which a vertex infected in `smaller` is not
    infected in `larger`, checked after all events sharing a time.
    """
    small = [s == INFECTED for s in smaller.initial]
    large = [s == INFECTED for s in larger.initial]
    for v in range(len(small)):
        if small[v] and not large[v]:
            return ContainmentViolation(0.0, v)
    a, b = smaller.require_events(), larger.require_events()
    i = j = 0
    while i < len(a) or j < len(b):
        t = min(a[i].time if i < len(a) else math.inf, b[j].time if j < len(b) else math.inf)
        changed = set()
        while i < len(a) and a[i].time == t:
            small[a[i].vertex] = a[i].after == INFECTED
            changed.add(a[i].vertex)
            i += 1
        while j < len(b) and b[j].time == t:
            large[b[j].vertex] = b[j].after == INFECTED
            changed.add(b[j].vertex)
            j += 1
        for v in sorted(changed):
            if small[v] and not large[v]:
                return ContainmentViolation(t, v)
    return None


def check_domination(g: Graph, marks: MarkSet, init: Sequence[int], mutate: bool = False) -> Optional[ContainmentViolation]:
    """
    Comparison-infected must stay inside isolation-infected on shared marks.

    With mutate=True the roles are swapped, which a working check must flag
    on marks that exhibit non-attractiveness.
    """
    comparison = realize(g, marks, RealizationRules(Variant.COMPARISON), init)
    isolation = realize(g, marks, RealizationRules(Variant.ISOLATION), init)
    if mutate:
        return first_containment_violation(isolation, comparison)
    return first_containment_violation(comparison, isolation)


@dataclass
class AttractivenessViolation:
    trial: int
    time: float
    vertex: int
    smaller_init: Tuple[int, ...]
    larger_init: Tuple[int, ...]
    marks_seed: Optional[int]

    def to_dict(self) -> dict:
        return {
            'trial': self.trial, 'time': self.time, 'vertex': self.vertex,
            'A': list(self.smaller_init), 'B': list(self.larger_init), 'marks_seed': self.marks_seed,
        }


def _indicator(n: int, members: Sequence[int]) -> List[int]:
    init = [HEALTHY] * n
    for v in members:
        init[v] = INFECTED
    return init


def _nested_pair(rng: np.random.Generator, n: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    size_b = int(rng.integers(2, n + 1))
    larger = np.sort(rng.choice(n, size=size_b, replace=False))
    size_a = int(rng.integers(1, size_b))
    smaller = np.sort(rng.choice(larger, size=size_a, replace=False))
    return tuple(smaller.tolist()), tuple(larger.tolist())


def search_attractiveness_violation(g: Graph, lam: float, alpha: float, horizon: float, trials: int,
                                    seed: int, variant: Variant = Variant.ISOLATION,
                                    forced: Optional[Tuple[MarkSet, Sequence[int], Sequence[int]]] = None,
                                    ) -> Optional[AttractivenessViolation]:
    """
    Look for marks and nested infected sets A < B where the A-run has an
    infected vertex the B-run lacks. `forced` = (marks, A, B) is tried as
    trial 0 before any sampling.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be at least 1, got {trials}")
    rules = RealizationRules(variant)
    if forced is not None:
        marks, smaller, larger = forced
        found = first_containment_violation(realize(g, marks, rules, _indicator(g.n, smaller)),
                                            realize(g, marks, rules, _indicator(g.n, larger)))
        if found:
            return AttractivenessViolation(0, found.time, found.vertex, tuple(smaller), tuple(larger), marks.seed)
    if g.n < 2:
        return None
    start = 1 if forced is not None else 0
    for trial in range(start, trials):
        trial_seed = derive_seed(seed, trial)
        marks = generate_marks(g, lam, alpha, horizon, trial_seed)
        smaller, larger = _nested_pair(np.random.default_rng([trial_seed, 1]), g.n)
        found = first_containment_violation(realize(g, marks, rules, _indicator(g.n, smaller)),
                                            realize(g, marks, rules, _indicator(g.n, larger)))
        if found:
            logger.info("attractiveness violation at trial %d, t=%.4g, vertex %d", trial, found.time, found.vertex)
            return AttractivenessViolation(trial, found.time, found.vertex, smaller, larger, trial_seed)
    return None


def domination_suite(graphs: Dict[str, Graph], lam: float, alpha: float, horizon: float, realizations: int,
                     seed: int, mutate: bool = False) -> List[dict]:
    """Coupled comparison/isolation realizations per graph; the first uses the all-infected start"""
    results = []
    for g_index, (name, g) in enumerate(graphs.items()):
        violations = 0
        first = None
        for r in range(realizations):
            trial_seed = derive_seed(seed, g_index * realizations + r)
            marks = generate_marks(g, lam, alpha, horizon, trial_seed)
            if r == 0:
                init = [INFECTED] * g.n
            else:
                init = np.random.default_rng([trial_seed, 1]).integers(0, 2, size=g.n).tolist()
            found = check_domination(g, marks, init, mutate=mutate)
            if found:
                violations += 1
                if first is None:
                    first = {'realization': r, 'time': found.time, 'vertex': found.vertex, 'marks_seed': trial_seed}
        logger.info("domination on %s: %d/%d realizations violated", name, violations, realizations)
        results.append({'graph': name, 'n': g.n, 'realizations': realizations,
                        'violations': violations, 'first_violation': first})
    return results


def dump_marks(marks: MarkSet, path, extra: Optional[dict] = None) -> pathlib.Path:
    """Write marks as JSON with times as decimal strings"""
    def encode(ts):
        return [repr(float(x)) for x in ts]
    payload = {
        'n': marks.n,
        'edges': [list(e) for e in marks.edges],
        'horizon': repr(float(marks.horizon)),
        'arrows': {f"{u}->{v}": encode(ts) for (u, v), ts in sorted(marks.arrows.items())},
        'dots': {str(v): encode(ts) for v, ts in sorted(marks.dots.items())},
        'crosses': {str(v): encode(ts) for v, ts in sorted(marks.crosses.items())},
        'lambda': marks.lam,
        'alpha': marks.alpha,
        'seed': marks.seed,
    }
    if extra:
        payload.update(extra)
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def load_marks(path) -> MarkSet:
    try:
        payload = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
        arrows = {}
        for key, ts in payload.get('arrows', {}).items():
            u, v = key.split('->')
            arrows[(int(u), int(v))] = tuple(float(x) for x in ts)
        dots = {int(v): tuple(float(x) for x in ts) for v, ts in payload.get('dots', {}).items()}
        crosses = {int(v): tuple(float(x) for x in ts) for v, ts in payload.get('crosses', {}).items()}
        marks = MarkSet(int(payload['n']), tuple(tuple(int(x) for x in e) for e in payload['edges']),
                        float(payload['horizon']), arrows, dots, crosses, payload.get('seed'),
                        payload.get('lambda'), payload.get('alpha'))
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedMarksError(f"cannot parse mark file {path}: {exc}") from exc
    marks.validate(marks.graph())
    return marks


def load_fixture_sets(path) -> Dict[str, List[int]]:
    """Named initial infected sets stored alongside fixture marks"""
    payload = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
    return {name: [int(v) for v in members] for name, members in payload.get('initial_sets', {}).items()}
