"""
Trajectory observables and analytic reference quantities.

Phase segmentation of a center vertex, lit hub stars, the drift process
V_t = |A_t| - eta |I_t|, renewal cycles of |I_t| between three levels,
the gambler's ruin formula and finite-size scaling fits of extinction times.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from dynamics import INFECTED, Trajectory
from errors import InsufficientDataError, InvalidParameterError, LevelCollisionError
from netgen import StarOfStars

logger = logging.getLogger(__name__)

DEFAULT_ETA = 0.01
DEFAULT_DELTA = 0.1
DEFAULT_EPS = 0.1


class PhaseKind(IntEnum):
    ONE = 1
    ZERO = 0
    MINUS_ONE = -1


@dataclass(frozen=True)
class PhaseRecord:
    index: int
    start: float
    end: float
    kind: PhaseKind
    long: bool
    complete: bool = True

    @property
    def length(self) -> float:
        return self.end - self.start


def extract_phases(traj: Trajectory, center: int, alpha: float) -> List[PhaseRecord]:
    """
    Maximal intervals of constant center state covering [0, end_time].

    A one phase is long when it lasts more than 1 / (1 + alpha). The last
    phase is marked incomplete when the run ends before the center moves.
    """
    events = traj.require_events()
    end = traj.end_time
    threshold = 1.0 / (1.0 + alpha)
    phases: List[PhaseRecord] = []

    def close(start, stop, state, complete):
        if stop > start:
            kind = PhaseKind(state)
            phases.append(PhaseRecord(len(phases), start, stop, kind,
                                      kind is PhaseKind.ONE and stop - start > threshold, complete))

    state = traj.initial[center]
    start = 0.0
    for event in events:
        if event.time > end:
            break
        if event.vertex != center:
            continue
        close(start, event.time, state, True)
        start, state = event.time, event.after
    close(start, end, state, False)
    return phases


def _lit_threshold(sos: StarOfStars, delta: float) -> float:
    return delta * sos.order


def _count_lit(states: Sequence[int], sos: StarOfStars, threshold: float) -> int:
    lit = 0
    for hub, leaves in zip(sos.hubs, sos.leaves):
        if states[hub] == INFECTED and sum(1 for leaf in leaves if states[leaf] == INFECTED) >= threshold:
            lit += 1
    return lit


def lit_counts_at(traj: Trajectory, sos: StarOfStars, delta: float, times: Sequence[float]) -> List[int]:
    """Number of lit hub stars at each query time, from a single replay"""
    events = traj.require_events()
    threshold = _lit_threshold(sos, delta)
    order = sorted(range(len(times)), key=lambda k: times[k])
    counts = [0] * len(times)
    states = list(traj.initial)
    i = 0
    for k in order:
        while i < len(events) and events[i].time <= times[k]:
            states[events[i].vertex] = events[i].after
            i += 1
        counts[k] = _count_lit(states, sos, threshold)
    return counts


def lit_count_at(traj: Trajectory, sos: StarOfStars, delta: float, t: float) -> int:
    return lit_counts_at(traj, sos, delta, [t])[0]


@dataclass
class HubSeries:
    hub: int
    times: List[float] = field(default_factory=list)
    hub_state: List[int] = field(default_factory=list)
    infected_leaves: List[int] = field(default_factory=list)
    lit: List[bool] = field(default_factory=list)


@dataclass
class HubStarStats:
    delta: float
    order: int
    hubs: List[HubSeries]

    def hub_extinction_times(self) -> List[Optional[float]]:
        """First time each hub star has no infected leaf, None if never"""
        out = []
        for series in self.hubs:
            out.append(next((t for t, k in zip(series.times, series.infected_leaves) if k == 0), None))
        return out


def hub_star_stats(traj: Trajectory, sos: StarOfStars, delta: float) -> HubStarStats:
    """Change points of hub state, infected-leaf count and lit flag, per hub"""
    events = traj.require_events()
    threshold = _lit_threshold(sos, delta)
    owner = {}
    for i, (hub, leaves) in enumerate(zip(sos.hubs, sos.leaves)):
        owner[hub] = i
        for leaf in leaves:
            owner[leaf] = i
    states = list(traj.initial)
    counts = [sum(1 for leaf in leaves if states[leaf] == INFECTED) for leaves in sos.leaves]
    hubs = [HubSeries(hub) for hub in sos.hubs]

    def record(i, t):
        series = hubs[i]
        state = states[series.hub]
        series.times.append(t)
        series.hub_state.append(state)
        series.infected_leaves.append(counts[i])
        series.lit.append(state == INFECTED and counts[i] >= threshold)

    for i in range(len(hubs)):
        record(i, 0.0)
    for event in events:
        i = owner.get(event.vertex)
        states[event.vertex] = event.after
        if i is None:
            continue
        if event.vertex != sos.hubs[i]:
            counts[i] += (event.after == INFECTED) - (event.before == INFECTED)
        record(i, event.time)
    return HubStarStats(delta, sos.order, hubs)


def hub_survival_horizon(alpha: float, m: int, gamma: float) -> float:
    """Time scale (2 + 2/alpha) m^gamma over which a hub star stays infected"""
    if alpha <= 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    return (2.0 + 2.0 / alpha) * float(m) ** gamma


def center_reinfection_q(alpha: float, lam: float) -> float:
    """Lower bound on the chance the center is reinfected within one short window"""
    if alpha < 0 or lam < 0:
        raise InvalidParameterError("alpha and lambda must be non-negative")
    return math.exp(-3.0 * alpha) * math.exp(-8.0 / 3.0) * (1.0 - math.exp(-1.0 / 3.0)) * math.exp(-2.0 * lam / 3.0)


@dataclass
class DriftSeries:
    eta: float
    times: np.ndarray
    values: np.ndarray

    @property
    def jumps(self) -> np.ndarray:
        """U_k: the value after the k-th jump, U_0 the initial value"""
        return self.values

    def value_at(self, t: float) -> float:
        i = bisect.bisect_right(self.times.tolist(), t) - 1
        return float(self.values[max(i, 0)])


def drift_series(traj: Trajectory, eta: float = DEFAULT_ETA) -> DriftSeries:
    infected = np.asarray(traj.infected, dtype=float)
    isolated = np.asarray(traj.isolated, dtype=float)
    return DriftSeries(eta, np.asarray(traj.times, dtype=float), isolated - eta * infected)


class JumpChain(NamedTuple):
    healthy: np.ndarray
    infected: np.ndarray
    isolated: np.ndarray


def jump_chain(traj: Trajectory) -> JumpChain:
    """Class sizes of the embedded chain, one entry per jump"""
    infected = np.asarray(traj.infected, dtype=np.int64)
    isolated = np.asarray(traj.isolated, dtype=np.int64)
    return JumpChain(traj.n - infected - isolated, infected, isolated)


@dataclass(frozen=True)
class RenewalOutcome:
    cycle: int
    start_level: int
    start_time: float
    hit_level: int
    hit_time: float
    success: bool


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def renewal_levels(eps: float, n: int) -> tuple:
    low, mid, high = (_round_half_up(eps * n * k / 3.0) for k in (1, 2, 3))
    if not low < mid < high:
        raise LevelCollisionError(f"levels {low}, {mid}, {high} are not distinct for eps={eps}, n={n}")
    return low, mid, high


def renewal_cycles_from_series(times: Sequence[float], infected: Sequence[int], eps: float, n: int) -> List[RenewalOutcome]:
    """
    Excursions of |I| that start on reaching the middle level and end on
    reaching the top (success) or the bottom (failure) level.
    """
    low, mid, high = renewal_levels(eps, n)
    outcomes: List[RenewalOutcome] = []
    start_time = None
    prev = None
    for t, count in zip(times, infected):
        if start_time is None:
            reached = count == mid or (prev is not None and (prev - mid) * (count - mid) < 0)
            if reached:
                start_time = t
        if start_time is not None and (count <= low or count >= high):
            hit = high if count >= high else low
            outcomes.append(RenewalOutcome(len(outcomes), mid, start_time, hit, t, hit == high))
            start_time = None
        prev = count
    return outcomes


def renewal_cycles(traj: Trajectory, eps: float = DEFAULT_EPS, n: Optional[int] = None) -> List[RenewalOutcome]:
    return renewal_cycles_from_series(traj.times, traj.infected, eps, traj.n if n is None else n)


def gambler_ruin_prob(p_up: float, down_gap: int, up_gap: int) -> float:
    """Chance a +-1 walk with up-probability p_up falls down_gap before it rises up_gap"""
    if not 0.0 < p_up < 1.0:
        raise InvalidParameterError(f"p_up must lie in (0, 1), got {p_up}")
    if down_gap < 0 or up_gap < 0:
        raise InvalidParameterError("gaps must be non-negative")
    if down_gap == 0:
        return 1.0
    if up_gap == 0:
        return 0.0
    total = down_gap + up_gap
    if p_up == 0.5:
        return up_gap / total
    r = (1.0 - p_up) / p_up
    if r < 1.0:
        return (r ** down_gap - r ** total) / (1.0 - r ** total)
    s = 1.0 / r
    return (1.0 - s ** up_gap) / (1.0 - s ** total)


class Classification(str, Enum):
    LINEAR = 'linear-ish'
    EXPONENTIAL = 'exponential-ish'
    INDETERMINATE = 'indeterminate'


@dataclass(frozen=True)
class SizeSamples:
    """Extinction times at one size; censored entries hold the cap"""

    n: int
    times: tuple
    censored: tuple


@dataclass
class ScalingFit:
    classification: Classification
    sizes: List[int]
    medians: List[float]
    censored_fractions: List[float]
    linear_coef: float
    linear_rss: float
    exp_rate: float
    exp_intercept: float
    exp_rss: float
    censoring_forced: bool

    def to_dict(self) -> dict:
        return {
            'classification': self.classification.value,
            'sizes': self.sizes,
            'medians': self.medians,
            'censored_fractions': self.censored_fractions,
            'linear': {'coef': self.linear_coef, 'rss_log': self.linear_rss},
            'exponential': {'rate': self.exp_rate, 'intercept': self.exp_intercept, 'rss_log': self.exp_rss},
            'censoring_forced': self.censoring_forced,
        }


RESIDUAL_RATIO = 2.0
RSS_TOL = 1e-12


def fit_scaling(table: Sequence[SizeSamples], min_samples: int = 20) -> ScalingFit:
    """
    Compare tau ~ a n against log tau ~ a n + b on median extinction times.

    Both fits are least squares in log tau. A model wins when its residual
    is at most half the other's; a censored majority at the largest size
    forces exponential-ish.
    """
    table = sorted(table, key=lambda row: row.n)
    if len({row.n for row in table}) < 3:
        raise InsufficientDataError("need at least 3 distinct sizes")
    for row in table:
        if len(row.times) < min_samples:
            raise InsufficientDataError(f"size {row.n} has {len(row.times)} samples, need {min_samples}")
    sizes = np.array([row.n for row in table], dtype=float)
    medians = np.array([float(np.median(row.times)) for row in table])
    censored = [float(np.mean(np.asarray(row.censored, dtype=bool))) for row in table]
    if np.any(medians <= 0):
        raise InsufficientDataError("median extinction time is not positive")

    log_tau = np.log(medians)
    log_coef = float(np.mean(log_tau - np.log(sizes)))
    linear_rss = float(np.sum((log_tau - log_coef - np.log(sizes)) ** 2))
    rate, intercept = np.polyfit(sizes, log_tau, 1)
    exp_rss = float(np.sum((log_tau - (rate * sizes + intercept)) ** 2))

    forced = censored[-1] >= 0.5
    if forced:
        label = Classification.EXPONENTIAL
    elif RESIDUAL_RATIO * linear_rss + RSS_TOL <= exp_rss:
        label = Classification.LINEAR
    elif RESIDUAL_RATIO * exp_rss + RSS_TOL <= linear_rss:
        label = Classification.EXPONENTIAL
    else:
        label = Classification.INDETERMINATE
    logger.debug("scaling fit: linear rss %.3g, exponential rss %.3g -> %s", linear_rss, exp_rss, label.value)
    return ScalingFit(label, [int(x) for x in sizes], medians.tolist(), censored, math.exp(log_coef), linear_rss,
                      float(rate), float(intercept), exp_rss, forced)


SWEEP_COLUMNS = ('lambda', 'n', 'tau', 'censored')


def scaling_table(rows: pd.DataFrame) -> pd.DataFrame:
    """Median tau, censored fraction and replicate count per (lambda, n)"""
    missing = [c for c in SWEEP_COLUMNS if c not in rows.columns]
    if missing:
        raise InsufficientDataError(f"sweep rows lack columns {missing}")
    grouped = rows.groupby(['lambda', 'n'], sort=True)
    table = grouped.agg(median_tau=('tau', 'median'), censored_frac=('censored', 'mean'),
                        replicates=('tau', 'size')).reset_index()
    return table


def fit_by_lambda(rows: pd.DataFrame, min_samples: int = 20) -> Dict[float, ScalingFit]:
    fits = {}
    for lam, group in rows.groupby('lambda', sort=True):
        samples = [SizeSamples(int(n), tuple(sub['tau'].astype(float)), tuple(sub['censored'].astype(bool)))
                   for n, sub in group.groupby('n', sort=True)]
        fits[float(lam)] = fit_scaling(samples, min_samples=min_samples)
    return fits
