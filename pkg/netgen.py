"""
Graph generation for the contact-process experiments.

Power-law degree sequences, the erased configuration model, star-of-stars
substructures and isoperimetric expansion checks. Every graph handed to the
dynamics is a simple undirected `Graph` with sorted adjacency tuples.
"""

import bisect
import functools
import itertools
import json
import logging
import math
import pathlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from errors import GraphError, InvalidParameterError, OddDegreeSumError, WindowEmptyError

logger = logging.getLogger(__name__)

# 2**24 subsets is the most the exact expansion check will enumerate
EXACT_EXPANSION_MAX_N = 24


@dataclass(frozen=True)
class DegreeSequence:
    degrees: Tuple[int, ...]
    gamma: float
    d_min: int
    d_max: int
    seed: Optional[int] = None
    parity_fixed_vertex: Optional[int] = None

    def __len__(self):
        return len(self.degrees)

    @property
    def total(self) -> int:
        return int(sum(self.degrees))

    def metadata(self) -> dict:
        return {
            'seed': self.seed,
            'gamma': self.gamma,
            'd_min': self.d_min,
            'd_max': self.d_max,
            'parity_fixed_vertex': self.parity_fixed_vertex,
        }


@dataclass(frozen=True)
class Graph:
    """Immutable simple undirected graph on vertices 0..n-1"""

    n: int
    adjacency: Tuple[Tuple[int, ...], ...]
    edge_count: int
    requested_degrees: Optional[Tuple[int, ...]] = None
    metadata: Dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]], requested_degrees=None, metadata=None) -> 'Graph':
        """Build a graph, dropping self-loops and duplicate edges"""
        neighbours: List[set] = [set() for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                continue
            neighbours[u].add(v)
            neighbours[v].add(u)
        adjacency = tuple(tuple(sorted(nb)) for nb in neighbours)
        edge_count = sum(len(nb) for nb in adjacency) // 2
        if requested_degrees is not None:
            requested_degrees = tuple(int(d) for d in requested_degrees)
        return cls(n, adjacency, edge_count, requested_degrees, dict(metadata or {}))

    @classmethod
    def from_networkx(cls, nx_graph) -> 'Graph':
        nx_graph = nx.convert_node_labels_to_integers(nx_graph, ordering='sorted')
        return cls.from_edges(nx_graph.number_of_nodes(), nx_graph.edges())

    def to_networkx(self):
        nx_graph = nx.Graph()
        nx_graph.add_nodes_from(range(self.n))
        nx_graph.add_edges_from(self.edges())
        return nx_graph

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def degrees(self) -> np.ndarray:
        return np.fromiter((len(nb) for nb in self.adjacency), dtype=np.int64, count=self.n)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.adjacency[u]
        i = bisect.bisect_left(nb, v)
        return i < len(nb) and nb[i] == v

    def edges(self) -> Iterator[Tuple[int, int]]:
        """Edges as (u, v) with u < v in lexicographic order"""
        for u, nb in enumerate(self.adjacency):
            for v in nb:
                if u < v:
                    yield u, v

    @property
    def deficits(self) -> Optional[Tuple[int, ...]]:
        """Requested minus realized degree per vertex, when requested degrees are known"""
        if self.requested_degrees is None:
            return None
        return tuple(d - len(nb) for d, nb in zip(self.requested_degrees, self.adjacency))

    def check_simple(self):
        """Full scan of symmetry and simplicity; raises GraphError"""
        if len(self.adjacency) != self.n:
            raise GraphError(f"adjacency has {len(self.adjacency)} rows, expected {self.n}")
        half_edges = 0
        for v, nb in enumerate(self.adjacency):
            if any(nb[i] >= nb[i + 1] for i in range(len(nb) - 1)):
                raise GraphError(f"neighbours of {v} are not strictly sorted")
            for w in nb:
                if w == v:
                    raise GraphError(f"self-loop at {v}")
                if not self.has_edge(w, v):
                    raise GraphError(f"edge {v}->{w} has no reverse")
            half_edges += len(nb)
        if half_edges != 2 * self.edge_count:
            raise GraphError("edge_count does not match adjacency")

    def adjacency_matrix(self):
        """Sparse CSR adjacency matrix with unit weights"""
        rows = np.repeat(np.arange(self.n), [len(nb) for nb in self.adjacency])
        cols = np.fromiter(itertools.chain.from_iterable(self.adjacency), dtype=np.int64, count=len(rows))
        data = np.ones(len(rows), dtype=np.int32)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))


@dataclass(frozen=True)
class StarOfStars:
    center: int
    hubs: Tuple[int, ...]
    leaves: Tuple[Tuple[int, ...], ...]

    @property
    def order(self) -> int:
        return len(self.hubs)

    def vertices(self) -> List[int]:
        ids = [self.center, *self.hubs]
        for group in self.leaves:
            ids.extend(group)
        return ids

    def to_dict(self) -> dict:
        return {'center': self.center, 'hubs': list(self.hubs), 'leaves': [list(g) for g in self.leaves]}


@dataclass(frozen=True)
class ExpansionReport:
    eps_lo: float
    eps_hi: float
    delta_observed: float
    mode: str
    witness: Tuple[int, ...]
    sizes: Tuple[int, ...] = ()


def sample_power_law_degrees(n: int, gamma: float, d_min: int = 3, d_max: Optional[int] = None,
                             seed: Optional[int] = None) -> DegreeSequence:
    """
    Draw n i.i.d. degrees from P(D=k) proportional to k^-gamma on [d_min, d_max].

    Inverse-CDF over the truncated support. An odd total is repaired by adding
    one half-edge to a uniformly chosen vertex still below d_max.
    """
    if gamma <= 2:
        raise InvalidParameterError(f"gamma must exceed 2, got {gamma}")
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    if d_max is None:
        d_max = max(d_min, n - 1)
    if d_min < 1 or d_min > d_max:
        raise InvalidParameterError(f"need 1 <= d_min <= d_max, got d_min={d_min}, d_max={d_max}")

    pmf = power_law_pmf(gamma, d_min, d_max)
    cdf = np.cumsum(pmf)
    rng = np.random.default_rng(seed)
    idx = np.searchsorted(cdf, rng.random(n), side='right')
    degrees = d_min + np.minimum(idx, len(pmf) - 1)

    fixed = None
    if int(degrees.sum()) % 2 == 1:
        step = 1
        candidates = np.flatnonzero(degrees < d_max)
        if len(candidates) == 0:
            # everyone sits at d_max: lower one vertex instead
            step = -1
            candidates = np.flatnonzero(degrees > d_min)
        if len(candidates) == 0:
            raise InvalidParameterError(
                f"odd degree sum with d_min = d_max = {d_max} and n = {n}; parity cannot be repaired")
        fixed = int(candidates[rng.integers(len(candidates))])
        degrees[fixed] += step
        logger.debug("parity fix: vertex %d moved to degree %d", fixed, degrees[fixed])

    return DegreeSequence(tuple(int(d) for d in degrees), float(gamma), int(d_min), int(d_max), seed, fixed)


def power_law_pmf(gamma: float, d_min: int, d_max: int) -> np.ndarray:
    """Truncated power-law pmf over k = d_min..d_max"""
    support = np.arange(d_min, d_max + 1, dtype=np.float64)
    weights = support ** (-float(gamma))
    return weights / weights.sum()


def build_configuration_model(deg, seed: Optional[int] = None) -> Graph:
    """
    Erased configuration model: uniform perfect matching of half-edges.

    Self-loops are erased and parallel edges collapsed; the requested degrees
    are kept on the graph so per-vertex deficits can be reported.
    """
    degrees = np.asarray(deg.degrees if isinstance(deg, DegreeSequence) else deg, dtype=np.int64)
    if np.any(degrees < 0):
        raise InvalidParameterError("degrees must be non-negative")
    if int(degrees.sum()) % 2 == 1:
        raise OddDegreeSumError(f"degree sum {int(degrees.sum())} is odd")

    n = len(degrees)
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n), degrees)
    rng.shuffle(stubs)
    pairs = stubs.reshape(-1, 2)

    # matching audit: before erasure, vertex v is an endpoint of exactly D_v matched pairs
    if 2 * len(pairs) != int(degrees.sum()) or \
            not np.array_equal(np.bincount(pairs.ravel(), minlength=n), degrees):
        raise GraphError("half-edge matching lost or duplicated a stub")

    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs.sort(axis=1)
    if len(pairs):
        pairs = np.unique(pairs, axis=0)

    metadata = deg.metadata() if isinstance(deg, DegreeSequence) else {}
    metadata['matching_seed'] = seed
    graph = Graph.from_edges(n, pairs.tolist(), requested_degrees=degrees.tolist(), metadata=metadata)
    logger.debug("configuration model: n=%d, edges=%d, erased half-edges=%d",
                 n, graph.edge_count, int(degrees.sum()) - 2 * graph.edge_count)
    return graph


def power_law_graph(n: int, gamma: float, d_min: int = 3, d_max: Optional[int] = None,
                    seed: Optional[int] = None) -> Graph:
    """Degree sequence and matching drawn from two streams of one seed"""
    degree_seed, matching_seed = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    deg = sample_power_law_degrees(n, gamma, d_min, d_max, seed=int(degree_seed))
    graph = build_configuration_model(deg, seed=int(matching_seed))
    graph.metadata['seed'] = seed
    return graph


def random_regular_graph(n: int, d: int, seed: Optional[int] = None) -> Graph:
    if (n * d) % 2 == 1 or not 0 <= d < n:
        raise InvalidParameterError(f"no simple {d}-regular graph on {n} vertices")
    graph = Graph.from_networkx(nx.random_regular_graph(d, n, seed=seed))
    graph.metadata.update({'kind': 'regular', 'degree': d, 'seed': seed})
    return graph


def star_of_stars_graph(m: int) -> Tuple[Graph, StarOfStars]:
    """The depth-2 tree: center 0, hubs 1..m, each hub with m leaves"""
    if m < 1:
        raise InvalidParameterError(f"order must be positive, got {m}")
    hubs = tuple(range(1, m + 1))
    leaves = tuple(tuple(range(1 + m + i * m, 1 + m + (i + 1) * m)) for i in range(m))
    edges = [(0, h) for h in hubs]
    for h, group in zip(hubs, leaves):
        edges.extend((h, leaf) for leaf in group)
    graph = Graph.from_edges(1 + m + m * m, edges, metadata={'kind': 'star_of_stars', 'order': m})
    return graph, StarOfStars(0, hubs, leaves)


def plant_star_of_stars(g: Graph, m: int, seed: Optional[int] = None) -> Tuple[Graph, StarOfStars]:
    """Union g with a star-of-stars of order m on randomly chosen vertices"""
    size = 1 + m + m * m
    if size > g.n:
        raise InvalidParameterError(f"order {m} needs {size} vertices, graph has {g.n}")
    rng = np.random.default_rng(seed)
    chosen = [int(v) for v in rng.choice(g.n, size=size, replace=False)]
    center, hubs = chosen[0], tuple(chosen[1:m + 1])
    leaves = tuple(tuple(chosen[1 + m + i * m:1 + m + (i + 1) * m]) for i in range(m))
    edges = list(g.edges())
    edges.extend((center, h) for h in hubs)
    for h, group in zip(hubs, leaves):
        edges.extend((h, leaf) for leaf in group)
    metadata = dict(g.metadata)
    metadata.update({'planted_order': m, 'planted_seed': seed})
    planted = Graph.from_edges(g.n, edges, metadata=metadata)
    return planted, StarOfStars(center, hubs, leaves)


def find_star_of_stars(g: Graph, m: int) -> Optional[StarOfStars]:
    """
    Greedy degree-ordered search for a star-of-stars of order m.

    Centers are scanned in decreasing degree; for each, hubs are taken in
    decreasing degree order whenever they still own m unclaimed neighbours.
    Leaves prefer vertices outside the center's neighbourhood, then low
    degree, so potential hubs are not consumed. Returning None does not
    certify that no such structure exists.
    """
    if m < 1:
        raise InvalidParameterError(f"order must be positive, got {m}")
    degree = [len(nb) for nb in g.adjacency]
    by_degree = sorted(range(g.n), key=lambda v: (-degree[v], v))

    for center in by_degree:
        if degree[center] < m:
            break
        center_nbrs = set(g.adjacency[center])
        claimed = {center}
        hubs: List[int] = []
        leaves: List[Tuple[int, ...]] = []
        for hub in sorted(g.adjacency[center], key=lambda v: (-degree[v], v)):
            if hub in claimed or degree[hub] < m + 1:
                continue
            options = [w for w in g.adjacency[hub] if w not in claimed and w != hub]
            if len(options) < m:
                continue
            options.sort(key=lambda w: (w in center_nbrs, degree[w], w))
            group = tuple(options[:m])
            claimed.add(hub)
            claimed.update(group)
            hubs.append(hub)
            leaves.append(group)
            if len(hubs) == m:
                found = StarOfStars(center, tuple(hubs), tuple(leaves))
                logger.debug("star-of-stars of order %d found at center %d", m, center)
                return found
    return None


def validate_star_of_stars(g: Graph, s: StarOfStars) -> bool:
    m = len(s.hubs)
    if m < 1 or len(s.leaves) != m or any(len(group) != m for group in s.leaves):
        return False
    ids = s.vertices()
    if any(not 0 <= v < g.n for v in ids):
        return False
    if len(set(ids)) != len(ids):
        return False
    for hub, group in zip(s.hubs, s.leaves):
        if not g.has_edge(s.center, hub):
            return False
        if not all(g.has_edge(hub, leaf) for leaf in group):
            return False
    return True


def external_boundary(g: Graph, B: Iterable[int]) -> int:
    """|{v not in B : v has a neighbour in B}|"""
    members = set(B)
    boundary = set()
    for w in members:
        boundary.update(g.adjacency[w])
    return len(boundary - members)


def _window_sizes(n: int, eps_lo: float, eps_hi: float) -> List[int]:
    if not 0 < eps_lo < eps_hi < 0.5:
        raise InvalidParameterError(f"need 0 < eps_lo < eps_hi < 1/2, got ({eps_lo}, {eps_hi})")
    lo = max(1, math.ceil(eps_lo * n - 1e-9))
    hi = math.floor(eps_hi * n + 1e-9)
    sizes = list(range(lo, hi + 1))
    if not sizes:
        raise WindowEmptyError(f"no subset size in [{eps_lo * n:.3f}, {eps_hi * n:.3f}] for n={n}")
    return sizes


@functools.lru_cache(maxsize=1)
def _popcount_table() -> np.ndarray:
    return np.array([bin(i).count('1') for i in range(1 << 16)], dtype=np.uint8)


def _popcount32(values: np.ndarray) -> np.ndarray:
    table = _popcount_table()
    return table[values & 0xFFFF].astype(np.int64) + table[values >> 16]


def _exact_expansion(g: Graph, sizes: Sequence[int]) -> Tuple[float, Tuple[int, ...]]:
    n = g.n
    # reach[mask] = union of neighbourhoods of the vertices in mask, built by doubling
    reach = np.zeros(1 << n, dtype=np.uint32)
    for v in range(n):
        nb_mask = np.uint32(sum(1 << w for w in g.adjacency[v]))
        half = 1 << v
        reach[half:2 * half] = reach[:half] | nb_mask

    best_ratio, best_mask = math.inf, 0
    chunk = 1 << 20
    size_set = np.array(sorted(sizes), dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.uint32)
        card = _popcount32(masks)
        keep = np.isin(card, size_set)
        if not keep.any():
            continue
        masks, card = masks[keep], card[keep]
        boundary = _popcount32(reach[masks] & ~masks)
        ratios = boundary / card
        i = int(np.argmin(ratios))
        if ratios[i] < best_ratio:
            best_ratio, best_mask = float(ratios[i]), int(masks[i])
    witness = tuple(v for v in range(n) if best_mask >> v & 1)
    return best_ratio, witness


def _swap_change(g: Graph, members: set, inside: Counter, v_in: int, v_out: int) -> int:
    """Change of |boundary| when v_in joins and v_out leaves the subset"""
    change = 0
    for v in set(g.adjacency[v_in]) | set(g.adjacency[v_out]) | {v_in, v_out}:
        before = v not in members and inside[v] > 0
        member_after = v == v_in or (v in members and v != v_out)
        count_after = inside[v] - g.has_edge(v_out, v) + g.has_edge(v_in, v)
        after = not member_after and count_after > 0
        change += int(after) - int(before)
    return change


def _local_descent(g: Graph, subset: Sequence[int], max_steps: int) -> Tuple[int, Tuple[int, ...]]:
    """Swap a boundary vertex in and a member out while the boundary shrinks"""
    members = set(subset)
    inside = Counter()
    for w in members:
        inside.update(g.adjacency[w])
    best = sum(1 for v, c in inside.items() if c > 0 and v not in members)
    for _ in range(max_steps):
        boundary = sorted(v for v, c in inside.items() if c > 0 and v not in members)
        swap = None
        for v_in in boundary:
            for v_out in sorted(members):
                change = _swap_change(g, members, inside, v_in, v_out)
                if change < 0:
                    swap = (v_in, v_out, change)
                    break
            if swap:
                break
        if swap is None:
            break
        v_in, v_out, change = swap
        members.discard(v_out)
        members.add(v_in)
        inside.subtract(g.adjacency[v_out])
        inside.update(g.adjacency[v_in])
        best += change
    return best, tuple(sorted(members))


def _sampled_expansion(g: Graph, sizes: Sequence[int], samples: int, seed: Optional[int],
                       descent_steps: int) -> Tuple[float, Tuple[int, ...]]:
    rng = np.random.default_rng(seed)
    adjacency = g.adjacency_matrix()
    best_ratio, best_witness = math.inf, ()
    batch = max(1, min(samples, 4096))
    for size in sizes:
        size_best, size_witness = math.inf, None
        remaining = samples
        while remaining > 0:
            k = min(batch, remaining)
            remaining -= k
            members = np.argpartition(rng.random((k, g.n)), size - 1, axis=1)[:, :size]
            indicator = np.zeros((k, g.n), dtype=bool)
            np.put_along_axis(indicator, members, True, axis=1)
            reached = (adjacency @ indicator.T.astype(np.int32)).T > 0
            boundary = (reached & ~indicator).sum(axis=1)
            i = int(np.argmin(boundary))
            if boundary[i] / size < size_best:
                size_best = boundary[i] / size
                size_witness = tuple(sorted(int(v) for v in members[i]))
        boundary_size, witness = _local_descent(g, size_witness, descent_steps)
        ratio = boundary_size / size
        if ratio < best_ratio:
            best_ratio, best_witness = ratio, witness
    return float(best_ratio), best_witness


def check_expansion(g: Graph, eps_lo: float, eps_hi: float, mode: str = 'sampled', samples: int = 1000,
                    seed: Optional[int] = None, descent_steps: int = 50) -> ExpansionReport:
    """
    Minimum |boundary(B)| / |B| over eps_lo*n <= |B| <= eps_hi*n.

    'exact' enumerates every subset (n <= 24) and returns the true minimum.
    'sampled' draws `samples` uniform subsets per admissible size, refines the
    best by local swaps, and returns an upper bound on the minimum.
    """
    sizes = _window_sizes(g.n, eps_lo, eps_hi)
    if mode == 'exact':
        if g.n > EXACT_EXPANSION_MAX_N:
            raise InvalidParameterError(f"exact expansion is limited to n <= {EXACT_EXPANSION_MAX_N}, got {g.n}")
        delta, witness = _exact_expansion(g, sizes)
    elif mode == 'sampled':
        if samples < 1:
            raise InvalidParameterError("sampled expansion needs at least one sample per size")
        delta, witness = _sampled_expansion(g, sizes, samples, seed, descent_steps)
    else:
        raise InvalidParameterError(f"unknown expansion mode {mode!r}")
    logger.info("expansion (%s): n=%d, sizes %d..%d, delta=%.4f", mode, g.n, sizes[0], sizes[-1], delta)
    return ExpansionReport(eps_lo, eps_hi, delta, mode, witness, tuple(sizes))


def write_edge_list(g: Graph, path, metadata: Optional[dict] = None) -> pathlib.Path:
    """
    Write `n m` then one `u v` line per edge (u < v, LF endings), plus a
    JSON sidecar next to it with the generation metadata and degree deficits.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{g.n} {g.edge_count}"]
    lines.extend(f"{u} {v}" for u, v in g.edges())
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8', newline='\n')

    sidecar = dict(g.metadata)
    sidecar.update(metadata or {})
    deficits = g.deficits
    sidecar['deficits'] = list(deficits) if deficits is not None else None
    sidecar_path = path.with_suffix('.json')
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + '\n', encoding='utf-8', newline='\n')
    return sidecar_path


def read_edge_list(path) -> Graph:
    path = pathlib.Path(path)
    with path.open(encoding='utf-8') as handle:
        header = handle.readline().split()
        try:
            n, m = (int(x) for x in header)
        except ValueError:
            raise GraphError(f"{path}: header must be 'n m', got {' '.join(header)!r}") from None
        edges = []
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            try:
                u, v = (int(x) for x in line.split())
            except ValueError:
                raise GraphError(f"{path}:{lineno}: expected 'u v', got {line.strip()!r}") from None
            edges.append((u, v))
    if len(edges) != m:
        raise GraphError(f"{path}: header announces {m} edges, found {len(edges)}")
    metadata = {}
    sidecar = path.with_suffix('.json')
    if sidecar.exists():
        try:
            metadata = json.loads(sidecar.read_text(encoding='utf-8'))
        except json.JSONDecodeError as exc:
            raise GraphError(f"{sidecar}: {exc}") from exc
    graph = Graph.from_edges(n, edges, metadata=metadata)
    if graph.edge_count != m:
        raise GraphError(f"{path}: edge list contains loops or duplicates")
    return graph
