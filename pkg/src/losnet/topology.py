"""Sight-line communication graph construction, edge scoring, and the
spanning-tree topology optimizer.

Each candidate edge gets a score saying how unlikely its maintenance
constraints are to be violated under the nominal controls: w_d for the range
constraint, w_los averaged over all obstacle boundary points for the
occlusion constraint, and w_dlos as their sum. Edges whose ellipsoid test
already fails get a large negative sentinel instead, and same-subgroup edges
are amplified so the tree connects every subgroup internally before bridging
between subgroups. The maintained topology is then the maximum-weight
spanning tree, computed by Kruskal over union-find with a lexicographic
tie-break so runs are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from .barriers import BarrierParams
from .errors import ConnectivityLossError, WeightOrderingError
from .geometry import (
    LosEllipsoid,
    ObstacleField,
    mvee_closed_form_batch,
    segments_occluded,
)


@dataclasses.dataclass
class LosEdge:
    """One candidate communication edge (i < j) with its sight-line ellipsoid
    and, after weighing, its scores. `w_prime` is the effective weight the
    tree optimizer sorts on."""

    i: int
    j: int
    ellipsoid: LosEllipsoid | None
    w_d: float | None = None
    w_los: float | None = None
    w_dlos: float | None = None
    w_prime: float | None = None
    occluded_ellipsoid: bool = False

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.j)


@dataclasses.dataclass
class WeightedLosGraph:
    n_robots: int
    subgroups: np.ndarray
    edges: list[LosEdge]
    epsilon: float | None = None
    lam: float | None = None

    def edge_map(self) -> dict[tuple[int, int], LosEdge]:
        return {e.pair: e for e in self.edges}

    def ellipsoids(self) -> dict[tuple[int, int], LosEllipsoid]:
        return {e.pair: e.ellipsoid for e in self.edges if e.ellipsoid is not None}


@dataclasses.dataclass(frozen=True)
class SpanningTree:
    """N-1 edges spanning all robots; total_weight is the sum of effective
    edge weights w_prime."""

    edges: tuple[tuple[int, int], ...]
    total_weight: float

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def build_los_graph(states, field: ObstacleField, params: BarrierParams) -> WeightedLosGraph:
    """Candidate graph: edge (i, j) present iff the robots are within
    communication range and the exact segment between them is occlusion-free.
    Each edge carries its closed-form sight-line ellipsoid. Weights are unset.
    """
    x = np.asarray(states, dtype=np.float64)
    n = x.shape[0]
    small, large = np.triu_indices(n, 1)
    if small.size:
        diff = x[large] - x[small]
        dist = np.linalg.norm(diff, axis=1)
        in_range = dist <= params.r_comm
        small, large = small[in_range], large[in_range]
    edges: list[LosEdge] = []
    if small.size:
        occluded = segments_occluded(x[small], x[large], field)
        small, large = small[~occluded], large[~occluded]
        ells = mvee_closed_form_batch(x[small], x[large], params.delta)
        edges = [
            LosEdge(i=int(i), j=int(j), ellipsoid=ell)
            for i, j, ell in zip(small, large, ells)
        ]
    return WeightedLosGraph(n_robots=n, subgroups=np.zeros(n, dtype=np.int64), edges=edges)


def weigh_edges(
    graph: WeightedLosGraph,
    states,
    nominal_controls,
    field: ObstacleField,
    params: BarrierParams,
    subgroups=None,
    lam: float | None = None,
    epsilon: float | None = None,
) -> WeightedLosGraph:
    """Score every edge of the graph under the nominal controls.

    w_d    = dh_conn/dt + gamma * h_conn
    w_los  = mean over boundary points of (dh_los/dt + gamma * h_los)
    w_dlos = w_d + w_los, or the epsilon sentinel if any point sits inside
             the edge ellipsoid (occluded by the conservative test)
    w_prime = lam * w_dlos on same-subgroup edges, w_dlos otherwise

    With explicit `lam`/`epsilon` the scaling is applied verbatim. By default
    both are calibrated from the realized weights: non-sentinel weights are
    shifted to a common positive range before the subgroup amplification, so
    same-subgroup edges always outrank cross-subgroup edges in the tree
    regardless of the sign or scale of the raw scores, and sentinel edges
    always rank last. With no boundary points w_los is zero.
    """
    x = np.asarray(states, dtype=np.float64)
    u_hat = np.asarray(nominal_controls, dtype=np.float64)
    if subgroups is None:
        subgroups = graph.subgroups
    subgroups = np.asarray(subgroups, dtype=np.int64)
    pts = field.points
    gamma = params.gamma
    n_edges = len(graph.edges)

    if n_edges:
        ii = np.array([e.i for e in graph.edges], dtype=np.int64)
        jj = np.array([e.j for e in graph.edges], dtype=np.int64)
        diff = x[ii] - x[jj]
        w_d_vals = (
            -2.0 * np.einsum("ed,ed->e", diff, u_hat[ii] - u_hat[jj])
            + gamma * (params.r_comm**2 - np.einsum("ed,ed->e", diff, diff))
        )
    else:
        w_d_vals = np.zeros(0)

    if n_edges and pts.shape[0] and all(e.ellipsoid is not None for e in graph.edges):
        # The per-point average reduces to the static point moments (sum of
        # points and of their outer products), because h and its derivative
        # are quadratic/linear in the point coordinates; only the occlusion
        # flag needs individual points, and a point can only sit inside an
        # edge ellipsoid if it lies inside the edge's bounding circle.
        f_count = pts.shape[0]
        p1 = pts.sum(axis=0)
        m2 = pts.T @ pts
        s2_total = float(np.trace(m2))
        centers = 0.5 * (x[ii] + x[jj])
        axis = x[jj] - x[ii]
        length = np.linalg.norm(axis, axis=1)
        axis = axis / length[:, None]
        a2 = np.array([e.ellipsoid.major_axis_half_length for e in graph.edges]) ** 2
        d2 = np.array([e.ellipsoid.thickness for e in graph.edges]) ** 2
        usum = u_hat[ii] + u_hat[jj]
        coef = 1.0 / a2 - 1.0 / d2
        c_dot_u = np.einsum("ed,ed->e", centers, axis)
        p1_dot_u = axis @ p1
        u_m2_u = np.einsum("ei,ij,ej->e", axis, m2, axis)
        sum_r2 = s2_total - 2.0 * (centers @ p1) + f_count * np.einsum("ed,ed->e", centers, centers)
        sum_s2 = u_m2_u - 2.0 * p1_dot_u * c_dot_u + f_count * c_dot_u**2
        sum_h = sum_s2 / a2 + (sum_r2 - sum_s2) / d2 - f_count
        sum_s = p1_dot_u - f_count * c_dot_u
        sum_hdot = -(
            ((p1[None, :] - f_count * centers) * usum).sum(axis=1) / d2
            + coef * sum_s * np.einsum("ed,ed->e", axis, usum)
        )
        w_los_vals = (sum_hdot + gamma * sum_h) / f_count
        # Occlusion flags from the sparse candidate pairs only.
        r2 = (
            np.einsum("fd,fd->f", pts, pts)[:, None]
            - 2.0 * (pts @ centers.T)
            + np.einsum("ed,ed->e", centers, centers)[None, :]
        )
        occluded_flags = np.zeros(n_edges, dtype=bool)
        fidx, eidx = np.nonzero(r2 < a2[None, :])
        if fidx.size:
            rel = pts[fidx] - centers[eidx]
            s_c = np.einsum("kd,kd->k", rel, axis[eidx])
            r2_c = r2[fidx, eidx]
            h_c = s_c**2 / a2[eidx] + (r2_c - s_c**2) / d2[eidx] - 1.0
            np.logical_or.at(occluded_flags, eidx, h_c < 0.0)
    else:
        w_los_vals = np.zeros(n_edges)
        occluded_flags = np.zeros(n_edges, dtype=bool)

    raw = w_d_vals + w_los_vals
    same = (
        subgroups[ii] == subgroups[jj] if n_edges else np.zeros(0, dtype=bool)
    )
    lam_eff, eps_eff, sort_weights = _calibrate_weights(
        raw, occluded_flags, same, lam, epsilon
    )

    new_edges = []
    for k, e in enumerate(graph.edges):
        new_edges.append(
            dataclasses.replace(
                e,
                w_d=float(w_d_vals[k]),
                w_los=float(w_los_vals[k]),
                w_dlos=eps_eff if occluded_flags[k] else float(raw[k]),
                w_prime=float(sort_weights[k]),
                occluded_ellipsoid=bool(occluded_flags[k]),
            )
        )
    return WeightedLosGraph(
        n_robots=graph.n_robots,
        subgroups=subgroups,
        edges=new_edges,
        epsilon=eps_eff,
        lam=lam_eff,
    )


def _calibrate_weights(raw, occluded, same, lam, epsilon):
    """Produce effective sort weights realizing the four-band ordering

        same-subgroup clear > cross-subgroup clear > cross sentinel > same sentinel

    and verify it holds on the realized values. Explicit lam/epsilon are used
    verbatim (the verbatim product lam * w_dlos); automatic calibration first
    shifts the clear weights into a positive range, which preserves the
    argmax over spanning trees band by band because every spanning tree uses
    the same number of edges of each band at the optimum.
    """
    clear = raw[~occluded] if raw.size else raw
    max_abs = float(np.max(np.abs(clear))) if clear.size else 0.0
    eps_eff = float(epsilon) if epsilon is not None else -1e6 * (1.0 + max_abs)

    if lam is not None:
        lam_eff = float(lam)
        base = np.where(occluded, eps_eff, raw)
        sort_w = np.where(same, lam_eff * base, base)
    else:
        if clear.size:
            lo = float(np.min(clear))
            hi = float(np.max(clear))
            shift = 1.0 + (hi - lo) - lo  # maps clear weights into [1 + span, 1 + 2*span]
            shifted_hi = hi + shift
            shifted_lo = lo + shift
            lam_eff = 1e3 * (1.0 + shifted_hi / shifted_lo)
        else:
            shift = 0.0
            lam_eff = 1e3
        shifted = raw + shift
        base = np.where(occluded, eps_eff, shifted)
        sort_w = np.where(same, lam_eff * base, base)

    _assert_weight_ordering(sort_w, occluded, same)
    return lam_eff, eps_eff, sort_w


def _assert_weight_ordering(sort_w, occluded, same) -> None:
    if sort_w.size == 0:
        return
    if not np.all(np.isfinite(sort_w)):
        raise WeightOrderingError("effective edge weights overflowed to non-finite values")
    bands = [
        sort_w[same & ~occluded],
        sort_w[~same & ~occluded],
        sort_w[~same & occluded],
        sort_w[same & occluded],
    ]
    floor = np.inf
    for band in bands:
        if band.size == 0:
            continue
        if float(np.max(band)) >= floor:
            raise WeightOrderingError(
                "edge weight bands out of order; subgroup priority cannot be guaranteed"
            )
        floor = float(np.min(band))


def _kruskal(n_robots: int, keyed_edges, weights) -> SpanningTree:
    """Maximum-weight spanning tree; edges processed by (-weight, i, j)."""
    order = sorted(range(len(keyed_edges)), key=lambda k: (-weights[k], keyed_edges[k]))
    uf = UnionFind(n_robots)
    chosen: list[tuple[int, int]] = []
    total = 0.0
    for k in order:
        i, j = keyed_edges[k]
        if uf.union(i, j):
            chosen.append((i, j))
            total += weights[k]
            if len(chosen) == n_robots - 1:
                break
    if len(chosen) != n_robots - 1:
        raise ConnectivityLossError(components=_components(n_robots, keyed_edges))
    return SpanningTree(edges=tuple(sorted(chosen)), total_weight=total)


def _components(n: int, edges) -> list[list[int]]:
    uf = UnionFind(n)
    for i, j in edges:
        uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for v in range(n):
        groups.setdefault(uf.find(v), []).append(v)
    return sorted(groups.values())


def mlccst(graph: WeightedLosGraph) -> SpanningTree:
    """Maximum-weight spanning tree of the weighed sight-line graph.

    Raises ConnectivityLossError (listing components) if the graph does not
    span all robots. Warns if the tree is forced to retain an edge whose
    ellipsoid test failed, since its occlusion constraint starts violated.
    """
    for e in graph.edges:
        if e.w_prime is None:
            raise ValueError("graph edges are unweighted; call weigh_edges first")
    tree = _kruskal(
        graph.n_robots,
        [e.pair for e in graph.edges],
        [e.w_prime for e in graph.edges],
    )
    occluded = {e.pair for e in graph.edges if e.occluded_ellipsoid}
    bad = [e for e in tree.edges if e in occluded]
    if bad:
        warnings.warn(
            f"spanning tree retains {len(bad)} edge(s) whose ellipsoid test fails: {bad}",
            RuntimeWarning,
            stacklevel=2,
        )
    return tree


def verify_subgroup_connectivity(tree: SpanningTree, subgroups) -> bool:
    """True iff, for every subgroup, the tree edges internal to that subgroup
    connect all of its members."""
    sg = np.asarray(subgroups, dtype=np.int64)
    n = sg.size
    uf = UnionFind(n)
    for i, j in tree.edges:
        if sg[i] == sg[j]:
            uf.union(i, j)
    for label in np.unique(sg):
        members = np.nonzero(sg == label)[0]
        roots = {uf.find(int(v)) for v in members}
        if len(roots) > 1:
            return False
    return True


def mccst_baseline(
    states,
    nominal_controls,
    params: BarrierParams,
    subgroups,
    lam: float | None = None,
) -> SpanningTree:
    """Range-only baseline: candidate edges need only proximity (occlusion is
    ignored), scored by the range weight w_d alone with the same subgroup
    amplification."""
    x = np.asarray(states, dtype=np.float64)
    u_hat = np.asarray(nominal_controls, dtype=np.float64)
    sg = np.asarray(subgroups, dtype=np.int64)
    n = x.shape[0]
    gamma = params.gamma
    small, large = np.triu_indices(n, 1)
    diff = x[large] - x[small]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    in_range = dist2 <= params.r_comm**2
    pairs = [(int(i), int(j)) for i, j in zip(small[in_range], large[in_range])]
    w_d = (
        -2.0 * np.einsum("ij,ij->i", x[small[in_range]] - x[large[in_range]],
                         u_hat[small[in_range]] - u_hat[large[in_range]])
        + gamma * (params.r_comm**2 - dist2[in_range])
    )
    same = sg[small[in_range]] == sg[large[in_range]]
    _, _, sort_w = _calibrate_weights(
        w_d, np.zeros(len(pairs), dtype=bool), same, lam, None
    )
    return _kruskal(n, pairs, list(sort_w))


def fixed_mlccst_baseline(initial_tree: SpanningTree) -> SpanningTree:
    """Frozen-topology baseline: the tree computed at the first step is
    enforced unchanged for the whole run."""
    return initial_tree
