"""First-level weighted bipartite graph of scans and markers.

Edge weights are the point-to-point fit errors of the marker pose estimates;
Dijkstra shortest paths from the anchor scan give the lowest-accumulated-error
route for propagating initial poses to every other scan.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedScan, NoObservations
from .geometry import Pose, apply, compose, inverse
from .pose_svd import canonical_corners
from .tagdetect import MarkerObservation

log = logging.getLogger(__name__)

# Graph nodes are ("marker", id) or ("scan", id); tuple order doubles as the
# deterministic tie-break for equal path costs.
Node = tuple[str, int]


@dataclass(frozen=True)
class Edge:
    weight: float
    pose: Pose  # marker-to-scan transform of the observation


@dataclass
class InitGraph:
    scan_nodes: set[int]
    marker_nodes: set[int]
    edges: dict[tuple[int, int], Edge]
    anchor: int

    def neighbors(self, node: Node) -> list[tuple[Node, float]]:
        kind, key = node
        out = []
        for (i, j), edge in self.edges.items():
            if kind == "scan" and i == key:
                out.append((("marker", j), edge.weight))
            elif kind == "marker" and j == key:
                out.append((("scan", i), edge.weight))
        return out


def build(observations: list[MarkerObservation], anchor: int | None = None) -> InitGraph:
    """Bipartite graph over the observations.

    Duplicate (scan, marker) observations keep the smaller fit error.  The
    anchor defaults to the smallest scan id.
    """
    if not observations:
        raise NoObservations("cannot build a graph without observations")
    edges: dict[tuple[int, int], Edge] = {}
    scans: set[int] = set()
    markers: set[int] = set()
    for obs in observations:
        scans.add(obs.scan_id)
        markers.add(obs.marker_id)
        key = (obs.scan_id, obs.marker_id)
        prev = edges.get(key)
        if prev is None or obs.e_pp < prev.weight:
            edges[key] = Edge(weight=obs.e_pp, pose=obs.pose)
    if anchor is None:
        anchor = min(scans)
    if anchor not in scans:
        raise NoObservations(f"anchor scan {anchor} has no observations")
    return InitGraph(scan_nodes=scans, marker_nodes=markers, edges=edges, anchor=anchor)


@dataclass
class PathResult:
    """Per-scan shortest path (alternating scan/marker nodes) and its weight."""

    paths: dict[int, list[Node]]
    weights: dict[int, float]
    unreachable: list[int] = field(default_factory=list)


def shortest_paths(g: InitGraph, strict: bool = False) -> PathResult:
    """Dijkstra from the anchor over e_pp edge weights.

    Ties break on the smaller (node-type, id) pair.  Unreachable scans are
    reported in the result; with ``strict=True`` they raise DisconnectedScan.
    """
    start: Node = ("scan", g.anchor)
    dist: dict[Node, float] = {start: 0.0}
    parent: dict[Node, Node] = {}
    heap: list[tuple[float, Node]] = [(0.0, start)]
    done: set[Node] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nbr, w in sorted(g.neighbors(node)):
            nd = d + w
            if nbr not in dist or nd < dist[nbr]:
                dist[nbr] = nd
                parent[nbr] = node
                heapq.heappush(heap, (nd, nbr))
    paths: dict[int, list[Node]] = {}
    weights: dict[int, float] = {}
    unreachable = []
    for scan_id in sorted(g.scan_nodes):
        node: Node = ("scan", scan_id)
        if node not in done:
            unreachable.append(scan_id)
            continue
        chain = [node]
        while chain[-1] != start:
            chain.append(parent[chain[-1]])
        paths[scan_id] = chain[::-1]
        weights[scan_id] = dist[node]
    if unreachable:
        if strict:
            raise DisconnectedScan(unreachable)
        log.warning("scans unreachable from anchor %d: %s", g.anchor, unreachable)
    return PathResult(paths=paths, weights=weights, unreachable=unreachable)


@dataclass
class InitialValues:
    """Anchor-relative initial values for the factor graph."""

    scan_poses: dict[int, Pose]
    marker_poses: dict[int, Pose]
    corners: dict[tuple[int, int], np.ndarray]  # (marker_id, s in 1..4) -> point
    path_weights: dict[int, float]


def propagate_poses(g: InitGraph, paths: PathResult, side: float) -> InitialValues:
    """Compose relative poses along each shortest path.

    The anchor pose is the identity.  One hop f_a -> m_j -> f_b composes as
    T_a_b = T(j in a) * inverse(T(j in b)), mapping scan-b points into scan a.
    Marker poses come from the lowest-error on-path observation (any
    registered observation as fallback); corner positions are the marker pose
    applied to the canonical corners.
    """
    scan_poses: dict[int, Pose] = {g.anchor: Pose.identity()}
    for scan_id, chain in sorted(paths.paths.items()):
        if scan_id == g.anchor:
            continue
        pose = Pose.identity()
        for k in range(0, len(chain) - 2, 2):
            (_, a) = chain[k]
            (_, j) = chain[k + 1]
            (_, b) = chain[k + 2]
            step = compose(g.edges[(a, j)].pose, inverse(g.edges[(b, j)].pose))
            pose = compose(pose, step)
        scan_poses[scan_id] = pose

    on_path: dict[int, set[int]] = {}
    for chain in paths.paths.values():
        for k in range(1, len(chain), 2):
            (_, j) = chain[k]
            for (_, i) in (chain[k - 1], chain[k + 1]):
                on_path.setdefault(j, set()).add(i)

    marker_poses: dict[int, Pose] = {}
    corners: dict[tuple[int, int], np.ndarray] = {}
    base = canonical_corners(side)
    for j in sorted(g.marker_nodes):
        candidates = [
            (g.edges[(i, j)].weight, i)
            for i in on_path.get(j, set())
            if (i, j) in g.edges
        ]
        if not candidates:
            candidates = [
                (edge.weight, i)
                for (i, jj), edge in g.edges.items()
                if jj == j and i in scan_poses
            ]
        if not candidates:
            continue  # marker only seen by unreachable scans
        _, best_scan = min(candidates)
        marker_poses[j] = compose(scan_poses[best_scan], g.edges[(best_scan, j)].pose)
        world = apply(marker_poses[j], base)
        for s in range(4):
            corners[(j, s + 1)] = world[s]
    return InitialValues(
        scan_poses=scan_poses,
        marker_poses=marker_poses,
        corners=corners,
        path_weights=dict(paths.weights),
    )


def to_dot(g: InitGraph) -> str:
    """DOT-format dump of nodes, edges, and weights for debugging."""
    lines = ["graph initgraph {"]
    for i in sorted(g.scan_nodes):
        shape = "doublecircle" if i == g.anchor else "circle"
        lines.append(f'  scan_{i} [label="f{i}" shape={shape}];')
    for j in sorted(g.marker_nodes):
        lines.append(f'  marker_{j} [label="m{j}" shape=box];')
    for (i, j), edge in sorted(g.edges.items()):
        lines.append(f'  scan_{i} -- marker_{j} [label="{edge.weight:.3g}"];')
    lines.append("}")
    return "\n".join(lines)
