"""Support-relation inference and the floor-rooted scene graph.

The graph is a forest rooted at the floor: every non-excluded object
either hangs from the ceiling or has exactly one supporting parent
(the floor or another object).  Support between two boxes is decided
by three ordered tests: top-surface contact, containment, and finally
an oracle answer for geometrically inconclusive pairs.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import MissingOracleError
from .geometry import Obb, Plane, RoomFrame, align_rotation, set_distance

if TYPE_CHECKING:
    from .ingest.types import OracleRecord, SceneBundle

log = logging.getLogger(__name__)

FLOOR_ID = -1
DEFAULT_EPS = 0.05
UP = np.array([0.0, 0.0, 1.0])


@dataclass
class SupportVerdict:
    """Outcome of one directed support query "does a support b?".

    ``d_vertical`` is meaningful only for containment: the height of
    b's midplane above a's bottom, as a fraction of a's height.
    ``branch`` records which test decided (contact, containment,
    oracle).
    """

    supported: bool
    d_vertical: float
    branch: str


@dataclass
class SceneGraph:
    """Support forest plus ceiling, wall, and exclusion annotations."""

    parent: dict[int, int] = field(default_factory=dict)  # child -> parent
    d_vertical: dict[int, float] = field(default_factory=dict)
    ceiling: set[int] = field(default_factory=set)
    wall_edges: list[tuple[int, int]] = field(default_factory=list)
    excluded: set[int] = field(default_factory=set)

    def nodes(self) -> list[int]:
        return sorted(set(self.parent) | self.ceiling)

    def roots(self) -> list[int]:
        return sorted(c for c, p in self.parent.items() if p == FLOOR_ID)

    def children(self, node: int) -> list[int]:
        return sorted(c for c, p in self.parent.items() if p == node)

    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs, floor edges included, sorted."""
        return sorted((p, c) for c, p in self.parent.items())

    def topo_order(self) -> list[int]:
        """Tree nodes, every parent before its children."""
        order: list[int] = []
        queue = deque(self.roots())
        while queue:
            node = queue.popleft()
            order.append(node)
            queue.extend(self.children(node))
        return order

    def wall_of(self, mask_id: int) -> int | None:
        for obj, wall in self.wall_edges:
            if obj == mask_id:
                return wall
        return None

    def validate(self, all_ids: list[int]) -> None:
        """Check the tree/ceiling/excluded partition and acyclicity."""
        tree = set(self.parent)
        if tree & self.ceiling:
            raise ValueError(f"nodes both in tree and ceiling: {tree & self.ceiling}")
        for ids in (tree, self.ceiling):
            overlap = ids & self.excluded
            if overlap:
                raise ValueError(f"excluded nodes appear in the graph: {overlap}")
        missing = set(all_ids) - tree - self.ceiling - self.excluded
        if missing:
            raise ValueError(f"masks with no relation and not excluded: {missing}")
        if len(self.topo_order()) != len(tree):
            raise ValueError("support edges do not form a floor-rooted forest")

    def to_json(self) -> dict:
        return {
            "edges": [
                {
                    "parent": "floor" if p == FLOOR_ID else p,
                    "child": c,
                    "d_vertical": float(self.d_vertical.get(c, 0.0)),
                }
                for p, c in self.edges()
            ],
            "ceiling": sorted(self.ceiling),
            "wall_edges": [list(e) for e in sorted(self.wall_edges)],
            "excluded": sorted(self.excluded),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneGraph":
        graph = cls()
        for edge in obj.get("edges", []):
            parent = edge["parent"]
            child = int(edge["child"])
            graph.parent[child] = FLOOR_ID if parent == "floor" else int(parent)
            graph.d_vertical[child] = float(edge.get("d_vertical", 0.0))
        graph.ceiling = {int(i) for i in obj.get("ceiling", [])}
        graph.wall_edges = [
            (int(a), int(b)) for a, b in obj.get("wall_edges", [])
        ]
        graph.excluded = {int(i) for i in obj.get("excluded", [])}
        return graph


def containment_fraction(obb_a: Obb, obb_b: Obb, up: np.ndarray = UP) -> float:
    """Height of b's vertical midpoint above a's bottom, over a's height."""
    a_lo, a_hi = obb_a.interval(up)
    b_lo, b_hi = obb_b.interval(up)
    height = a_hi - a_lo
    if height < 1e-12:
        return 0.0
    return ((b_hi + b_lo) / 2.0 - a_lo) / height


def supported_relationship(
    obb_a: Obb,
    obb_b: Obb,
    oracle: "OracleRecord | None" = None,
    eps: float = DEFAULT_EPS,
    up: np.ndarray = UP,
    pair: tuple[int, int] | None = None,
) -> SupportVerdict:
    """Decide whether the object in ``obb_a`` supports the one in ``obb_b``.

    Three ordered tests, the first match wins:

    1. b's bottom rests on a's top surface (within ``eps``).
    2. b is contained in a (all corners inside, ``eps``-inflated); the
       verdict then carries the contained height fraction.
    3. the oracle's answer for the (a, b) pair.

    Raises:
        MissingOracleError: test 3 is reached with no oracle entry.
            Geometry that falls through is never silently unsupported.
    """
    _, a_hi = obb_a.interval(up)
    b_lo, _ = obb_b.interval(up)
    if abs(a_hi - b_lo) < eps:
        return SupportVerdict(True, 0.0, "contact")
    if bool(obb_a.contains(obb_b.vertices(), eps=eps).all()):
        return SupportVerdict(
            True, containment_fraction(obb_a, obb_b, up), "containment"
        )
    if oracle is None or pair is None or pair not in oracle.occlusion_support:
        name = f"{pair[0]} -> {pair[1]}" if pair else "unidentified pair"
        raise MissingOracleError(
            f"support of {name} is geometrically inconclusive and the "
            "oracle has no entry for it"
        )
    return SupportVerdict(bool(oracle.occlusion_support[pair]), 0.0, "oracle")


def _is_descendant(graph_parent: dict[int, int], node: int, ancestor: int) -> bool:
    seen = set()
    while node in graph_parent and node not in seen:
        seen.add(node)
        node = graph_parent[node]
        if node == ancestor:
            return True
    return False


def build_support_tree(
    bundle: "SceneBundle",
    obbs: dict[int, Obb],
    eps: float = DEFAULT_EPS,
    up: np.ndarray = UP,
    room: RoomFrame | None = None,
    wall_tolerance: float = DEFAULT_EPS,
) -> SceneGraph:
    """Grow the support forest outward from the floor-supported objects.

    Floor-supported and ceiling-hung objects come from the bundle
    oracle.  A breadth-first frontier then tests every unattached
    object against the current node, in ascending mask id, attaching
    those whose boxes are within ``eps`` and judged supported.  When a
    second potential parent claims an attached child, the parent at
    smaller set distance wins (ties to the smaller mask id).  Masks
    that end up with no relation join the excluded set.
    """
    oracle = bundle.oracle
    if oracle is None:
        raise MissingOracleError("support tree construction needs an oracle record")

    ids = sorted(i for i in bundle.masks if i in obbs)
    excluded = {i for i in oracle.excluded if i in ids}
    active = [i for i in ids if i not in excluded]
    graph = SceneGraph(excluded=set(oracle.excluded))
    graph.ceiling = {i for i in oracle.ceiling_supported if i in active}

    roots = sorted(
        i for i in oracle.floor_supported
        if i in active and i not in graph.ceiling
    )
    for r in roots:
        graph.parent[r] = FLOOR_ID
        graph.d_vertical[r] = 0.0

    claim_dist: dict[int, float] = {r: 0.0 for r in roots}
    candidates = [
        i for i in active if i not in graph.parent and i not in graph.ceiling
    ]
    queue = deque(roots)
    while queue:
        head = queue.popleft()
        for cand in candidates:
            if cand == head:
                continue
            dist = set_distance(obbs[cand], obbs[head])
            if dist >= eps:
                continue
            if cand in graph.parent:
                # A claim that loses on distance (ties to the smaller
                # mask id) is dead; don't even query the oracle for it.
                if graph.parent[cand] == FLOOR_ID:
                    continue
                incumbent = graph.parent[cand]
                if not (dist < claim_dist[cand] or
                        (dist == claim_dist[cand] and head < incumbent)):
                    continue
                # Re-parenting to a descendant would close a cycle.
                if _is_descendant(graph.parent, head, cand):
                    continue
                verdict = supported_relationship(
                    obbs[head], obbs[cand], oracle, eps, up, pair=(head, cand)
                )
                if verdict.supported:
                    graph.parent[cand] = head
                    graph.d_vertical[cand] = verdict.d_vertical
                    claim_dist[cand] = dist
            else:
                verdict = supported_relationship(
                    obbs[head], obbs[cand], oracle, eps, up, pair=(head, cand)
                )
                if verdict.supported:
                    graph.parent[cand] = head
                    graph.d_vertical[cand] = verdict.d_vertical
                    claim_dist[cand] = dist
                    queue.append(cand)

    for mask_id in active:
        wall = oracle.wall_contacts.get(mask_id)
        if wall is None or wall < 0:
            continue
        if room is not None:
            if wall >= len(room.walls):
                log.warning("mask %d references missing wall %d", mask_id, wall)
                continue
            gap = set_distance(obbs[mask_id], room.walls[wall])
            if gap >= wall_tolerance:
                log.warning(
                    "mask %d is %.3f m from wall %d, dropping contact",
                    mask_id, gap, wall,
                )
                continue
        if mask_id in graph.parent or mask_id in graph.ceiling:
            graph.wall_edges.append((mask_id, wall))

    graph.excluded |= {
        i for i in active if i not in graph.parent and i not in graph.ceiling
    }
    graph.validate(ids)
    return graph


def refine_obbs(
    graph: SceneGraph,
    obbs: dict[int, Obb],
    room: RoomFrame,
) -> dict[int, Obb]:
    """Level the tree boxes and restore occluded bottom faces.

    Every box in the support tree gets its nearest axis rotated exactly
    onto the floor normal.  Floor-supported boxes are then extended (or
    trimmed) downward so they rest on the floor; contact-supported
    children likewise meet their parent's refined top face.  Top faces
    never move: depth sensors see tops, while bottoms are routinely
    occluded.  Contained children (d_vertical > 0) keep their height.
    """
    up = room.up
    out = dict(obbs)
    for node in graph.topo_order():
        box = out[node]
        dots = up @ box.axes
        vertical = int(np.argmax(np.abs(dots)))
        axis = box.axes[:, vertical] * np.sign(dots[vertical])
        rot = align_rotation(axis, up)
        box = Obb(box.center, rot @ box.axes, box.half_extents, box.degenerate)

        parent = graph.parent[node]
        target = None
        if parent == FLOOR_ID:
            target = room.floor_height()
        elif graph.d_vertical.get(node, 0.0) == 0.0:
            _, target = out[parent].interval(up)
        if target is not None:
            _, top = box.interval(up)
            half = max(0.0, (top - target) / 2.0)
            mid = (top + target) / 2.0
            shift = mid - float(box.center @ up)
            extents = box.half_extents.copy()
            extents[vertical] = half
            box = Obb(box.center + shift * up, box.axes, extents, box.degenerate)
        out[node] = box
    return out


def geometric_oracle(
    obbs: dict[int, Obb],
    room: RoomFrame,
    eps: float = DEFAULT_EPS,
    occlusion_support: dict[tuple[int, int], bool] | None = None,
    object_dims: dict[int, tuple[float, float, float]] | None = None,
) -> "OracleRecord":
    """Derive an oracle record from geometry alone, for synthetic scenes.

    Floor support means the box bottom is within ``eps`` of the floor;
    ceiling support means the top is within ``eps`` of the ceiling; a
    wall contact is any wall within ``eps`` set distance (first wall
    wins).  Occlusion answers cannot be derived from geometry, so the
    caller supplies them (a generator knows its own support plan).
    """
    from .ingest.types import OracleRecord

    up = room.up
    floor_h = room.floor_height()
    ceiling_h = room.ceiling_height()
    record = OracleRecord(
        occlusion_support=dict(occlusion_support or {}),
        object_dims=dict(object_dims or {}),
    )
    for mask_id in sorted(obbs):
        box = obbs[mask_id]
        lo, hi = box.interval(up)
        if ceiling_h is not None and abs(hi - ceiling_h) < eps:
            record.ceiling_supported.append(mask_id)
        elif abs(lo - floor_h) < eps:
            record.floor_supported.append(mask_id)
        for w, wall in enumerate(room.walls):
            if set_distance(box, wall) < eps:
                record.wall_contacts[mask_id] = w
                break
        if mask_id not in record.object_dims:
            record.object_dims[mask_id] = tuple(float(v) for v in box.extents)
    return record
