"""Multi-scale time hierarchy from bottom-up clustering of 1-D timestamps.

Clusters are merged by single linkage (minimum pairwise distance), which on
sorted 1-D input always joins time-adjacent clusters, so the whole merge
sequence can be produced in O(L log L) with a heap over adjacent gaps. The
merge order is then sliced into consecutive intervals; the interval index
gives the temporal scale.

Two node-set views matter downstream and are deliberately distinct:

* ``frontier(s)`` -- the clusters that exist when interval ``s`` begins and
  are consumed by one of its merges. These are the attention participants
  at scale ``s``; a query's key set is drawn from this set.
* ``active_nodes(s)`` -- every cluster alive when interval ``s`` begins.
  This is a partition of all leaves (frontier(s) plus carried-over nodes
  that merge at a later scale) and is what hierarchical pooling walks.

For a single scale the two views coincide with the full leaf set.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, HierarchyError

__all__ = [
    "MergeStep",
    "HierarchyNode",
    "ScaleHierarchy",
    "agglomerate",
    "assign_scales",
    "default_merge_counts",
    "build_hierarchy",
]


@dataclass(frozen=True)
class MergeStep:
    """One agglomeration step: clusters ``left`` and ``right`` -> ``result``."""

    order: int  # 1-based merge index
    left: int
    right: int
    result: int
    distance: float


def agglomerate(times) -> list[MergeStep]:
    """Single-linkage merge sequence over sorted 1-D points.

    Ties on distance are broken toward the pair whose left cluster has the
    earliest first point. Cluster ids: leaves are 0..L-1 in time order, the
    merge at ``order`` o creates id L-1+o. Exactly L-1 steps are returned.
    """
    t = np.asarray(times, dtype=np.float64)
    n = len(t)
    if n < 2:
        raise HierarchyError(f"need at least 2 points to agglomerate, got {n}")
    if np.any(np.diff(t) <= 0):
        raise HierarchyError("times must be strictly increasing with no duplicates")

    # Active clusters are contiguous spans [lo, hi] of leaf indices, tracked
    # through a doubly linked list of gap slots. Gap g sits between leaf g
    # and g+1; merging across it fuses the flanking spans.
    left_span_lo = list(range(n - 1))  # gap g: lowest leaf of the span ending at g
    cluster_id_left = list(range(n - 1))
    cluster_id_right = list(range(1, n))
    prev_gap = list(range(-1, n - 2))
    next_gap = list(range(1, n - 1)) + [-1]
    alive = [True] * (n - 1)
    version = [0] * (n - 1)

    heap: list[tuple[float, float, int, int]] = []
    for g in range(n - 1):
        heapq.heappush(heap, (t[g + 1] - t[g], t[left_span_lo[g]], g, 0))

    steps: list[MergeStep] = []
    next_id = n
    order = 0
    while len(steps) < n - 1:
        dist, _, g, ver = heapq.heappop(heap)
        if not alive[g] or version[g] != ver:
            continue
        order += 1
        left_id = cluster_id_left[g]
        right_id = cluster_id_right[g]
        new_id = next_id
        next_id += 1
        steps.append(MergeStep(order, left_id, right_id, new_id, float(dist)))
        alive[g] = False

        lo = left_span_lo[g]
        pg, ng = prev_gap[g], next_gap[g]
        if pg >= 0:
            # Left neighbour's right cluster becomes the merged one; its key
            # (distance, left-cluster first time) is unchanged.
            cluster_id_right[pg] = new_id
            next_gap[pg] = ng
        if ng >= 0:
            # Right neighbour's left cluster grew leftward: its tie-break key
            # changes, so push a fresh entry and invalidate the stale one.
            cluster_id_left[ng] = new_id
            left_span_lo[ng] = lo
            prev_gap[ng] = pg
            version[ng] += 1
            heapq.heappush(heap, (t[ng + 1] - t[ng], t[lo], ng, version[ng]))
    return steps


def default_merge_counts(num_points: int, num_scales: int) -> list[int]:
    """Split L-1 merges into S near-equal interval counts, remainder first."""
    merges = num_points - 1
    if not 1 <= num_scales <= merges:
        raise ConfigError(
            f"num_scales must lie in [1, {merges}] for {num_points} points,"
            f" got {num_scales}"
        )
    base, rem = divmod(merges, num_scales)
    return [base + (1 if s < rem else 0) for s in range(num_scales)]


@dataclass
class HierarchyNode:
    """A cluster in the merge tree (leaves are the original events)."""

    id: int
    scale: int
    children: tuple[int, ...]
    members: np.ndarray  # leaf indices, ascending
    representative_time: float
    formed_step: int  # 0 for leaves, else the creating merge's order
    consumed_step: int | None  # order of the merge absorbing this node; None for root


@dataclass
class ScaleHierarchy:
    """Merge tree plus the scale slicing derived from ``merge_counts``."""

    times: np.ndarray
    steps: list[MergeStep]
    merge_counts: list[int]
    nodes: list[HierarchyNode] = field(default_factory=list)
    per_scale: dict[int, list[int]] = field(default_factory=dict)

    @property
    def num_scales(self) -> int:
        return len(self.merge_counts)

    @property
    def num_leaves(self) -> int:
        return len(self.times)

    @property
    def root_id(self) -> int:
        return self.steps[-1].result if self.steps else 0

    def _boundary(self, s: int) -> int:
        """Number of merge steps completed before interval ``s`` begins."""
        return sum(self.merge_counts[: s - 1])

    def interval_of_step(self, order: int) -> int:
        done = 0
        for s, count in enumerate(self.merge_counts, start=1):
            done += count
            if order <= done:
                return s
        raise HierarchyError(f"merge order {order} beyond {done} steps")

    def _check_scale(self, s: int) -> None:
        if not 1 <= s <= self.num_scales:
            raise ConfigError(f"scale {s} out of range [1, {self.num_scales}]")

    def active_nodes(self, s: int) -> list[int]:
        """Clusters alive at the start of interval ``s``: a partition of all
        leaves, ordered by representative time."""
        self._check_scale(s)
        cut = self._boundary(s)
        ids = [
            n.id
            for n in self.nodes
            if n.formed_step <= cut and (n.consumed_step is None or n.consumed_step > cut)
        ]
        return self._time_ordered(ids)

    def frontier(self, s: int) -> list[int]:
        """Attention participants at scale ``s``: the active clusters that one
        of interval ``s``'s merges consumes, ordered by representative time."""
        self._check_scale(s)
        start, end = self._boundary(s), self._boundary(s) + self.merge_counts[s - 1]
        ids = [
            n.id
            for n in self.nodes
            if n.formed_step <= start
            and n.consumed_step is not None
            and start < n.consumed_step <= end
        ]
        return self._time_ordered(ids)

    def key_set(self, s: int, node_id: int, causal: bool = False) -> list[int]:
        """Keys for query ``node_id`` at scale ``s``: the whole frontier there
        (itself included), optionally restricted to nodes no later than it."""
        frontier = self.frontier(s)
        if node_id not in frontier:
            if node_id in self.active_nodes(s):
                return [node_id]  # carried-over node: attends to itself only
            raise HierarchyError(f"node {node_id} is not active at scale {s}")
        if not causal:
            return list(frontier)
        t_q = self.nodes[node_id].representative_time
        return [i for i in frontier if self.nodes[i].representative_time <= t_q]

    def pool_groups(self, s: int) -> tuple[list[int], list[list[int]]]:
        """Grouping that takes active_nodes(s) to active_nodes(s+1).

        Returns the ordered ids of active_nodes(s+1) together with, for each,
        the positions (within active_nodes(s)) of the clusters it absorbs;
        carried-over nodes map to a singleton group.
        """
        if not 1 <= s < self.num_scales:
            raise ConfigError(f"pooling needs 1 <= s < {self.num_scales}, got {s}")
        current = self.active_nodes(s)
        nxt = self.active_nodes(s + 1)
        pos = {node_id: i for i, node_id in enumerate(current)}
        cut = self._boundary(s + 1)
        groups: dict[int, list[int]] = {node_id: [] for node_id in nxt}
        for node_id in current:
            anc = node_id
            while anc not in groups:
                step = self.nodes[anc].consumed_step
                if step is None or step > cut:
                    raise HierarchyError(f"node {node_id} has no ancestor in scale {s + 1}")
                anc = self._parent_of(anc)
            groups[anc].append(pos[node_id])
        return nxt, [groups[node_id] for node_id in nxt]

    def _parent_of(self, node_id: int) -> int:
        step_order = self.nodes[node_id].consumed_step
        if step_order is None:
            raise HierarchyError(f"node {node_id} is the root")
        return self.steps[step_order - 1].result

    def _time_ordered(self, ids: list[int]) -> list[int]:
        return sorted(
            ids,
            key=lambda i: (self.nodes[i].representative_time, int(self.nodes[i].members[0])),
        )

    def type_mixture(self, node_id: int, types: np.ndarray, num_types: int) -> np.ndarray:
        """Distribution of member leaf types (one-hot for a leaf)."""
        mix = np.zeros(num_types)
        member_types = types[self.nodes[node_id].members]
        for k in member_types:
            mix[k] += 1.0
        return mix / len(member_types)

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "scale": n.scale,
                    "children": list(n.children),
                    "members": [int(m) for m in n.members],
                    "time": n.representative_time,
                }
                for n in self.nodes
            ]
        }

    def format_tree(self) -> str:
        """Indented text rendering of the merge tree, root first."""
        lines: list[str] = []

        def walk(node_id: int, depth: int):
            n = self.nodes[node_id]
            kind = "leaf" if not n.children else "node"
            lines.append(
                "  " * depth
                + f"{kind} id={n.id} scale={n.scale} t={n.representative_time:.6g}"
                + f" members={n.members.tolist()}"
            )
            for c in n.children:
                walk(c, depth + 1)

        walk(self.root_id, 0)
        return "\n".join(lines)


def assign_scales(times, steps: list[MergeStep], merge_counts) -> ScaleHierarchy:
    """Slice the merge order into intervals and label every node with a scale.

    Interval ``s`` holds ``merge_counts[s-1]`` consecutive steps. A cluster
    created by a step in interval ``s`` gets scale ``s``; a leaf inherits the
    scale of the interval in which it is first merged away.
    """
    t = np.asarray(times, dtype=np.float64)
    merge_counts = [int(c) for c in merge_counts]
    if any(c < 1 for c in merge_counts):
        raise ConfigError(f"merge counts must all be >= 1, got {merge_counts}")
    if sum(merge_counts) != len(steps):
        raise ConfigError(
            f"merge counts sum to {sum(merge_counts)} but there are {len(steps)} steps"
        )

    h = ScaleHierarchy(times=t, steps=steps, merge_counts=merge_counts)

    consumed: dict[int, int] = {}
    for step in steps:
        consumed[step.left] = step.order
        consumed[step.right] = step.order

    n = len(t)
    for leaf in range(n):
        scale = h.interval_of_step(consumed[leaf]) if leaf in consumed else 1
        h.nodes.append(
            HierarchyNode(
                id=leaf,
                scale=scale,
                children=(),
                members=np.array([leaf]),
                representative_time=float(t[leaf]),
                formed_step=0,
                consumed_step=consumed.get(leaf),
            )
        )
    for step in steps:
        members = np.sort(
            np.concatenate([h.nodes[step.left].members, h.nodes[step.right].members])
        )
        h.nodes.append(
            HierarchyNode(
                id=step.result,
                scale=h.interval_of_step(step.order),
                children=(step.left, step.right),
                members=members,
                representative_time=float(t[members].mean()),
                formed_step=step.order,
                consumed_step=consumed.get(step.result),
            )
        )

    for s in range(1, h.num_scales + 1):
        h.per_scale[s] = h.frontier(s)
    return h


def build_hierarchy(times, num_scales: int | None = None, merge_counts=None) -> ScaleHierarchy:
    """Agglomerate and slice in one call.

    Exactly one of ``num_scales`` / ``merge_counts`` may be given; the
    default is ceil(log2 L) scales (capped at L-1).
    """
    t = np.asarray(times, dtype=np.float64)
    steps = agglomerate(t)
    if merge_counts is None:
        if num_scales is None:
            num_scales = max(1, min(len(t) - 1, int(np.ceil(np.log2(len(t))))))
        merge_counts = default_merge_counts(len(t), num_scales)
    elif num_scales is not None and num_scales != len(merge_counts):
        raise ConfigError("give either num_scales or merge_counts, not conflicting both")
    return assign_scales(t, steps, merge_counts)
