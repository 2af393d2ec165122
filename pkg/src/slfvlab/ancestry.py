"""Backward genealogy of a sample: the spatial coalescent in a fixed or averaged environment.

The state is a marked partition of the sample labels ``1..k``; each block
carries the location of the common ancestor of its labels. During an event
every block in range is hit independently with the event's impact; the hit
blocks merge into one block placed at a fresh parental location.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import geometry
from .environment import Environment, EventModel, events_covering
from .geometry import Domain
from .mutation import Tree
from .seeding import SeedKey, as_key


@dataclass
class Block:
    labels: tuple
    location: np.ndarray
    jumps: int = 0

    @property
    def key(self) -> int:
        return self.labels[0]


@dataclass
class MarkedPartition:
    blocks: List[Block]

    @classmethod
    def singletons(cls, points) -> "MarkedPartition":
        """``{({1}, x_1), ..., ({k}, x_k)}``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls([Block((j + 1,), pts[j].copy()) for j in range(len(pts))])

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def k(self) -> int:
        return sum(len(b.labels) for b in self.blocks)

    def sets(self) -> list:
        return sorted(tuple(b.labels) for b in self.blocks)

    def locations(self) -> np.ndarray:
        return np.array([b.location for b in self.blocks])

    def copy(self) -> "MarkedPartition":
        return MarkedPartition([Block(b.labels, b.location.copy(), b.jumps) for b in self.blocks])

    def validate(self, k: Optional[int] = None) -> None:
        labels = sorted(x for b in self.blocks for x in b.labels)
        k = len(labels) if k is None else k
        if labels != list(range(1, k + 1)):
            raise AssertionError(f"blocks do not partition 1..{k}: {labels}")


@dataclass
class MergeRecord:
    h: float
    event_id: int
    merged: list
    new_location: np.ndarray
    N: int

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "event_id": self.event_id,
            "merged_blocks": [list(m) for m in self.merged],
            "new_location": [float(v) for v in self.new_location],
            "N": self.N,
        }


@dataclass
class Trajectory:
    start: MarkedPartition
    final: MarkedPartition
    horizon: float
    records: List[MergeRecord] = field(default_factory=list)
    stopped: bool = False

    def first_jump_time(self) -> float:
        return self.records[0].h if self.records else np.inf

    def jump_times(self) -> np.ndarray:
        return np.array([r.h for r in self.records])

    def first_merge_time(self) -> float:
        for r in self.records:
            if any(len(m) > 1 for m in r.merged):
                return r.h
        return np.inf

    def block_counts(self) -> np.ndarray:
        return np.array([self.start.N] + [r.N for r in self.records])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def forest(self):
        """One tree per final block, with branch lengths in backward time.

        Returns ``(tree, leaf_labels, block)`` triples; ``leaf_labels[i]`` is
        the sample label sitting at ``tree.leaves[i]``.
        """
        if self.stopped:
            raise ValueError("trajectory was stopped early; its forest does not reach the horizon")
        # node table: (h, children)
        nodes_h: list = []
        nodes_children: list = []
        top = {}
        for label in sorted(x for b in self.start.blocks for x in b.labels):
            nodes_h.append(0.0)
            nodes_children.append([])
            top[(label,)] = (len(nodes_h) - 1, label)
        # top maps current block labels -> node id; track via min label
        current = {b.labels: top[b.labels][0] for b in self.start.blocks}
        by_label = {}
        for labels, node in current.items():
            for x in labels:
                by_label[x] = labels
        for rec in self.records:
            for group in rec.merged:
                children = []
                new_labels = []
                for key_label in group:
                    labels = by_label[key_label]
                    if labels in current:
                        children.append(current.pop(labels))
                        new_labels.extend(labels)
                new_labels = tuple(sorted(new_labels))
                nodes_h.append(rec.h)
                nodes_children.append(children)
                current[new_labels] = len(nodes_h) - 1
                for x in new_labels:
                    by_label[x] = new_labels
        out = []
        for block in self.final.blocks:
            labels = tuple(sorted(block.labels))
            top_node = current[labels]
            # relabel this tree: root (at horizon) first
            parent = [-1]
            lengths = [0.0]
            leaf_label = {}
            stack = [(top_node, 0, self.horizon)]
            while stack:
                node, par, par_h = stack.pop()
                parent.append(par)
                lengths.append(max(par_h - nodes_h[node], 0.0))
                me = len(parent) - 1
                if not nodes_children[node]:
                    leaf_label[me] = node
                for c in reversed(nodes_children[node]):
                    stack.append((c, me, nodes_h[node]))
            tree = Tree(parent, lengths)
            leaves = tree.leaves
            leaf_labels = [self._leaf_sample_label(leaf_label[v]) for v in leaves]
            out.append((tree, leaf_labels, block))
        return out

    def _leaf_sample_label(self, node: int) -> int:
        labels = sorted(x for b in self.start.blocks for x in b.labels)
        return labels[node]


def _check_start(start: MarkedPartition, dom: Domain) -> None:
    for b in start.blocks:
        if b.location.shape != (dom.dim,) or not dom.contains(b.location):
            raise ValueError(f"block location {b.location} is not a point of the domain")


def _merge_groups(affected: list, model: EventModel, n_parents: int, pick: np.ndarray) -> list:
    """Split the affected blocks between the event's parents."""
    if n_parents <= 1:
        return [affected]
    groups = {}
    for b, p in zip(affected, pick):
        groups.setdefault(int(p), []).append(b)
    return [groups[p] for p in sorted(groups)]


def _should_stop(records: list, n_blocks: int, max_records: Optional[int], stop_blocks: int) -> bool:
    return (max_records is not None and len(records) >= max_records) or n_blocks <= stop_blocks


def run_quenched(start: MarkedPartition, env: Environment, t_sample: float, horizon: float, seed_key,
                 max_records: Optional[int] = None, stop_blocks: int = 0) -> Trajectory:
    """Coalescent of the sample taken at ``t_sample`` in the fixed environment ``env``.

    Events are replayed backward in time from ``t_sample`` down to
    ``t_sample - horizon``. The coin of a block at event ``i`` is the uniform
    keyed by ``(i, smallest label of the block)``.

    ``max_records`` / ``stop_blocks`` end the run early (after that many state
    changes, or once at most that many blocks remain); the trajectory is then
    flagged ``stopped`` and its forest is not meaningful.
    """
    key = as_key(seed_key)
    t_low = t_sample - horizon
    tol = 1e-12 * max(1.0, abs(env.t_begin), abs(env.t_end))
    if horizon < 0 or t_low < env.t_begin - tol or t_sample > env.t_end + tol:
        raise ValueError(
            f"environment window {env.window} does not cover the requested "
            f"backward interval ({t_low}, {t_sample}]"
        )
    _check_start(start, env.domain)
    t_low = max(t_low, env.t_begin)
    coin_key = key.child("coins")
    loc_rng = key.child("locations").rng()
    model = env.model
    dom = env.domain

    state = start.copy()
    live = {b.key: b for b in state.blocks}
    lists = {}
    heap: list = []

    def schedule(b: Block, t_upper: float, below_id: Optional[int] = None):
        ids = events_covering(b.location, t_low, t_upper, env)
        if below_id is not None:
            ids = ids[ids < below_id]
        lists[b.key] = ids
        if ids.size:
            heapq.heappush(heap, (-env.t[ids[-1]], int(ids[-1]), b.key))

    for b in state.blocks:
        schedule(b, t_sample)

    records = []
    stopped = False
    while heap:
        neg_t, e, bkey = heapq.heappop(heap)
        covered = [bkey]
        while heap and heap[0][1] == e:
            covered.append(heapq.heappop(heap)[2])
        covered = [c for c in covered if c in live]
        covered.sort()
        z, r, u = env.z[e], float(env.r[e]), float(env.u[e])
        sq = np.array([geometry.sq_distances(live[c].location, z, dom)[0] for c in covered])
        p = model.impact_at(r, u, sq)
        coins = coin_key.coins(e, np.array(covered, dtype=np.int64))
        hit = [c for c, pc, uc in zip(covered, p, coins) if uc < pc]
        missed = [c for c in covered if c not in hit]
        for c in missed:
            ids = lists[c]
            ids = ids[:-1]
            lists[c] = ids
            if ids.size:
                heapq.heappush(heap, (-env.t[ids[-1]], int(ids[-1]), c))
        if not hit:
            continue
        n_par = 1 if env.n_parents is None else int(env.n_parents[e])
        pick = coin_key.child("parent").coins(e, np.array(hit, dtype=np.int64))
        pick = np.minimum((pick * n_par).astype(np.int64), n_par - 1)
        groups = _merge_groups(hit, model, n_par, pick)
        merged = []
        for group in groups:
            labels = tuple(sorted(x for c in group for x in live[c].labels))
            jumps = max(live[c].jumps for c in group) + 1
            for c in group:
                del live[c]
                lists.pop(c, None)
            loc = np.asarray(model.sample_parent_location(z, r, dom, loc_rng), dtype=np.float64)
            nb = Block(labels, loc, jumps)
            live[nb.key] = nb
            merged.append(tuple(group))
            schedule(nb, float(env.t[e]), below_id=e)
        records.append(MergeRecord(float(t_sample - env.t[e]), int(e), merged, loc.copy(), len(live)))
        if _should_stop(records, len(live), max_records, stop_blocks):
            stopped = True
            break
    final = MarkedPartition(sorted(live.values(), key=lambda b: b.key))
    return Trajectory(start.copy(), final, float(horizon), records, stopped)


def _bounding_region(locs: np.ndarray, anchor: np.ndarray, R: float, dom: Domain):
    """A ball around ``anchor`` holding every reach ball, or ``None`` for the whole domain."""
    rho = float(np.sqrt(geometry.sq_distances(locs, anchor, dom).max())) + R
    if dom.periodic and rho >= 0.5 * float(dom.L.min()):
        return None, dom.volume
    return rho, geometry.ball_volume(anchor, rho, dom)


def run_annealed(start: MarkedPartition, model: EventModel, dom: Domain, horizon: float, seed_key,
                 max_records: Optional[int] = None, stop_blocks: int = 0,
                 proposal: str = "auto") -> Trajectory:
    """Coalescent averaged over the environment, by exact thinning.

    Event centres that can touch a block form a Poisson process of intensity
    ``rate`` on the union ``U`` of the reach balls around the blocks. Two
    proposal schemes produce it exactly:

    * ``"union"``: propose at rate ``rate · Σ_b Vol(B(ξ_b, R))``, uniformly in a
      volume-weighted block's reach ball, keep with probability
      ``1 / #{blocks within R}``;
    * ``"bounding"``: propose uniformly in one ball (or the whole domain)
      containing ``U`` and keep the centres that land in ``U``.

    ``"auto"`` takes whichever has the lower proposal rate at each step.
    """
    if proposal not in ("auto", "union", "bounding"):
        raise ValueError(f"unknown proposal scheme {proposal!r}")
    key = as_key(seed_key)
    _check_start(start, dom)
    rng = key.child("annealed").rng()
    R = model.reach_max
    state = start.copy()
    blocks = sorted(state.blocks, key=lambda b: b.key)
    anchor = blocks[0].location.copy() if blocks else np.zeros(dom.dim)

    def volumes(locs):
        if dom.periodic:
            return np.full(len(locs), geometry.ball_volume(np.zeros(dom.dim), R, dom))
        return np.array([geometry.ball_volume(x, R, dom) for x in locs])

    locs = np.array([b.location for b in blocks], dtype=np.float64).reshape(-1, dom.dim)
    vols = volumes(locs)
    h = 0.0
    n_proposals = 0
    records = []
    stopped = False
    while blocks and model.rate > 0 and model.mean_impact > 0:
        union_total = float(vols.sum())
        scheme = proposal
        if scheme != "union":
            rho, bound_total = _bounding_region(locs, anchor, R, dom)
            if scheme == "auto":
                scheme = "bounding" if bound_total < union_total else "union"
        total = union_total if scheme == "union" else bound_total
        if total <= 0:
            break
        h += rng.exponential(1.0 / (model.rate * total))
        if h > horizon:
            break
        n_proposals += 1
        if scheme == "union":
            b = rng.choice(len(blocks), p=vols / union_total) if len(blocks) > 1 else 0
            c = geometry.sample_uniform_ball(locs[b], R, dom, rng)
        elif rho is None:
            c = dom.uniform(rng, 1)[0]
        else:
            c = geometry.sample_uniform_ball(anchor, rho, dom, rng)
        sq = geometry.sq_distances(locs, c, dom)
        near = int(np.count_nonzero(sq <= R * R))
        if near == 0:
            continue
        if scheme == "union" and near > 1 and rng.random() * near >= 1.0:
            continue
        r, u, npar = model.sample_marks(rng, 1)
        r, u = float(r[0]), float(u[0])
        p = model.impact_at(r, u, sq)
        cand = np.flatnonzero(p > 0)
        if cand.size == 0:
            continue
        hit = cand[rng.random(cand.size) < p[cand]]
        if hit.size == 0:
            continue
        n_par = 1 if npar is None else int(npar[0])
        pick = rng.integers(0, n_par, size=hit.size) if n_par > 1 else np.zeros(hit.size, dtype=np.int64)
        merged = []
        new_blocks = []
        gone = set()
        for par in sorted(set(pick.tolist())):
            members = hit[pick == par]
            labels = tuple(sorted(x for i in members for x in blocks[i].labels))
            jumps = max(blocks[i].jumps for i in members) + 1
            loc = np.asarray(model.sample_parent_location(c, r, dom, rng), dtype=np.float64)
            merged.append(tuple(blocks[i].key for i in members))
            new_blocks.append(Block(labels, loc, jumps))
            gone.update(int(i) for i in members)
        blocks = [bl for i, bl in enumerate(blocks) if i not in gone] + new_blocks
        blocks.sort(key=lambda bl: bl.key)
        locs = np.array([bl.location for bl in blocks], dtype=np.float64).reshape(-1, dom.dim)
        vols = volumes(locs)
        records.append(MergeRecord(float(h), n_proposals, merged, new_blocks[-1].location.copy(), len(blocks)))
        if _should_stop(records, len(blocks), max_records, stop_blocks):
            stopped = True
            break
    final = MarkedPartition(blocks)
    return Trajectory(start.copy(), final, float(horizon), records, stopped)


# --------------------------------------------------------------------------
# parental skeleton and single-line tracing


@dataclass
class ParentalSkeleton:
    parent: np.ndarray
    coin_key: SeedKey

    def chain(self, i: int) -> list:
        out = [int(i)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    @property
    def roots(self) -> np.ndarray:
        return np.flatnonzero(self.parent < 0)


def _require_marks(env: Environment) -> None:
    if not env.marked:
        raise ValueError("environment has no parental marks; call extend_with_parents first")


def build_parental_skeleton(env: Environment, seed_key) -> ParentalSkeleton:
    """Link each event to the most recent earlier event that hit its parent.

    The parent of event ``i`` sits at ``y_i``; event ``i' < i`` claims it when
    ``y_i`` is in range and the pair coin ``H_{i i'} >= 1 - u_{i'}``.
    """
    _require_marks(env)
    coin_key = as_key(seed_key).child("skeleton")
    n = len(env)
    parent = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        cands = events_covering(env.y[i], env.t_begin, env.t[i], env)
        cands = cands[cands < i]
        if cands.size == 0:
            continue
        H = coin_key.coins(i, cands)
        ok = np.flatnonzero(H >= 1.0 - env.u[cands])
        if ok.size:
            parent[i] = cands[ok[-1]]
    return ParentalSkeleton(parent, coin_key)


def build_parental_skeleton_bruteforce(env: Environment, seed_key) -> np.ndarray:
    _require_marks(env)
    coin_key = as_key(seed_key).child("skeleton")
    parent = np.full(len(env), -1, dtype=np.int64)
    for i in range(len(env)):
        for j in range(i - 1, -1, -1):
            inside = geometry.distance(env.y[i], env.z[j], env.domain) <= env.r[j]
            if inside and coin_key.coins(i, j) >= 1.0 - env.u[j]:
                parent[i] = j
                break
    return parent


@dataclass
class AncestralPath:
    """Piecewise-constant location path; ``times`` are forward times of the jumps (descending)."""

    t_sample: float
    start: np.ndarray
    events: list
    times: np.ndarray
    locations: np.ndarray

    @property
    def jump_h(self) -> np.ndarray:
        return self.t_sample - self.times

    def location_at(self, h: float) -> np.ndarray:
        k = int(np.searchsorted(self.jump_h, h, side="right"))
        return self.start if k == 0 else self.locations[k - 1]


def trace_ancestral_line(x, t_sample: float, env: Environment, skeleton: ParentalSkeleton, seed_key) -> AncestralPath:
    """Ancestral line of an individual at ``(t_sample, x)``: entry event, then the skeleton."""
    _require_marks(env)
    x = np.asarray(x, dtype=np.float64).reshape(env.domain.dim)
    coin_key = as_key(seed_key).child("line")
    cands = events_covering(x, env.t_begin, t_sample, env)
    events = []
    if cands.size:
        H = coin_key.coins(cands, 0)
        ok = np.flatnonzero(H >= 1.0 - env.u[cands])
        if ok.size:
            events = skeleton.chain(int(cands[ok[-1]]))
    ev = np.array(events, dtype=np.int64)
    return AncestralPath(
        float(t_sample), x, events,
        env.t[ev] if ev.size else np.zeros(0),
        env.y[ev] if ev.size else np.zeros((0, env.domain.dim)),
    )
