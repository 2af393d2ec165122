"""Forward particle system with levels.

Particles sit on ``domain × [0, n]``; levels are fixed for ever. At an event
each particle in range is hit with the event's impact; the hit particle of
lowest level is the parent, and every hit particle takes the parent's type
and is scattered over the event's range. Particles are stored sorted by
level, so "lowest level" is simply "smallest index".

Mutation is applied lazily: each particle remembers the time its type was
last brought up to date and is evolved only when read. Because particles
mutate independently, this has the same law as evolving everyone between
every pair of events.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import geometry
from .environment import Environment, EventModel, sample_gaussian_kernel
from .geometry import Domain
from .mutation import MutationModel, evolve_types
from .seeding import SeedLike, as_generator


# --------------------------------------------------------------------------
# initial type kernels


@dataclass(frozen=True, eq=False)
class TypeKernel:
    """Type distribution as a function of location.

    ``probs`` has shape ``(q,)`` for a spatially uniform kernel, or
    ``(c_0, [c_1,] q)`` for a kernel constant on a regular grid of cells.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim < 1 or np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("every cell of a type kernel must hold a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, probs: Sequence[float]) -> "TypeKernel":
        return cls(np.asarray(probs, dtype=np.float64))

    @classmethod
    def delta(cls, kappa: int, q: int = 2) -> "TypeKernel":
        p = np.zeros(q)
        p[kappa] = 1.0
        return cls(p)

    @classmethod
    def piecewise(cls, grid) -> "TypeKernel":
        return cls(np.asarray(grid, dtype=np.float64))

    @classmethod
    def half_space(cls, dim: int, left: Sequence[float], right: Sequence[float]) -> "TypeKernel":
        """``left`` on ``x_0 < L_0/2``, ``right`` on the rest."""
        grid = np.array([left, right], dtype=np.float64)
        if dim == 2:
            grid = grid[:, None, :]
        return cls(grid)

    @property
    def q(self) -> int:
        return self.probs.shape[-1]

    @property
    def is_uniform(self) -> bool:
        return self.probs.ndim == 1

    def cell_probs(self, points, dom: Domain) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, dom.dim)
        if self.is_uniform:
            return np.broadcast_to(self.probs, (len(pts), self.q))
        shape = self.probs.shape[:-1]
        if len(shape) != dom.dim:
            raise ValueError(f"type kernel grid has {len(shape)} axes but the domain has dimension {dom.dim}")
        idx = []
        for a, c in enumerate(shape):
            i = np.floor(pts[:, a] / dom.L[a] * c).astype(np.int64)
            idx.append(np.clip(i, 0, c - 1))
        return self.probs[tuple(idx)]

    def sample(self, points, dom: Domain, rng: np.random.Generator) -> np.ndarray:
        P = self.cell_probs(points, dom)
        if len(P) == 0:
            return np.zeros(0, dtype=np.int64)
        cum = np.cumsum(P, axis=1)
        cum[:, -1] = 1.0
        u = rng.random(len(P))
        return np.minimum((cum < u[:, None]).sum(axis=1), self.q - 1).astype(np.int64)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}


# --------------------------------------------------------------------------
# state


@dataclass
class LookdownState:
    domain: Domain
    n: float
    levels: np.ndarray
    pos: np.ndarray
    types: np.ndarray
    type_time: np.ndarray
    time: float

    def __len__(self) -> int:
        return len(self.levels)

    def copy(self) -> "LookdownState":
        return LookdownState(self.domain, self.n, self.levels.copy(), self.pos.copy(),
                             self.types.copy(), self.type_time.copy(), self.time)

    def truncate(self, n_prime: float) -> "LookdownState":
        """Sub-system of the particles with level at most ``n_prime``."""
        if n_prime > self.n:
            raise ValueError(f"cannot raise the truncation from {self.n} to {n_prime}")
        m = int(np.searchsorted(self.levels, n_prime, side="right"))
        return LookdownState(self.domain, float(n_prime), self.levels[:m].copy(), self.pos[:m].copy(),
                             self.types[:m].copy(), self.type_time[:m].copy(), self.time)

    def sync_types(self, mutation: Optional[MutationModel], rng: np.random.Generator, idx=None) -> None:
        """Bring the types of ``idx`` (default: everyone) up to the current time."""
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx, dtype=np.int64)
        if mutation is not None and not mutation.is_trivial and idx.size:
            self.types[idx] = evolve_types(self.types[idx], self.time - self.type_time[idx], mutation, rng)
        self.type_time[idx] = self.time

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["level"] + [f"x{a}" for a in range(self.domain.dim)] + ["type"]
        buf.write(",".join(cols) + "\n")
        for lv, p, k in zip(self.levels, self.pos, self.types):
            buf.write(",".join([repr(float(lv))] + [repr(float(v)) for v in p] + [str(int(k))]) + "\n")
        return buf.getvalue()


def init_state(dom: Domain, n: float, kernel: TypeKernel, seed: SeedLike, time: float = 0.0) -> LookdownState:
    """Poisson particles of intensity ``dx ⊗ dℓ`` on ``dom × [0, n]``, typed by ``kernel``."""
    if not (n > 0 and np.isfinite(n)):
        raise ValueError(f"truncation level must be positive and finite, got {n}")
    if not np.isfinite(dom.volume):
        raise ValueError("the particle system needs a domain of finite volume")
    rng = as_generator(seed)
    m = int(rng.poisson(n * dom.volume))
    pos = dom.uniform(rng, m)
    levels = n * rng.random(m)
    order = np.argsort(levels, kind="stable")
    levels, pos = levels[order], pos[order]
    types = kernel.sample(pos, dom, rng)
    return LookdownState(dom, float(n), levels, pos, types, np.full(m, float(time)), float(time))


# --------------------------------------------------------------------------
# events


@dataclass
class EventOutcome:
    """What one event did to the particle system (indices are level ranks)."""

    event_id: int
    t: float
    affected: np.ndarray
    parent_of: np.ndarray
    parents: np.ndarray
    parent_locations: np.ndarray
    prev_pos: Optional[np.ndarray] = None
    prev_types: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "t": self.t,
            "n_affected": int(self.affected.size),
            "parents": [int(p) for p in self.parents],
        }


def _empty_outcome(e: int, t: float, dim: int) -> EventOutcome:
    z = np.zeros(0, dtype=np.int64)
    return EventOutcome(e, t, z, z, z, np.zeros((0, dim)))


def _event_fields(e):
    """Accept an :class:`Event` or a ``(t, z, r, u[, n_parents])`` tuple."""
    if hasattr(e, "z"):
        return float(e.t), np.asarray(e.z, dtype=np.float64), float(e.r), float(e.u), e.n_parents, getattr(e, "index", -1)
    t, z, r, u, *rest = e
    return float(t), np.asarray(z, dtype=np.float64), float(r), float(u), (rest[0] if rest else None), -1


def _advance(state: LookdownState, t: float) -> None:
    if t < state.time:
        raise ValueError(f"event at {t} is earlier than the state time {state.time}")
    state.time = t


def _commit(state, affected, parent_of, new_pos, mutation, rng):
    prev = (state.pos[affected].copy(), state.types[affected].copy())
    parents = np.unique(parent_of)
    state.sync_types(mutation, rng, parents)
    state.types[affected] = state.types[parent_of]
    state.type_time[affected] = state.time
    state.pos[affected] = new_pos
    return prev


def apply_event(state: LookdownState, e, seed: SeedLike, mutation: Optional[MutationModel] = None) -> EventOutcome:
    """Ball event: u-coins in the ball, lowest affected level is the parent, hit particles resettle uniformly."""
    rng = as_generator(seed)
    t, z, r, u, _, eid = _event_fields(e)
    _advance(state, t)
    dom = state.domain
    inside = np.flatnonzero(geometry.sq_distances(state.pos, z, dom) <= r * r)
    if inside.size == 0:
        return _empty_outcome(eid, t, dom.dim)
    affected = inside[rng.random(inside.size) < u]
    if affected.size == 0:
        return _empty_outcome(eid, t, dom.dim)
    parent = affected[0]
    parent_loc = state.pos[parent].copy()
    parent_of = np.full(affected.size, parent)
    new_pos = geometry.sample_uniform_ball(z, r, dom, rng, size=affected.size)
    prev = _commit(state, affected, parent_of, new_pos, mutation, rng)
    return EventOutcome(eid, t, affected, parent_of, np.array([parent]), parent_loc[None, :], *prev)


def apply_event_multi_parent(state: LookdownState, e, seed: SeedLike,
                             mutation: Optional[MutationModel] = None) -> EventOutcome:
    """Ball event with ``N_i`` parents: the ``N_i`` lowest affected levels; each hit particle picks one uniformly."""
    rng = as_generator(seed)
    t, z, r, u, n_par, eid = _event_fields(e)
    n_par = 1 if n_par is None else int(n_par)
    if n_par < 1:
        raise ValueError("an event needs at least one parent")
    _advance(state, t)
    dom = state.domain
    inside = np.flatnonzero(geometry.sq_distances(state.pos, z, dom) <= r * r)
    if inside.size == 0:
        return _empty_outcome(eid, t, dom.dim)
    affected = inside[rng.random(inside.size) < u]
    if affected.size == 0:
        return _empty_outcome(eid, t, dom.dim)
    parents = affected[: min(n_par, affected.size)]
    if n_par == 1:
        parent_of = np.full(affected.size, parents[0])
    else:
        parent_of = parents[rng.integers(0, parents.size, size=affected.size)]
    parent_loc = state.pos[parents].copy()
    new_pos = geometry.sample_uniform_ball(z, r, dom, rng, size=affected.size)
    prev = _commit(state, affected, parent_of, new_pos, mutation, rng)
    return EventOutcome(eid, t, affected, parent_of, parents, parent_loc, *prev)


def apply_event_gaussian(state: LookdownState, e, model: EventModel, seed: SeedLike,
                         mutation: Optional[MutationModel] = None) -> EventOutcome:
    """Gaussian event.

    Hit with probability ``u0 exp(-|z-x|^2 / 2θ^2)``. The parent is the lowest
    level of an independent thinning with keep probability
    ``exp(-|z-x|^2 / 2α^2θ^2)``; its position is redrawn from ``v(z, .)``.
    Hit particles resettle from the normalised truncated impact profile.
    """
    if model.variant != "gaussian":
        raise ValueError(f"apply_event_gaussian needs a gaussian event model, got {model.variant!r}")
    rng = as_generator(seed)
    t, z, r, u, _, eid = _event_fields(e)
    _advance(state, t)
    dom = state.domain
    theta = r
    sq = geometry.sq_distances(state.pos, z, dom)
    reach = model.truncation * theta
    near = np.flatnonzero(sq <= reach * reach)
    p_hit = u * np.exp(-sq[near] / (2.0 * theta * theta))
    affected = near[rng.random(near.size) < p_hit]
    if affected.size == 0:
        return _empty_outcome(eid, t, dom.dim)
    v_reach = model.truncation * max(1.0, model.alpha) * theta
    cand = np.flatnonzero(sq <= v_reach * v_reach)
    keep = cand[rng.random(cand.size) < np.exp(-sq[cand] / (2.0 * (model.alpha * theta) ** 2))]
    if keep.size == 0:
        # no retained particle can serve as parent: truncation artefact, event is void
        return _empty_outcome(eid, t, dom.dim)
    parent = keep[0]
    state.pos[parent] = sample_gaussian_kernel(z, model.alpha * theta, dom, rng)
    parent_loc = state.pos[parent].copy()
    parent_of = np.full(affected.size, parent)
    new_pos = sample_gaussian_kernel(z, theta, dom, rng, size=affected.size, cutoff=reach)
    prev = _commit(state, affected, parent_of, new_pos, mutation, rng)
    return EventOutcome(eid, t, affected, parent_of, np.array([parent]), parent_loc[None, :], *prev)


def apply_any(state: LookdownState, e, model: EventModel, rng: np.random.Generator,
              mutation: Optional[MutationModel] = None) -> EventOutcome:
    if model.variant == "gaussian":
        return apply_event_gaussian(state, e, model, rng, mutation)
    if model.variant == "multi_parent_ball":
        return apply_event_multi_parent(state, e, rng, mutation)
    return apply_event(state, e, rng, mutation)


# --------------------------------------------------------------------------
# evolution and genealogy readout


@dataclass
class LookdownRun:
    state: LookdownState
    t0: float
    t1: float
    outcomes: List[EventOutcome] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(o.to_dict(), sort_keys=True) + "\n" for o in self.outcomes)

    def lineages(self, particles: Sequence[int], horizon: Optional[float] = None):
        """Backward genealogy of the given particles (read at ``t1``).

        Returns ``(merges, current)``: the list of ``(h, event_id, groups)`` at
        which lineages coalesced (groups are tuples of positions in
        ``particles``), and the particle each lineage follows at the end.
        """
        cur = np.array(particles, dtype=np.int64)
        h_max = self.t1 - self.t0 if horizon is None else horizon
        merges = []
        for o in reversed(self.outcomes):
            h = self.t1 - o.t
            if h > h_max:
                break
            if o.affected.size == 0:
                continue
            pos = np.searchsorted(o.affected, cur)
            pos = np.minimum(pos, o.affected.size - 1)
            hit = o.affected[pos] == cur
            if not hit.any():
                continue
            before = cur.copy()
            cur[hit] = o.parent_of[pos[hit]]
            groups = {}
            for i, c in enumerate(cur):
                groups.setdefault(int(c), []).append(i)
            new = [tuple(g) for g in groups.values()
                   if len(g) > 1 and len(set(before[list(g)].tolist())) > 1]
            if new:
                merges.append((h, o.event_id, new))
        return merges, cur

    def first_merge_time(self, particles: Sequence[int], horizon: Optional[float] = None) -> float:
        merges, _ = self.lineages(particles, horizon)
        return merges[0][0] if merges else np.inf


def evolve(state: LookdownState, env: Environment, t0: float, t1: float,
           mutation: Optional[MutationModel], seed: SeedLike,
           observer: Optional[Callable[[LookdownState, EventOutcome], None]] = None,
           sync: bool = True) -> LookdownRun:
    """Run the particle system through the events of ``env`` in ``(t0, t1]``.

    ``observer`` (if given) sees the state after every event; with
    ``sync`` every type is brought up to ``t1`` at the end.
    """
    eps = 1e-12 * max(1.0, abs(env.t_begin), abs(env.t_end))
    if t0 > t1 or t0 < env.t_begin - eps or t1 > env.t_end + eps:
        raise ValueError(f"interval ({t0}, {t1}] is not inside the environment window {env.window}")
    if abs(state.time - t0) > eps:
        raise ValueError(f"state is at time {state.time}, expected {t0}")
    if state.domain != env.domain:
        raise ValueError("state and environment live on different domains")
    rng = as_generator(seed)
    run = LookdownRun(state, float(t0), float(t1))
    for i in env.events_between(t0, t1):
        out = apply_any(state, env.event(int(i)), env.model, rng, mutation)
        run.outcomes.append(out)
        if observer is not None:
            observer(state, out)
    state.time = float(t1)
    if sync:
        state.sync_types(mutation, rng)
    return run


# --------------------------------------------------------------------------
# empirical integrals


@dataclass(frozen=True)
class BoxFunction:
    """Box indicator or tent bump centred at ``center`` with half-widths ``half``.

    On the torus the box is taken around ``center`` with wrapped distances.
    """

    center: tuple
    half: tuple
    shape: str = "indicator"

    def __post_init__(self):
        if self.shape not in ("indicator", "bump"):
            raise ValueError(f"unknown spatial factor shape {self.shape!r}")
        if len(self.center) != len(self.half) or any(h <= 0 for h in self.half):
            raise ValueError("box centre and positive half-widths must have the same dimension")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half", tuple(float(h) for h in self.half))

    @classmethod
    def from_bounds(cls, lo, hi, shape: str = "indicator") -> "BoxFunction":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        return cls(tuple((lo + hi) / 2), tuple((hi - lo) / 2), shape)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.center) - np.array(self.half)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.center) + np.array(self.half)

    @property
    def sup_norm(self) -> float:
        return 1.0

    def __call__(self, points, dom: Domain) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, dom.dim)
        d = geometry.displacement(pts, np.array(self.center), dom) if dom.periodic \
            else np.abs(pts - np.array(self.center))
        scaled = d / np.array(self.half)
        if self.shape == "indicator":
            return np.all(scaled <= 1.0, axis=1).astype(np.float64)
        return np.prod(np.clip(1.0 - scaled, 0.0, None), axis=1)


def empirical_integral(state: LookdownState, F, g, k: int = 1) -> float:
    """``<(M^n)^{⊗k}, F ⊗ G_g>`` with ``M^n = n^{-1} Σ δ_(ζ, κ)``.

    ``F`` is a single spatial factor or a list of ``k`` of them, so the
    ``k``-fold sum over particles factorises. ``g`` is a per-type weight
    vector or a list of ``k`` of them.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    Fs = list(F) if isinstance(F, (list, tuple)) else [F] * k
    gs = [np.asarray(x, dtype=np.float64) for x in g] if _is_list_of_vectors(g) else [np.asarray(g, dtype=np.float64)] * k
    if len(Fs) != k or len(gs) != k:
        raise ValueError(f"expected {k} spatial factors and {k} type weights")
    if len(state) == 0:
        return 0.0
    total = 1.0
    for f, w in zip(Fs, gs):
        total *= float(np.sum(f(state.pos, state.domain) * w[state.types])) / state.n
    return total


def empirical_integral_bruteforce(state: LookdownState, F: Callable, g, k: int) -> float:
    """Direct ``k``-fold sum for a general ``F(x_1, ..., x_k)`` (small states only)."""
    gs = [np.asarray(x, dtype=np.float64) for x in g] if _is_list_of_vectors(g) else [np.asarray(g, dtype=np.float64)] * k
    m = len(state)
    total = 0.0
    for idx in np.ndindex(*([m] * k)):
        w = 1.0
        for i, j in enumerate(idx):
            w *= gs[i][state.types[j]]
        if w:
            total += w * F(*[state.pos[j] for j in idx])
    return total / state.n ** k


def _is_list_of_vectors(g) -> bool:
    return isinstance(g, (list, tuple)) and len(g) > 0 and np.ndim(g[0]) == 1
