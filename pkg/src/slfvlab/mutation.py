"""Finite-state mutation chains, simulated exactly by uniformization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .seeding import SeedLike, as_generator

MAX_TYPES = 256


@dataclass(frozen=True, eq=False)
class MutationModel:
    """Continuous-time Markov chain on ``{0, ..., q-1}`` given by its rate matrix."""

    generator: np.ndarray

    def __post_init__(self):
        Q = np.array(self.generator, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise ValueError("generator must be a square matrix")
        if Q.shape[0] > MAX_TYPES:
            raise ValueError(f"at most {MAX_TYPES} types are supported")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be non-negative")
        if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("generator rows must sum to zero")
        Q.setflags(write=False)
        object.__setattr__(self, "generator", Q)

    @classmethod
    def none(cls, q: int = 2) -> "MutationModel":
        return cls(np.zeros((q, q)))

    @classmethod
    def flip(cls, rate: float) -> "MutationModel":
        """Two types, each switching to the other at ``rate``."""
        return cls(np.array([[-rate, rate], [rate, -rate]], dtype=np.float64))

    @classmethod
    def parent_independent(cls, rate: float, target: Sequence[float]) -> "MutationModel":
        """At ``rate``, the type is redrawn from ``target`` (possibly unchanged)."""
        pi = np.asarray(target, dtype=np.float64)
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("target distribution must be non-negative and sum to 1")
        q = len(pi)
        Q = rate * (np.tile(pi, (q, 1)) - np.eye(q))
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return cls(Q)

    @property
    def q(self) -> int:
        return self.generator.shape[0]

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.generator)

    @property
    def uniform_rate(self) -> float:
        return float(np.max(-np.diag(self.generator)))

    def jump_matrix(self) -> np.ndarray:
        lam = self.uniform_rate
        return np.eye(self.q) + self.generator / lam

    def transition_matrix(self, dt: float) -> np.ndarray:
        return expm(self.generator * dt)

    def stationary(self) -> np.ndarray:
        Q = self.generator
        A = np.vstack([Q.T, np.ones(self.q)])
        b = np.zeros(self.q + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(A, b, rcond=None)[0]

    def to_dict(self) -> dict:
        return {"generator": self.generator.tolist()}


def evolve_types(types, dt, model: Optional[MutationModel], rng: np.random.Generator) -> np.ndarray:
    """Run independent copies of the chain from ``types`` for durations ``dt``.

    Uniformization: a Poisson(Λ dt) number of proposals, each a step of the
    jump matrix ``I + Q/Λ``.
    """
    kappa = np.array(types, dtype=np.int64, copy=True).reshape(-1)
    if model is None or model.is_trivial or kappa.size == 0:
        return kappa
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), kappa.shape)
    if np.any(dt < 0):
        raise ValueError("durations must be non-negative")
    lam = model.uniform_rate
    steps = rng.poisson(lam * dt)
    cum = np.cumsum(model.jump_matrix(), axis=1)
    cum[:, -1] = 1.0
    active = np.flatnonzero(steps > 0)
    while active.size:
        u = rng.random(active.size)
        rows = cum[kappa[active]]
        kappa[active] = np.minimum((rows < u[:, None]).sum(axis=1), model.q - 1)
        steps[active] -= 1
        active = active[steps[active] > 0]
    return kappa


def evolve_type(kappa: int, dt: float, model: Optional[MutationModel], seed: SeedLike) -> int:
    if dt < 0:
        raise ValueError("duration must be non-negative")
    if model is not None and not 0 <= kappa < model.q:
        raise ValueError(f"type {kappa} out of range for {model.q} types")
    return int(evolve_types([kappa], dt, model, as_generator(seed))[0])


@dataclass
class Tree:
    """Rooted tree as a parent array; node 0 is the root, ``lengths[i]`` is the branch above ``i``."""

    parent: Sequence[int]
    lengths: Sequence[float]

    def __post_init__(self):
        self.parent = [int(p) for p in self.parent]
        self.lengths = [float(x) for x in self.lengths]
        n = len(self.parent)
        if n == 0 or len(self.lengths) != n:
            raise ValueError("malformed tree: parent and lengths must be non-empty and of equal length")
        if self.parent[0] != -1:
            raise ValueError("malformed tree: node 0 must be the root (parent -1)")
        for i in range(1, n):
            p = self.parent[i]
            if not 0 <= p < n or p == i:
                raise ValueError(f"malformed tree: node {i} has invalid parent {p}")
            if self.lengths[i] < 0:
                raise ValueError(f"malformed tree: negative branch length at node {i}")
        order = self.topological_order()
        if len(order) != n:
            raise ValueError("malformed tree: not connected to the root (cycle?)")

    def children(self):
        ch = [[] for _ in self.parent]
        for i, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(i)
        return ch

    def topological_order(self):
        ch = self.children()
        order, stack = [], [0]
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                break
            seen.add(v)
            order.append(v)
            stack.extend(reversed(ch[v]))
        return order

    @property
    def leaves(self):
        ch = self.children()
        return [i for i in range(len(self.parent)) if not ch[i]]


def run_along_tree(tree: Tree, root_type: int, model: Optional[MutationModel], seed: SeedLike) -> np.ndarray:
    """Types at the leaves (in node order) after evolving independently along every branch."""
    rng = as_generator(seed)
    types = np.full(len(tree.parent), -1, dtype=np.int64)
    types[0] = root_type
    for v in tree.topological_order()[1:]:
        types[v] = evolve_types([types[tree.parent[v]]], tree.lengths[v], model, rng)[0]
    return types[tree.leaves]
