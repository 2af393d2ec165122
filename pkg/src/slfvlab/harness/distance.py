"""A vague-topology distance between weighted point measures on ``domain × types``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..environment import Environment
from ..geometry import Domain
from ..lookdown import LookdownState, TypeKernel, evolve, init_state
from ..parallel import replicate_map
from ..seeding import as_key
from .report import Check, ExperimentReport


@dataclass
class WeightedPointMeasure:
    domain: Domain
    points: np.ndarray
    types: np.ndarray
    weights: np.ndarray
    q: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, self.domain.dim)
        self.types = np.asarray(self.types, dtype=np.int64).reshape(-1)
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), self.types.shape).copy()
        if not (len(self.points) == len(self.types)):
            raise ValueError("points and types must have the same length")
        if self.types.size and (self.types.min() < 0 or self.types.max() >= self.q):
            raise ValueError(f"types must lie in 0..{self.q - 1}")

    @classmethod
    def from_state(cls, state: LookdownState, q: int) -> "WeightedPointMeasure":
        """``M^n = n^{-1} Σ_{ℓ_j ≤ n} δ_(ζ_j, κ_j)``."""
        return cls(state.domain, state.pos, state.types, 1.0 / state.n, q)


def basis_integrals(m: WeightedPointMeasure, n_terms: int) -> np.ndarray:
    """``<m, g_1>, ..., <m, g_N>`` for the dyadic family.

    ``g`` runs over level ``j = 0, 1, ...``; within a level over the
    ``2^{j d}`` half-open dyadic cells (row-major) and, per cell, over the
    types. The list is cut after ``n_terms`` entries.
    """
    dom = m.domain
    out = np.zeros(n_terms)
    filled, level = 0, 0
    while filled < n_terms:
        cells_per_axis = 2 ** level
        idx = np.zeros(len(m.types), dtype=np.int64)
        for a in range(dom.dim):
            c = np.floor(m.points[:, a] / dom.L[a] * cells_per_axis).astype(np.int64)
            idx = idx * cells_per_axis + np.clip(c, 0, cells_per_axis - 1)
        n_cells = cells_per_axis ** dom.dim
        vals = np.bincount(idx * m.q + m.types, weights=m.weights, minlength=n_cells * m.q)
        take = min(vals.size, n_terms - filled)
        out[filled:filled + take] = vals[:take]
        filled += take
        level += 1
    return out


def measure_distance(A: WeightedPointMeasure, B: WeightedPointMeasure, n_terms: int = 64) -> float:
    """``Σ_{i ≤ N_b} 2^{-i} |<A, g_i> - <B, g_i>|``."""
    if A.domain != B.domain or A.q != B.q:
        raise ValueError("measures live on different spaces")
    w = 0.5 ** np.arange(1, n_terms + 1)
    return float(np.sum(w * np.abs(basis_integrals(A, n_terms) - basis_integrals(B, n_terms))))


def _convergence_task(args):
    env, kernel, n_values, t, n_terms, key = args
    top = 2 * max(n_values)
    state = init_state(env.domain, top, kernel, key.child("init"), time=env.t_begin)
    evolve(state, env, env.t_begin, t, None, key.child("evolve"))
    q = kernel.q
    out = []
    for n in n_values:
        a = WeightedPointMeasure.from_state(state.truncate(n), q)
        b = WeightedPointMeasure.from_state(state.truncate(2 * n), q)
        out.append(measure_distance(a, b, n_terms))
    return out


def convergence_diagnostic(env: Environment, kernel: TypeKernel, n_values: Sequence[float], t: float,
                           replicates: int, seed_key, n_terms: int = 64, workers: int = 1) -> ExperimentReport:
    """Mean ``d(M^n_t, M^{2n}_t)`` over replicates must decrease strictly along ``n_values``.

    Both measures come from one run at cutoff ``2 max(n)``: the particles of
    level at most ``n`` form an exact copy of the system truncated at ``n``.
    """
    key = as_key(seed_key)
    t0 = time.perf_counter()
    n_values = [float(n) for n in n_values]
    res = np.array(replicate_map(_convergence_task,
                                 [(env, kernel, n_values, t, n_terms, key.child("rep", r)) for r in range(replicates)],
                                 workers))
    means = res.mean(axis=0).tolist()
    params = {"environment_sha256": env.digest(), "n_values": n_values, "t": t, "replicates": replicates,
              "basis_terms": n_terms, "kernel": kernel.to_dict()}
    report = ExperimentReport("convergence", str(key), params)
    report.estimates["mean_distance"] = means
    for i, n in enumerate(n_values):
        report.raw[f"distance_n{int(n)}"] = res[:, i].tolist()
    report.checks.append(Check("distance_strictly_decreasing", "trend",
                               all(b < a for a, b in zip(means, means[1:])), detail={"mean_distance": means}))
    report.runtime = time.perf_counter() - t0
    return report
