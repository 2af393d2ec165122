"""Total variation of ``t ↦ <M^n_t, f>`` against the event-count bound."""
from __future__ import annotations

import time
from typing import Optional, Sequence

import numpy as np

from .. import geometry
from ..environment import Environment
from ..lookdown import BoxFunction, TypeKernel, evolve, init_state
from ..mutation import MutationModel
from ..parallel import replicate_map
from ..seeding import as_key
from .report import Check, ExperimentReport


class TestFunction:
    """``f(x, κ) = F(x) g(κ)`` with ``F`` a box indicator or tent bump."""

    __test__ = False  # not a pytest class

    def __init__(self, F: BoxFunction, g: Sequence[float]):
        self.F = F
        self.g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(self.g)):
            raise ValueError("type weights must be finite")

    @property
    def sup_norm(self) -> float:
        return self.F.sup_norm * float(np.max(np.abs(self.g))) if self.g.size else 0.0

    def support_volume(self, dom) -> float:
        return float(np.prod(np.minimum(2.0 * np.array(self.F.half), dom.L)))

    def integrate(self, state) -> float:
        if len(state) == 0:
            return 0.0
        return float(np.sum(self.F(state.pos, state.domain) * self.g[state.types])) / state.n

    def to_dict(self) -> dict:
        return {"center": list(self.F.center), "half_widths": list(self.F.half), "shape": self.F.shape,
                "g": self.g.tolist()}


def upsilon(env: Environment, f: TestFunction, T: float) -> float:
    """``Σ_{events ≤ T} u · Vol(B(z, r) ∩ S_f)``, with exact ball/box areas."""
    if env.model.variant == "gaussian":
        raise ValueError("the bound is implemented for ball-shaped events only")
    total = 0.0
    for i in env.events_between(env.t_begin, T):
        total += env.u[i] * geometry.ball_box_volume(env.z[i], env.r[i], f.F.lo, f.F.hi, env.domain)
    return float(total)


def total_variation(env: Environment, f: TestFunction, n: float, T: float, kernel: TypeKernel, key) -> float:
    state = init_state(env.domain, n, kernel, key.child("init"), time=env.t_begin)
    tv = [0.0]

    def watch(st, outcome):
        # only the hit particles move or change type
        a = outcome.affected
        if a.size:
            new = np.sum(f.F(st.pos[a], st.domain) * f.g[st.types[a]])
            old = np.sum(f.F(outcome.prev_pos, st.domain) * f.g[outcome.prev_types])
            tv[0] += abs(new - old) / st.n

    evolve(state, env, env.t_begin, T, None, key.child("evolve"), observer=watch)
    return tv[0]


def _tv_task(args):
    env, f, n, T, kernel, key = args
    return total_variation(env, f, n, T, kernel, key)


def variation_bound_check(env: Environment, f: TestFunction, n: float, T: float, replicates: int, seed_key,
                          kernel: Optional[TypeKernel] = None, mutation: Optional[MutationModel] = None,
                          workers: int = 1) -> ExperimentReport:
    """Every replicate must satisfy ``TV ≤ 2 ||f||_∞ Υ_T``."""
    if mutation is not None and not mutation.is_trivial:
        raise ValueError("the variation bound is stated without mutation")
    key = as_key(seed_key)
    t0 = time.perf_counter()
    kernel = kernel if kernel is not None else TypeKernel.uniform(np.full(len(f.g), 1.0 / len(f.g)))
    ups = upsilon(env, f, T)
    bound = 2.0 * f.sup_norm * ups
    tvs = np.array(replicate_map(_tv_task, [(env, f, n, T, kernel, key.child("rep", r)) for r in range(replicates)], workers))
    ok = int(np.count_nonzero(tvs <= bound))
    params = {"environment_sha256": env.digest(), "events": int(env.events_between(env.t_begin, T).size),
              "test_function": f.to_dict(), "n": n, "T": T, "replicates": replicates, "kernel": kernel.to_dict()}
    report = ExperimentReport("variation", str(key), params)
    report.estimates.update(upsilon=ups, bound=bound, max_total_variation=float(tvs.max()) if tvs.size else 0.0,
                            mean_total_variation=float(tvs.mean()) if tvs.size else 0.0, replicates_within_bound=ok)
    report.raw["total_variation"] = tvs.tolist()
    report.checks.append(Check("total_variation_within_bound", "bound", ok == replicates,
                               statistic=float(tvs.max()) if tvs.size else 0.0, threshold=bound,
                               detail={"replicates_within_bound": ok, "replicates": replicates}))
    report.runtime = time.perf_counter() - t0
    return report
