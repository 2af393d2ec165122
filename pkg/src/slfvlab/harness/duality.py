"""Forward (particle system) versus backward (coalescent + mutation) moment estimates."""
from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import geometry
from ..ancestry import MarkedPartition, run_annealed, run_quenched
from ..environment import Environment, EventModel, generate_environment, read_environment, write_environment
from ..geometry import Domain
from ..lookdown import TypeKernel, evolve, init_state
from ..mutation import MutationModel, run_along_tree
from ..parallel import replicate_map
from ..seeding import SeedKey, as_key
from .report import ExperimentReport, z_check
from .stats import mean_se


class InsufficientParticles(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DualitySetup:
    dom: Domain
    model: EventModel
    kernel: TypeKernel
    points: tuple
    g: tuple
    t: float
    n: float
    eps: float = 0.05
    mutation: Optional[MutationModel] = None

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in p) for p in self.points)
        gs = tuple(tuple(float(v) for v in w) for w in self.g)
        if not 1 <= len(pts) <= 4:
            raise ValueError("duality checks take between 1 and 4 sample points")
        if len(gs) != len(pts):
            raise ValueError("need one type-weight vector per sample point")
        if any(len(w) != self.kernel.q for w in gs):
            raise ValueError(f"type weights must have {self.kernel.q} entries")
        if self.mutation is not None and self.mutation.q != self.kernel.q:
            raise ValueError("mutation chain and type kernel disagree on the number of types")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "g", gs)

    @property
    def k(self) -> int:
        return len(self.points)

    def weight(self, types) -> float:
        return float(np.prod([self.g[j][int(types[j])] for j in range(self.k)]))

    def to_dict(self) -> dict:
        return {
            "domain": self.dom.to_dict(),
            "model": self.model.to_dict(),
            "kernel": self.kernel.to_dict(),
            "points": [list(p) for p in self.points],
            "g": [list(w) for w in self.g],
            "t": self.t,
            "n": self.n,
            "epsilon": self.eps,
            "mutation": None if self.mutation is None else self.mutation.to_dict(),
        }


def nearest_distinct(pos: np.ndarray, points, dom: Domain, eps: float = math.inf) -> list:
    """Index of the closest particle to each point, never reusing a particle."""
    chosen = []
    for x in points:
        d2 = geometry.sq_distances(pos, x, dom)
        if chosen:
            d2[chosen] = np.inf
        j = int(np.argmin(d2)) if d2.size else -1
        if j < 0 or not d2[j] <= eps * eps:
            raise InsufficientParticles(
                f"no particle within {eps} of {tuple(x)}; raise the truncation level n")
        chosen.append(j)
    return chosen


def forward_value(setup: DualitySetup, env: Environment, key: SeedKey) -> float:
    state = init_state(setup.dom, setup.n, setup.kernel, key.child("init"), time=0.0)
    evolve(state, env, 0.0, setup.t, setup.mutation, key.child("evolve"))
    idx = nearest_distinct(state.pos, setup.points, setup.dom, setup.eps)
    return setup.weight(state.types[idx])


def _types_from_trajectory(setup: DualitySetup, traj, rng: np.random.Generator) -> np.ndarray:
    types = np.zeros(setup.k, dtype=np.int64)
    for tree, leaf_labels, block in traj.forest():
        root = int(setup.kernel.sample(block.location[None, :], setup.dom, rng)[0])
        leaf_types = run_along_tree(tree, root, setup.mutation, rng)
        for label, kappa in zip(leaf_labels, leaf_types):
            types[label - 1] = kappa
    return types


def backward_value(setup: DualitySetup, env: Optional[Environment], key: SeedKey) -> float:
    start = MarkedPartition.singletons(np.array(setup.points))
    if env is None:
        traj = run_annealed(start, setup.model, setup.dom, setup.t, key.child("coalescent"))
    else:
        traj = run_quenched(start, env, setup.t, setup.t, key.child("coalescent"))
    return setup.weight(_types_from_trajectory(setup, traj, key.child("types").rng()))


def _serialised(env: Environment) -> str:
    buf = io.StringIO()
    write_environment(env, buf)
    return buf.getvalue()


def _quenched_task(args):
    setup, key, w, reps = args
    env = generate_environment(setup.model, (0.0, setup.t), setup.dom, key.child("omega", w))
    text = _serialised(env)
    env_fwd = read_environment(io.StringIO(text))
    env_bwd = read_environment(io.StringIO(text))
    if env_fwd.digest() != env_bwd.digest():
        raise AssertionError("forward and backward arms received different environments")
    fwd = [forward_value(setup, env_fwd, key.child("forward", w, r)) for r in range(reps)]
    bwd = [backward_value(setup, env_bwd, key.child("backward", w, r)) for r in range(reps)]
    return env_fwd.digest(), len(env), fwd, bwd


def _annealed_task(args):
    setup, key, r = args
    env = generate_environment(setup.model, (0.0, setup.t), setup.dom, key.child("omega-forward", r))
    return forward_value(setup, env, key.child("forward", r)), backward_value(setup, None, key.child("backward", r))


def duality_check(setup: DualitySetup, environments: int, replicates: int, seed_key,
                  workers: int = 1, mode: str = "quenched", band: float = 3.0) -> ExperimentReport:
    """Compare forward and backward estimates of ``E[Π g_j(type at x_j)]`` at time ``t``.

    ``quenched``: ``environments`` shared environments, ``replicates`` runs of
    each arm per environment, paired per environment. ``annealed``:
    ``environments * replicates`` independent draws, fresh ω on each side.
    """
    key = as_key(seed_key)
    t_start = time.perf_counter()
    params = dict(setup.to_dict(), mode=mode, environments=environments, replicates=replicates, z_band=band)
    report = ExperimentReport("duality", str(key), params)
    if mode == "quenched":
        results = replicate_map(_quenched_task, [(setup, key, w, replicates) for w in range(environments)], workers)
        f_means = np.array([np.mean(r[2]) for r in results])
        b_means = np.array([np.mean(r[3]) for r in results])
        diff = f_means - b_means
        d_mean, d_se = mean_se(diff)
        f_all = np.concatenate([r[2] for r in results])
        b_all = np.concatenate([r[3] for r in results])
        report.estimates.update(
            forward_mean=float(f_all.mean()), backward_mean=float(b_all.mean()),
            paired_difference=d_mean, paired_difference_se=d_se,
            events_per_environment=float(np.mean([r[1] for r in results])),
        )
        report.raw.update(forward_per_env=f_means.tolist(), backward_per_env=b_means.tolist())
        report.estimates["environment_digests_sha256"] = [r[0] for r in results[:5]]
        report.checks.append(z_check("forward_minus_backward", d_mean, d_se, 0.0,
                                     "self-consistency: both arms estimate the same moment", band))
    elif mode == "annealed":
        n = environments * replicates
        results = replicate_map(_annealed_task, [(setup, key, r) for r in range(n)], workers)
        f = np.array([r[0] for r in results])
        b = np.array([r[1] for r in results])
        fm, fse = mean_se(f)
        bm, bse = mean_se(b)
        se = math.hypot(fse, bse)
        report.estimates.update(forward_mean=fm, forward_se=fse, backward_mean=bm, backward_se=bse)
        report.raw.update(forward=f.tolist(), backward=b.tolist())
        report.checks.append(z_check("forward_minus_backward", fm - bm, se, 0.0,
                                     "self-consistency: both arms estimate the same moment", band))
    else:
        raise ValueError(f"mode must be 'quenched' or 'annealed', got {mode!r}")
    report.runtime = time.perf_counter() - t_start
    return report


def duality_refinement(setup: DualitySetup, levels: Sequence[tuple], environments: int, replicates: int,
                       seed_key, workers: int = 1) -> list:
    """Re-run the quenched check for several ``(n, eps)`` pairs to expose the readout bias trend."""
    key = as_key(seed_key)
    out = []
    for i, (n, eps) in enumerate(levels):
        s = DualitySetup(setup.dom, setup.model, setup.kernel, setup.points, setup.g, setup.t, n, eps, setup.mutation)
        out.append(duality_check(s, environments, replicates, key.child("refine", i), workers))
    return out
