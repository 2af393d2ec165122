"""Genealogies read off the particle system versus the coalescent, in one fixed environment."""
from __future__ import annotations

import math
import time
from typing import Sequence

import numpy as np
from scipy import stats

from ..ancestry import MarkedPartition, run_quenched
from ..environment import Environment
from ..lookdown import TypeKernel, evolve, init_state
from ..parallel import replicate_map
from ..seeding import as_key
from .duality import nearest_distinct
from .report import ExperimentReport, p_check
from .stats import bonferroni, ks_two_sample, two_proportion_z

NO_MERGE = "none"


def _pair_label(groups) -> str:
    """Canonical name of the first coalescence among samples ``1..k`` (e.g. ``"1-2"``)."""
    names = sorted("-".join(str(i) for i in sorted(g)) for g in groups)
    return "+".join(names)


def _genealogy_task(args):
    env, points, t, horizon, n, key = args
    dom = env.domain
    state = init_state(dom, n, TypeKernel.uniform([1.0]), key.child("init"), time=t - horizon)
    run = evolve(state, env, t - horizon, t, None, key.child("evolve"), sync=False)
    idx = nearest_distinct(state.pos, points, dom)
    merges, _ = run.lineages(idx, horizon)
    if merges:
        h_l = merges[0][0]
        pair_l = _pair_label([[p + 1 for p in g] for g in merges[0][2]])
    else:
        h_l, pair_l = math.inf, NO_MERGE
    k = len(points)
    traj = run_quenched(MarkedPartition.singletons(state.pos[idx]), env, t, horizon, key.child("coalescent"),
                        stop_blocks=k - 1)
    h_c, pair_c = math.inf, NO_MERGE
    for rec in traj.records:
        groups = [g for g in rec.merged if len(g) > 1]
        if groups:
            # before the first merge every block is a singleton, so block keys are sample labels
            h_c, pair_c = rec.h, _pair_label([list(g) for g in groups])
            break
    return h_l, pair_l, h_c, pair_c


def lookdown_vs_coalescent_check(env: Environment, points: Sequence[Sequence[float]], t: float, horizon: float,
                                 n: float, replicates: int, seed_key, workers: int = 1,
                                 alpha: float = 0.01) -> ExperimentReport:
    """First-merge law of ``k`` particles read at ``t`` versus the coalescent from their positions."""
    k = len(points)
    if k not in (2, 3):
        raise ValueError("genealogy comparison supports k = 2 or 3")
    key = as_key(seed_key)
    t0 = time.perf_counter()
    pts = [tuple(float(v) for v in p) for p in points]
    res = replicate_map(_genealogy_task, [(env, pts, t, horizon, n, key.child("rep", r)) for r in range(replicates)],
                        workers)
    h_l = np.array([r[0] for r in res])
    h_c = np.array([r[2] for r in res])
    fin_l, fin_c = h_l[np.isfinite(h_l)], h_c[np.isfinite(h_c)]
    n_tests = 2 if k == 2 else 3
    a_each = bonferroni(alpha, n_tests)
    params = {"environment_sha256": env.digest(), "points": [list(p) for p in pts], "t": t, "horizon": horizon,
              "n": n, "replicates": replicates, "alpha": alpha, "alpha_per_test": a_each}
    report = ExperimentReport("lookdown-vs-coalescent", str(key), params)
    report.estimates.update(merge_fraction_lookdown=float(fin_l.size / replicates),
                            merge_fraction_coalescent=float(fin_c.size / replicates))
    report.raw.update(first_merge_lookdown=h_l.tolist(), first_merge_coalescent=h_c.tolist())
    if fin_l.size and fin_c.size:
        d, p = ks_two_sample(fin_l, fin_c)
    else:
        d, p = 0.0, 1.0 if fin_l.size == fin_c.size else 0.0
    report.checks.append(p_check("first_merge_time_ks", "ks", d, p, a_each,
                                 n_lookdown=int(fin_l.size), n_coalescent=int(fin_c.size)))
    z = two_proportion_z(fin_l.size, replicates, fin_c.size, replicates)
    pz = 1.0 if not math.isfinite(z) and fin_l.size == fin_c.size else float(2 * stats.norm.sf(abs(z)))
    report.checks.append(p_check("merge_by_horizon_proportion", "z", z, pz, a_each))
    if k == 3:
        cats = sorted({r[1] for r in res} | {r[3] for r in res})
        table = np.array([[sum(1 for r in res if r[1] == c) for c in cats],
                          [sum(1 for r in res if r[3] == c) for c in cats]])
        table = table[:, table.sum(axis=0) > 0]
        if table.shape[1] > 1:
            chi = stats.chi2_contingency(table)
            stat, pc = float(chi.statistic), float(chi.pvalue)
        else:
            stat, pc = 0.0, 1.0
        report.checks.append(p_check("merged_pair_identity", "chi2", stat, pc, a_each, categories=cats))
    report.runtime = time.perf_counter() - t0
    return report
