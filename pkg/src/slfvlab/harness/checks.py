"""Single-lineage, pair, particle-count and bridge checks with closed-form oracles."""
from __future__ import annotations

import math
import time
from typing import Sequence

import numpy as np
from scipy import stats

from .. import bridges, geometry
from ..ancestry import MarkedPartition, run_annealed, run_quenched
from ..environment import Environment, EventModel, events_covering, jump_rate
from ..geometry import Domain
from ..lookdown import TypeKernel, evolve, init_state
from ..parallel import replicate_map
from ..seeding import as_key
from .report import Check, ExperimentReport, p_check, z_check
from .stats import bonferroni, dispersion_test, ks_one_sample, mean_se, proportion_se, uniformity_test


# --------------------------------------------------------------------------
# one lineage


def _first_jump_task(args):
    model, dom, x, horizon, key = args
    traj = run_annealed(MarkedPartition.singletons([x]), model, dom, horizon, key, max_records=1)
    return traj.first_jump_time()


def jump_rate_check(model: EventModel, dom: Domain, replicates: int, seed_key, x=None,
                    workers: int = 1, alpha: float = 0.01, band: float = 3.0) -> ExperimentReport:
    """Backward waiting time of one lineage: mean against ``1/J`` and KS against ``Exp(J)``."""
    key = as_key(seed_key)
    t0 = time.perf_counter()
    x = dom.L / 2.0 if x is None else np.asarray(x, dtype=np.float64)
    J = jump_rate(x, model, dom)
    horizon = 60.0 / J  # P(no jump) = e^-60
    times = np.array(replicate_map(_first_jump_task, [(model, dom, x, horizon, key.child("rep", r))
                                                      for r in range(replicates)], workers))
    times = times[np.isfinite(times)]
    est, se = mean_se(times)
    params = {"model": model.to_dict(), "domain": dom.to_dict(), "x": list(map(float, x)), "replicates": replicates,
              "alpha": alpha, "alpha_per_test": bonferroni(alpha, 2), "z_band": band}
    report = ExperimentReport("jump-rate", str(key), params)
    report.estimates.update(jump_rate=J, mean_wait=est, mean_wait_se=se)
    report.raw["first_jump_time"] = times.tolist()
    report.checks.append(z_check("mean_wait", est, se, 1.0 / J, "1/J with J = rate E[u Vol(B(x,r))]", band))
    d, p = ks_one_sample(times, stats.expon(scale=1.0 / J).cdf)
    report.checks.append(p_check("wait_exponential_ks", "ks", d, p, bonferroni(alpha, 2)))
    report.runtime = time.perf_counter() - t0
    return report


# --------------------------------------------------------------------------
# co-located pair


def _pair_task(args):
    env, x, t_sample, horizon, key = args
    traj = run_quenched(MarkedPartition.singletons([x, x]), env, t_sample, horizon, key, max_records=1)
    if not traj.records:
        return -1
    return int(any(len(g) == 2 for g in traj.records[0].merged))


def pair_merge_check(env: Environment, replicates: int, seed_key, x=None, workers: int = 1,
                     band: float = 3.0) -> ExperimentReport:
    """Two lineages at one point: chance that the first event touching either merges both."""
    if env.model.impact_kind != "fixed" or env.model.variant != "ball":
        raise ValueError("the closed form needs the ball model with a fixed impact")
    key = as_key(seed_key)
    t0 = time.perf_counter()
    dom = env.domain
    x = dom.L / 2.0 if x is None else np.asarray(x, dtype=np.float64)
    u = env.model.impact_value
    oracle = u / (2.0 - u)
    res = np.array(replicate_map(_pair_task, [(env, x, env.t_end, env.t_end - env.t_begin, key.child("rep", r))
                                              for r in range(replicates)], workers))
    res = res[res >= 0]
    p = float(res.mean())
    params = {"environment_sha256": env.digest(), "x": list(map(float, x)), "replicates": replicates, "z_band": band}
    report = ExperimentReport("pair-merge", str(key), params)
    report.estimates.update(merge_probability=p, affected_replicates=int(res.size))
    report.checks.append(z_check("first_event_merges_both", p, proportion_se(oracle, res.size), oracle,
                                 "u^2 / (1 - (1-u)^2) = u/(2-u)", band))
    report.runtime = time.perf_counter() - t0
    return report


# --------------------------------------------------------------------------
# particle counts


def poisson_conservation_check(env: Environment, n: float, n_events: int, seed_key, cells: int = 5,
                               cutoffs: Sequence[float] = None, alpha: float = 0.01) -> ExperimentReport:
    """After ``n_events`` events, counts per cell below each level cutoff must look Poisson and uniform."""
    key = as_key(seed_key)
    t0 = time.perf_counter()
    dom = env.domain
    if len(env) < n_events:
        raise ValueError(f"environment has {len(env)} events, fewer than the requested {n_events}")
    t_end = float(env.t[n_events - 1])
    cutoffs = [n / 4.0, n / 2.0, float(n)] if cutoffs is None else [float(c) for c in cutoffs]
    state = init_state(dom, n, TypeKernel.uniform([1.0]), key.child("init"), time=env.t_begin)
    evolve(state, env, env.t_begin, t_end, None, key.child("evolve"), sync=False)
    a_each = bonferroni(alpha, len(cutoffs))
    params = {"environment_sha256": env.digest(), "n": n, "events": n_events, "cells_per_axis": cells,
              "cutoffs": cutoffs, "alpha": alpha, "alpha_per_cutoff": a_each}
    report = ExperimentReport("poisson-conservation", str(key), params)
    for c in cutoffs:
        sub = state.truncate(c)
        idx = np.zeros(len(sub), dtype=np.int64)
        for a in range(dom.dim):
            i = np.clip(np.floor(sub.pos[:, a] / dom.L[a] * cells).astype(np.int64), 0, cells - 1)
            idx = idx * cells + i
        counts = np.bincount(idx, minlength=cells ** dom.dim)
        d, pd = dispersion_test(counts)
        chi, pu = uniformity_test(counts)
        report.checks.append(p_check(f"dispersion_cutoff_{c:g}", "chi2", d, pd, a_each, total=int(counts.sum()),
                                     expected=c * dom.volume))
        report.checks.append(p_check(f"uniformity_cutoff_{c:g}", "chi2", chi, pu, a_each))
    report.runtime = time.perf_counter() - t0
    return report


# --------------------------------------------------------------------------
# bridges


def bridge_identity_check(env: Environment, x, seed_key, grid: int = 100, draws: int = 100_000,
                          min_events: int = 1000, band: float = 3.0) -> ExperimentReport:
    """Mass identity, associativity, one-site flow property and inversion frequencies."""
    key = as_key(seed_key)
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    s, t = env.t_begin, env.t_end
    w = np.linspace(0.0, 1.0, grid)
    params = {"environment_sha256": env.digest(), "x": list(map(float, x)), "grid_points": grid, "draws": draws,
              "z_band": band}
    report = ExperimentReport("bridge-identities", str(key), params)

    ids = events_covering(x, s, t, env)
    full = bridges.build(env, x, s, t)
    report.estimates.update(covering_events=int(ids.size), p0=full.p0)
    report.checks.append(Check("enough_events", "count", ids.size >= min_events, statistic=float(ids.size),
                               threshold=float(min_events)))
    report.checks.append(Check("mass_identity", "tolerance", full.mass_defect < 1e-12, statistic=full.mass_defect,
                               threshold=1e-12))

    # split the covering events into three consecutive stretches
    cuts = [s] + [0.5 * (env.t[ids[j]] + env.t[ids[j + 1]]) for j in (ids.size // 3, 2 * ids.size // 3)] + [t]
    a, b, c = (bridges.build(env, x, cuts[i], cuts[i + 1]) for i in range(3))
    left = bridges.compose(bridges.compose(c, b), a)
    right = bridges.compose(c, bridges.compose(b, a))
    err_assoc = float(np.max(np.abs(left(w) - right(w))))
    report.checks.append(Check("associativity", "tolerance", err_assoc <= 1e-12, statistic=err_assoc, threshold=1e-12))
    err_flow = 0.0
    for m in cuts[1:3]:
        err_flow = max(err_flow, float(np.max(np.abs(
            full(w) - bridges.compose(bridges.build(env, x, m, t), bridges.build(env, x, s, m))(w)))))
    err_fold = float(np.max(np.abs(full(w) - bridges.build_by_folding(env, x, s, t)(w))))
    report.checks.append(Check("flow_property", "tolerance", max(err_flow, err_fold) <= 1e-12,
                               statistic=max(err_flow, err_fold), threshold=1e-12))
    mono = bool(np.all(np.diff(full(w)) >= -1e-12) and abs(full(0.0)) <= 1e-12 and abs(full(1.0) - 1.0) <= 1e-12)
    report.checks.append(Check("monotone_endpoints", "tolerance", mono))

    # inversion frequencies on a short stretch, where every jump has visible mass
    s_short = 0.5 * (env.t[ids[-9]] + env.t[ids[-8]]) if ids.size > 8 else s
    short = bridges.build(env, x, s_short, t)
    V = key.child("uniforms").rng().random(draws)
    hit, _ = bridges.invert_many(short, V)
    worst = 0.0
    for i, p in enumerate(short.masses):
        f = float(np.mean(hit == i))
        se = proportion_se(p, draws)
        worst = max(worst, abs(f - p) / se if se > 0 else 0.0)
    f0 = float(np.mean(hit < 0))
    worst = max(worst, abs(f0 - short.p0) / proportion_se(short.p0, draws))
    report.estimates.update(inversion_jumps=len(short), inversion_worst_z=worst)
    report.checks.append(Check("inversion_frequencies", "z", worst <= band, statistic=worst, threshold=band,
                               oracle_source="interval lengths p_i"))
    report.runtime = time.perf_counter() - t0
    return report


# --------------------------------------------------------------------------
# passage diagnostic


def theta_diagnostic(env: Environment, box_lo, box_hi, T: float, samples: int, seed_key) -> ExperimentReport:
    """Monte Carlo ``θ = ∫ P_x(the forward path from x meets S_f before T) dx`` on a finite domain.

    A forward path sits still until an event in range hits it (probability
    ``u``), then jumps to a uniform point of that event's ball.
    """
    key = as_key(seed_key)
    t0 = time.perf_counter()
    dom = env.domain
    rng = key.child("paths").rng()
    lo = np.asarray(box_lo, dtype=np.float64)
    hi = np.asarray(box_hi, dtype=np.float64)

    def inside(p):
        if dom.periodic:
            c = (lo + hi) / 2.0
            return bool(np.all(geometry.displacement(p, c, dom) <= (hi - lo) / 2.0))
        return bool(np.all((p >= lo) & (p <= hi)))

    hits = np.zeros(samples, dtype=bool)
    starts = dom.uniform(rng, samples)
    for j in range(samples):
        p, now = starts[j], env.t_begin
        if inside(p):
            hits[j] = True
            continue
        while True:
            ids = events_covering(p, now, T, env)
            moved = False
            for i in ids:
                if rng.random() < env.model.impact_at(env.r[i], env.u[i], geometry.sq_distances(p, env.z[i], dom))[0]:
                    p = env.model.sample_offspring_location(env.z[i], env.r[i], dom, rng)
                    now = float(env.t[i])
                    moved = True
                    break
            if not moved:
                break
            if inside(p):
                hits[j] = True
                break
    est = dom.volume * float(hits.mean())
    se = dom.volume * proportion_se(float(hits.mean()), samples)
    vol_s = float(np.prod(np.minimum(hi - lo, dom.L)))
    params = {"environment_sha256": env.digest(), "box": [lo.tolist(), hi.tolist()], "T": T, "samples": samples}
    report = ExperimentReport("theta", str(key), params)
    report.estimates.update(theta=est, theta_se=se, support_volume=vol_s)
    report.checks.append(Check("theta_at_least_support_volume", "bound", est + 3 * se >= vol_s,
                               estimate=est, se=se, threshold=vol_s))
    report.checks.append(Check("theta_finite", "bound", math.isfinite(est), estimate=est))
    report.runtime = time.perf_counter() - t0
    return report
