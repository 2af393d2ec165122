"""Many-lineage samples in the averaged coalescent: untouched lineages never run out."""
from __future__ import annotations

import math
import time
from typing import Optional, Sequence

import numpy as np

from .. import geometry
from ..ancestry import MarkedPartition, run_annealed
from ..environment import EventModel, jump_rate
from ..geometry import Domain
from ..parallel import replicate_map
from ..seeding import as_key
from .report import Check, ExperimentReport, z_check
from .stats import mean_se


def _cdi_task(args):
    model, dom, t, c, key = args
    rng = key.child("sample").rng()
    center = dom.L / 2.0
    n0 = int(rng.poisson(c * geometry.ball_volume(center, 1.0, dom)))
    if n0 == 0:
        return 0, 0, 0
    pts = geometry.sample_uniform_ball(center, 1.0, dom, rng, size=n0)
    traj = run_annealed(MarkedPartition.singletons(pts), model, dom, t, key.child("coalescent"))
    untouched = sum(1 for b in traj.final.blocks if b.jumps == 0)
    return n0, untouched, traj.final.N


def cdi_experiment(model: EventModel, dom: Domain, t: float, c_values: Sequence[float], replicates: int,
                   seed_key, workers: int = 1, c_main: Optional[float] = None,
                   main_replicates: Optional[int] = None, band: float = 3.0) -> ExperimentReport:
    """Poisson(c·Vol(B(0,1))) lineages in the unit ball at the domain centre, run for time ``t``.

    Checks the untouched fraction against ``exp(-J t)`` at ``c_main`` and that
    the mean ancestor count ``N_t`` increases along the ``c`` ladder.
    """
    if model.charges_unit_impact:
        raise ValueError("this experiment needs impacts < 1 almost surely (no mass at u = 1)")
    key = as_key(seed_key)
    t0 = time.perf_counter()
    c_values = [float(c) for c in c_values]
    c_main = c_values[min(1, len(c_values) - 1)] if c_main is None else float(c_main)
    main_replicates = replicates if main_replicates is None else int(main_replicates)
    J = jump_rate(dom.L / 2.0, model, dom)
    oracle = math.exp(-J * t)
    params = {"model": model.to_dict(), "domain": dom.to_dict(), "t": t, "c_values": c_values,
              "replicates_per_c": replicates, "c_main": c_main, "main_replicates": main_replicates,
              "z_band": band, "sample_region": "unit ball at the domain centre"}
    report = ExperimentReport("cdi", str(key), params)

    main = replicate_map(_cdi_task, [(model, dom, t, c_main, key.child("main", r)) for r in range(main_replicates)], workers)
    frac = np.array([u / n for n, u, _ in main if n > 0])
    est, se = mean_se(frac)
    report.estimates.update(jump_rate=J, untouched_fraction=est, untouched_fraction_se=se)
    report.raw["untouched_fraction"] = frac.tolist()
    if t == 0:
        report.checks.append(Check("untouched_fraction_at_t0", "exact", bool(np.all(frac == 1.0)),
                                   estimate=est, oracle=1.0, oracle_source="nothing happens in zero time"))
    else:
        report.checks.append(z_check("untouched_fraction", est, se, oracle, "exp(-J t), exponential formula", band))

    ladder_N, ladder_untouched = [], []
    for i, c in enumerate(c_values):
        res = replicate_map(_cdi_task, [(model, dom, t, c, key.child("ladder", i, r)) for r in range(replicates)], workers)
        ladder_N.append(float(np.mean([x[2] for x in res])))
        ladder_untouched.append(float(np.mean([x[1] for x in res])))
    slope = float(np.polyfit(c_values, ladder_untouched, 1)[0]) if len(c_values) > 1 else math.nan
    report.estimates.update(ladder_mean_N=ladder_N, ladder_mean_untouched=ladder_untouched,
                            untouched_slope_per_c=slope,
                            untouched_slope_oracle=geometry.ball_volume(dom.L / 2.0, 1.0, dom) * oracle)
    increasing = all(b > a for a, b in zip(ladder_N, ladder_N[1:]))
    report.checks.append(Check("ancestor_count_increasing_in_c", "trend", increasing,
                               detail={"mean_N": ladder_N, "c": c_values}))
    report.runtime = time.perf_counter() - t0
    return report
