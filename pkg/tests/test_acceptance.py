"""Acceptance criteria at their stated scales and tolerances.

Each test appends one PASS/FAIL line to the terminal summary (and prints it),
then asserts. Runtimes are wall-clock on the machine running the suite.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from test_config_cli import CONFIGS, _small_config

from slfvlab import bridges
from slfvlab.cli import main
from slfvlab.config import RunConfig
from slfvlab.environment import EventModel, events_covering, extend_with_parents, generate_environment
from slfvlab.geometry import Domain
from slfvlab.harness import (TestFunction, bridge_identity_check, cdi_experiment, convergence_diagnostic,
                             jump_rate_check, lookdown_vs_coalescent_check, pair_merge_check,
                             poisson_conservation_check, variation_bound_check)
from slfvlab.lookdown import BoxFunction, TypeKernel
from slfvlab.seeding import SeedKey

BALL = EventModel.ball(1.0, 1.0, 0.5)
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _record(number: int, title: str, passed: bool, runtime: float, limit: float, detail: str) -> None:
    ok = passed and runtime < limit
    line = f"criterion {number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}  [{runtime:.1f}s < {limit:g}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line
    assert runtime < limit, line


def _checks(report) -> str:
    return ", ".join(f"{c.name}={'ok' if c.passed else 'FAIL'}" for c in report.checks)


def test_criterion_01_jump_rate():
    rep = jump_rate_check(BALL, Domain.torus(10.0, 10.0), 10_000, SeedKey(1).child("jump-rate"))
    mean_ok = next(c for c in rep.checks if c.name == "mean_wait").passed
    e = rep.estimates
    _record(1, "jump-rate oracle", mean_ok, rep.runtime, 10,
            f"mean wait {e['mean_wait']:.4f} ± {e['mean_wait_se']:.4f} vs 1/(0.5π) = {1 / (0.5 * math.pi):.4f}; "
            + _checks(rep))


def test_criterion_02_pair_merge():
    t0 = time.perf_counter()
    env = generate_environment(BALL, (0.0, 20.0), Domain.torus(10.0, 10.0), SeedKey(2).child("environment"))
    rep = pair_merge_check(env, 10_000, SeedKey(2).child("pair-merge"))
    e = rep.estimates
    _record(2, "co-located pair merge", rep.passed, time.perf_counter() - t0, 10,
            f"P(merge) {e['merge_probability']:.4f} vs 1/3 over {e['affected_replicates']} replicates")


def test_criterion_03_poisson_conservation():
    t0 = time.perf_counter()
    env = generate_environment(BALL, (0.0, 5.0), Domain.torus(5.0, 5.0), SeedKey(4).child("environment"))
    rep = poisson_conservation_check(env, 1000.0, 100, SeedKey(4).child("poisson"))
    worst = min(c.p_value for c in rep.checks)
    _record(3, "Poisson conservation", rep.passed, time.perf_counter() - t0, 30,
            f"smallest p {worst:.4f} vs alpha {rep.checks[0].alpha:.4f} over 3 cutoffs; " + _checks(rep))


def test_criterion_04_genealogy():
    t0 = time.perf_counter()
    env = generate_environment(BALL, (0.0, 4.0), Domain.torus(3.0, 3.0), SeedKey(14).child("environment"))
    rep = lookdown_vs_coalescent_check(env, [(1.2, 1.5), (1.8, 1.5)], 4.0, 4.0, 5.0, 10_000,
                                       SeedKey(14).child("genealogy"))
    ks = rep.checks[0]
    _record(4, "genealogy equality", ks.passed and ks.p_value > 0.01, time.perf_counter() - t0, 120,
            f"KS p {ks.p_value:.4f} (> 0.01); " + _checks(rep))


@pytest.mark.parametrize("name", ["twotype", "twotype_flip"])
def test_criterion_05_duality(name, tmp_path):
    t0 = time.perf_counter()
    code = main(["duality", "--config", str(CONFIG_DIR / f"{name}.cfg"), "--out", str(tmp_path)])
    runtime = time.perf_counter() - t0
    d = json.loads((tmp_path / "report.json").read_text())
    e = d["estimates"]
    z = d["checks"][0]["statistic"]
    _record(5, f"quenched duality ({name})", code == 0 and abs(z) <= 3, runtime, 300,
            f"forward {e['forward_mean']:.4f} backward {e['backward_mean']:.4f} "
            f"diff {e['paired_difference']:+.4f} ± {e['paired_difference_se']:.4f} (z {z:+.2f})")


def test_criterion_06_bridges():
    t0 = time.perf_counter()
    model = EventModel(variant="ball", rate=1.0, impact_kind="beta", beta_a=2.0, beta_b=2.0)
    dom = Domain.torus(2.0, 2.0)
    env = extend_with_parents(generate_environment(model, (0.0, 400.0), dom, SeedKey(6).child("environment")),
                              SeedKey(6).child("marks"))
    x = np.array([1.0, 1.0])
    rep = bridge_identity_check(env, x, SeedKey(6).child("bridge"))
    # associativity of ⋄ on the first, middle and last thousand elementary bridges
    ids = events_covering(x, env.t_begin, env.t_end, env)
    el = [bridges.elementary(float(env.l[i]), float(env.u[i])) for i in ids]
    w = np.linspace(0.0, 1.0, 100)
    worst = 0.0
    for a, b, c in zip(el[2::3], el[1::3], el[0::3]):
        left = bridges.compose(bridges.compose(a, b), c)(w)
        right = bridges.compose(a, bridges.compose(b, c))(w)
        worst = max(worst, float(np.max(np.abs(left - right))))
    e = rep.estimates
    _record(6, "bridge identities", rep.passed and worst <= 1e-12, time.perf_counter() - t0, 10,
            f"{e['covering_events']} events, p0 {e['p0']:.3g}, elementary associativity err {worst:.1e}, "
            f"inversion worst z {e['inversion_worst_z']:.2f}; " + _checks(rep))


def test_criterion_07_finite_variation():
    t0 = time.perf_counter()
    dom = Domain.torus(10.0, 10.0)
    env = generate_environment(BALL, (0.0, 10.0), dom, SeedKey(9).child("environment"))
    f = TestFunction(BoxFunction((5.0, 5.0), (2.0, 2.0)), [1.0, 0.0])
    rep = variation_bound_check(env, f, 50.0, 10.0, 100, SeedKey(9).child("variation"))
    e = rep.estimates
    _record(7, "finite variation", rep.passed and e["replicates_within_bound"] == 100, time.perf_counter() - t0, 60,
            f"{len(env)} events, max TV {e['max_total_variation']:.3f} <= 2|f|Υ = {e['bound']:.3f} "
            f"in {e['replicates_within_bound']}/100")


def test_criterion_08_cdi():
    t0 = time.perf_counter()
    rep = cdi_experiment(BALL, Domain.torus(20.0, 20.0), 1.0, [50.0, 100.0, 200.0, 400.0], 100,
                         SeedKey(11).child("cdi"), c_main=100.0, main_replicates=2000)
    e = rep.estimates
    _record(8, "no coming down from infinity", rep.passed, time.perf_counter() - t0, 120,
            f"untouched {e['untouched_fraction']:.4f} ± {e['untouched_fraction_se']:.4f} vs "
            f"exp(-J) = {math.exp(-e['jump_rate']):.4f}; mean N_t "
            + "/".join(f"{v:.1f}" for v in e["ladder_mean_N"]))


def test_criterion_09_convergence():
    t0 = time.perf_counter()
    env = generate_environment(EventModel.ball(2.0, 0.5, 0.5), (0.0, 1.0), Domain.torus(2.0, 2.0),
                               SeedKey(12).child("environment"))
    kernel = TypeKernel.half_space(2, [1.0, 0.0], [0.0, 1.0])
    rep = convergence_diagnostic(env, kernel, [100.0, 1000.0, 10_000.0], 1.0, 20, SeedKey(12).child("convergence"))
    _record(9, "convergence diagnostic", rep.passed, time.perf_counter() - t0, 300,
            "mean d(M^n, M^2n) " + " > ".join(f"{v:.4g}" for v in rep.estimates["mean_distance"]))


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    differing = []
    for path in CONFIGS:
        cfg = _small_config(tmp_path, path)
        command = RunConfig.from_file(cfg)["command"]
        outs = []
        for workers in (1, 8):
            out = tmp_path / f"{path.stem}-w{workers}"
            main([command, "--config", str(cfg), "--out", str(out), "--workers", str(workers)])
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"})
        if outs[0] != outs[1] or not outs[0]:
            differing.append(path.stem)
    _record(10, "determinism across 1 vs 8 workers", not differing, time.perf_counter() - t0, math.inf,
            f"{len(CONFIGS)} configs compared byte for byte; differing: {differing or 'none'}")
