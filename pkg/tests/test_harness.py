import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slfvlab import geometry
from slfvlab.environment import Environment, EventModel, generate_environment
from slfvlab.geometry import Domain
from slfvlab.harness import (Check, DualitySetup, ExperimentReport, InsufficientParticles, TestFunction,
                             WeightedPointMeasure, cdi_experiment, convergence_diagnostic, duality_check,
                             jump_rate_check, lookdown_vs_coalescent_check, measure_distance, pair_merge_check,
                             upsilon, variation_bound_check)
from slfvlab.harness import stats as hs
from slfvlab.harness.distance import basis_integrals
from slfvlab.harness.duality import nearest_distinct
from slfvlab.lookdown import BoxFunction, TypeKernel
from slfvlab.seeding import SeedKey

T3 = Domain.torus(3.0, 3.0)
T10 = Domain.torus(10.0, 10.0)
BALL = EventModel.ball(1.0, 1.0, 0.5)


# --------------------------------------------------------------------------
# statistics and reports


def test_mean_se_known_values():
    m, se = hs.mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert math.isinf(hs.mean_se([1.0])[1])
    assert all(math.isnan(v) for v in hs.mean_se([]))


def test_z_score_zero_se():
    assert hs.z_score(1.0, 0.0, 1.0) == 0.0
    assert hs.z_score(2.0, 0.0, 1.0) == math.inf
    assert hs.z_score(0.0, 0.0, 1.0) == -math.inf


def test_proportion_helpers():
    assert hs.proportion_se(0.5, 100) == pytest.approx(0.05)
    assert hs.two_proportion_z(30, 100, 30, 100) == 0.0
    assert hs.two_proportion_z(80, 100, 20, 100) > 5
    assert hs.bonferroni(0.01, 3) == pytest.approx(0.01 / 3)


def test_count_tests_on_poisson_counts():
    counts = np.random.default_rng(5).poisson(40.0, size=200)
    assert hs.dispersion_test(counts)[1] > 0.001
    assert hs.uniformity_test(counts)[1] > 0.001
    # a constant table is far too regular to be Poisson
    assert hs.dispersion_test(np.full(50, 40))[1] < 1e-6


def _report(runtime):
    r = ExperimentReport("demo", "1:abc", {"a": 1.0, "b": [1, 2]})
    r.checks.append(Check("c", "exact", True, statistic=math.inf))
    r.estimates["x"] = np.float64(0.25)
    r.raw.update(u=[1.0, 2.0], v=[3.0])
    r.runtime = runtime
    return r


def test_report_json_ignores_runtime():
    a, b = _report(1.0), _report(99.0)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["pass"] is True and "runtime" not in d
    assert d["checks"][0]["statistic"] == "inf"
    assert "runtime" in a.text()


def test_report_csv_and_empty_checks():
    r = _report(0.0)
    assert r.to_csv().splitlines() == ["u,v", "1.0,3.0", "2.0,"]
    assert not ExperimentReport("none", "0", {}).passed


# --------------------------------------------------------------------------
# duality


def test_nearest_distinct_never_reuses_a_particle():
    pos = np.array([[1.0, 1.0], [1.1, 1.0], [2.5, 2.5]])
    assert nearest_distinct(pos, [(1.0, 1.0), (1.0, 1.0)], T3) == [0, 1]
    with pytest.raises(InsufficientParticles):
        nearest_distinct(pos, [(0.2, 0.2)], T3, eps=0.1)


def test_duality_setup_validation():
    k = TypeKernel.uniform([0.5, 0.5])
    with pytest.raises(ValueError):
        DualitySetup(T3, BALL, k, [(1, 1)], [(1.0, 0.0), (1.0, 0.0)], 1.0, 100)
    with pytest.raises(ValueError):
        DualitySetup(T3, BALL, k, [(1, 1)], [(1.0, 0.0, 0.0)], 1.0, 100)


def test_duality_delta_kernel_is_exact():
    setup = DualitySetup(T3, BALL, TypeKernel.delta(0, 2), [(1.2, 1.5), (1.8, 1.5)], [(0.5, 1.0), (0.5, 1.0)],
                         1.0, 500, eps=0.2)
    rep = duality_check(setup, 3, 3, SeedKey(1))
    assert rep.estimates["forward_mean"] == 0.25 and rep.estimates["backward_mean"] == 0.25
    assert rep.passed


def test_duality_single_point_uniform_kernel():
    setup = DualitySetup(T3, BALL, TypeKernel.uniform([0.3, 0.7]), [(1.5, 1.5)], [(1.0, 0.0)], 1.0, 300, eps=0.3)
    rep = duality_check(setup, 5, 40, SeedKey(2))
    se = hs.proportion_se(0.3, 200)
    assert abs(rep.estimates["forward_mean"] - 0.3) <= 4 * se
    assert abs(rep.estimates["backward_mean"] - 0.3) <= 4 * se
    assert rep.passed


def test_duality_rejects_unknown_mode():
    setup = DualitySetup(T3, BALL, TypeKernel.delta(0, 2), [(1.5, 1.5)], [(1.0, 0.0)], 1.0, 100, eps=0.5)
    with pytest.raises(ValueError):
        duality_check(setup, 1, 1, SeedKey(0), mode="mixed")


# --------------------------------------------------------------------------
# cdi, variation, distance


def test_cdi_at_time_zero():
    rep = cdi_experiment(BALL, T10, 0.0, [5.0, 50.0], 5, SeedKey(3), c_main=20.0, main_replicates=5)
    assert rep.estimates["untouched_fraction"] == 1.0
    assert rep.passed


def test_cdi_rejects_unit_impacts():
    with pytest.raises(ValueError):
        cdi_experiment(EventModel.ball(1.0, 1.0, 1.0), T10, 1.0, [5.0], 2, SeedKey(0))


def _tf():
    return TestFunction(BoxFunction((5.0, 5.0), (2.0, 2.0)), [1.0, 0.0])


def test_variation_without_events():
    env = Environment(T10, BALL, (0.0, 1.0), [], np.zeros((0, 2)), [], [])
    rep = variation_bound_check(env, _tf(), 50, 1.0, 3, SeedKey(4))
    assert rep.estimates["upsilon"] == 0.0 and rep.estimates["max_total_variation"] == 0.0
    assert rep.passed


def test_variation_single_event():
    env = Environment(T10, BALL, (0.0, 1.0), [0.5], [[6.5, 5.0]], [1.0], [0.5])
    f = _tf()
    # the ball pokes half-way out of the box through the face x = 7
    want = 0.5 * geometry.ball_box_volume(np.array([6.5, 5.0]), 1.0, f.F.lo, f.F.hi, T10)
    assert upsilon(env, f, 1.0) == pytest.approx(want)
    half_disk = math.pi / 2 + (math.asin(0.5) + 0.5 * math.sqrt(0.75))
    assert want == pytest.approx(0.5 * half_disk, rel=1e-9)
    rep = variation_bound_check(env, f, 200, 1.0, 20, SeedKey(5))
    assert rep.passed and rep.estimates["max_total_variation"] > 0


def _random_measure(seed, n=40, q=2):
    rng = np.random.default_rng(seed)
    return WeightedPointMeasure(T3, T3.uniform(rng, n), rng.integers(0, q, n), 1.0 / n, q)


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_measure_distance_is_a_pseudometric(a, b, c):
    A, B, C = (_random_measure(s) for s in (a, b, c))
    assert measure_distance(A, A) == 0.0
    assert measure_distance(A, B) == pytest.approx(measure_distance(B, A))
    assert measure_distance(A, C) <= measure_distance(A, B) + measure_distance(B, C) + 1e-12


def test_basis_first_terms_are_type_masses():
    m = WeightedPointMeasure(T3, [[0.1, 0.1], [2.0, 2.0], [2.9, 0.1]], [0, 1, 1], 0.5, 2)
    b = basis_integrals(m, 10)
    assert b[0] == 0.5 and b[1] == 1.0
    # level 1: four cells, row-major in (x, y), two types each
    np.testing.assert_allclose(b[2:10], [0.5, 0, 0, 0, 0, 0.5, 0, 0.5])


def test_measure_distance_rejects_mismatch():
    A = _random_measure(1)
    B = WeightedPointMeasure(T3, A.points, A.types, A.weights, 3)
    with pytest.raises(ValueError):
        measure_distance(A, B)


def test_convergence_small():
    env = generate_environment(EventModel.ball(2.0, 0.5, 0.5), (0.0, 1.0), Domain.torus(2.0, 2.0), SeedKey(12))
    kernel = TypeKernel.half_space(2, [1.0, 0.0], [0.0, 1.0])
    rep = convergence_diagnostic(env, kernel, [50, 500], 1.0, 5, SeedKey(13))
    means = rep.estimates["mean_distance"]
    assert len(means) == 2 and means[1] < means[0]


# --------------------------------------------------------------------------
# genealogy


def test_genealogy_without_events():
    env = Environment(T3, BALL, (0.0, 1.0), [], np.zeros((0, 2)), [], [])
    rep = lookdown_vs_coalescent_check(env, [(1.0, 1.0), (2.0, 2.0)], 1.0, 1.0, 20, 5, SeedKey(6))
    assert rep.estimates["merge_fraction_lookdown"] == 0.0
    assert rep.estimates["merge_fraction_coalescent"] == 0.0
    assert rep.passed


def test_genealogy_unit_event_merges_both():
    model = EventModel.ball(1.0, 1.0, 1.0)
    env = Environment(T3, model, (0.0, 1.0), [0.4], [[1.5, 1.5]], [1.0], [1.0])
    rep = lookdown_vs_coalescent_check(env, [(1.3, 1.5), (1.7, 1.5)], 1.0, 1.0, 100, 10, SeedKey(7))
    np.testing.assert_allclose(rep.raw["first_merge_lookdown"], 0.6)
    np.testing.assert_allclose(rep.raw["first_merge_coalescent"], 0.6)
    assert rep.passed


# --------------------------------------------------------------------------
# closed-form checks and determinism


def test_small_closed_form_checks_pass():
    assert jump_rate_check(BALL, T10, 500, SeedKey(8)).passed
    env = generate_environment(BALL, (0.0, 20.0), T10, SeedKey(9))
    assert pair_merge_check(env, 500, SeedKey(10)).passed


def test_pair_merge_needs_fixed_impact():
    model = EventModel(variant="ball", rate=1.0, impact_kind="beta", beta_a=2.0, beta_b=2.0)
    env = generate_environment(model, (0.0, 1.0), T10, SeedKey(0))
    with pytest.raises(ValueError):
        pair_merge_check(env, 10, SeedKey(0))


def test_reports_independent_of_worker_count():
    setup = DualitySetup(T3, BALL, TypeKernel.uniform([0.5, 0.5]), [(1.5, 1.5)], [(1.0, 0.0)], 1.0, 200, eps=0.3)
    one = duality_check(setup, 4, 3, SeedKey(11), workers=1)
    two = duality_check(setup, 4, 3, SeedKey(11), workers=2)
    assert one.to_json() == two.to_json() and one.to_csv() == two.to_csv()
    a = jump_rate_check(BALL, T10, 50, SeedKey(12), workers=1)
    b = jump_rate_check(BALL, T10, 50, SeedKey(12), workers=2)
    assert a.to_json() == b.to_json()
