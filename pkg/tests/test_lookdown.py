import math

import numpy as np
import pytest
from scipy import linalg, stats

from slfvlab import geometry
from slfvlab.environment import Environment, EventModel, generate_environment
from slfvlab.geometry import Domain
from slfvlab.lookdown import (BoxFunction, LookdownState, TypeKernel, apply_event, apply_event_gaussian,
                              apply_event_multi_parent, empirical_integral, empirical_integral_bruteforce, evolve,
                              init_state)
from slfvlab.mutation import MutationModel
from slfvlab.seeding import SeedKey

T10 = Domain.torus(10.0, 10.0)
UNI2 = TypeKernel.uniform([0.5, 0.5])


def _state(pos, types, levels=None, dom=T10, n=1.0):
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, dom.dim)
    m = len(pos)
    levels = np.linspace(0.1, 0.9, m) * n if levels is None else np.asarray(levels, dtype=np.float64)
    return LookdownState(dom, n, levels, pos, np.asarray(types, dtype=np.int64), np.zeros(m), 0.0)


def _cells(pos, dom, c):
    idx = np.zeros(len(pos), dtype=int)
    for a in range(dom.dim):
        idx = idx * c + np.clip((pos[:, a] / dom.L[a] * c).astype(int), 0, c - 1)
    return np.bincount(idx, minlength=c ** dom.dim)


# --------------------------------------------------------------------------
# initial condition


def test_init_count_and_sorting():
    s = init_state(T10, 10.0, UNI2, 0)
    assert abs(len(s) - 1000) < 3 * math.sqrt(1000)
    assert np.all(np.diff(s.levels) >= 0) and s.levels.max() <= 10.0


def test_delta_kernel_types():
    s = init_state(T10, 5.0, TypeKernel.delta(1, 3), 1)
    assert np.all(s.types == 1)


def test_init_cell_counts_are_poisson():
    pvals = []
    for i in range(20):
        s = init_state(T10, 10.0, UNI2, SeedKey(2).child(i))
        counts = _cells(s.pos, T10, 5)
        d = (counts.size - 1) * counts.var(ddof=1) / counts.mean()
        pvals.append(2 * min(stats.chi2.cdf(d, counts.size - 1), stats.chi2.sf(d, counts.size - 1)))
    # the p-values of independent replicates are uniform
    assert stats.kstest(pvals, "uniform").pvalue > 0.01


def test_half_space_kernel():
    s = init_state(T10, 5.0, TypeKernel.half_space(2, [1, 0], [0, 1]), 3)
    assert np.all(s.types[s.pos[:, 0] < 5.0] == 0)
    assert np.all(s.types[s.pos[:, 0] >= 5.0] == 1)


def test_bad_init_rejected():
    with pytest.raises(ValueError):
        init_state(T10, 0.0, UNI2, 0)
    with pytest.raises(ValueError):
        TypeKernel.uniform([0.5, 0.6])


# --------------------------------------------------------------------------
# single ball events


def test_lone_particle_is_its_own_parent():
    s = _state([[5.0, 5.0], [9.0, 9.0]], [1, 0])
    out = apply_event(s, (1.0, [5.2, 5.0], 1.0, 1.0), 0)
    assert list(out.affected) == [0] and list(out.parents) == [0]
    assert s.types[0] == 1
    assert geometry.distance(s.pos[0], [5.2, 5.0], T10) <= 1.0
    assert np.array_equal(s.pos[1], [9.0, 9.0])


def test_unit_impact_copies_lowest_level_type():
    s = _state([[5.0, 5.0], [5.3, 5.0], [4.8, 5.1], [9.0, 9.0]], [2, 0, 1, 1], levels=[0.4, 0.1, 0.7, 0.05])
    order = np.argsort(s.levels)
    s = _state(s.pos[order], s.types[order], s.levels[order])
    apply_event(s, (1.0, [5.0, 5.0], 1.0, 1.0), 0)
    in_ball = geometry.distance(s.pos[1:], [5.0, 5.0], T10) <= 1.0
    assert np.all(in_ball)
    assert list(s.types) == [1, 0, 0, 0]  # level 0.05 is far away; level 0.1 (type 0) is the parent


def test_affected_probability_is_u():
    hits = 0
    reps = 10_000
    for i in range(reps):
        s = _state([[5.0, 5.0]], [0])
        hits += apply_event(s, (1.0, [5.5, 5.0], 1.0, 0.3), SeedKey(4).child(i)).affected.size
    assert abs(hits / reps - 0.3) < 3 * math.sqrt(0.21 / reps)


def test_event_before_state_time_rejected():
    s = _state([[5.0, 5.0]], [0])
    s.time = 2.0
    with pytest.raises(ValueError):
        apply_event(s, (1.0, [5.0, 5.0], 1.0, 0.5), 0)


def test_parent_location_uniform_on_ball():
    # lowest affected level is independent of location, so the parent sits uniformly in the ball
    rng = np.random.default_rng(5)
    sectors = []
    radial = []
    z = np.array([5.0, 5.0])
    for i in range(10_000):
        pos = geometry.sample_uniform_ball(z, 1.0, T10, rng, size=rng.poisson(6) + 1)
        s = _state(pos, np.zeros(len(pos)), np.sort(rng.random(len(pos))))
        out = apply_event(s, (1.0, z, 1.0, 0.5), rng)
        if out.parents.size:
            d = out.parent_locations[0] - z
            sectors.append(int((math.atan2(d[1], d[0]) + math.pi) / (2 * math.pi) * 8) % 8)
            radial.append(d @ d)
    assert stats.chisquare(np.bincount(sectors, minlength=8)).pvalue > 0.01
    assert stats.kstest(radial, "uniform").pvalue > 0.01


def test_uniform_cloud_stays_uniform():
    rng = np.random.default_rng(6)
    dom = Domain.torus(2.0, 2.0)
    counts = np.zeros(16)
    for i in range(300):
        s = init_state(dom, 50.0, TypeKernel.uniform([1.0]), rng)
        apply_event(s, (1.0, [1.0, 1.0], 0.9, 0.8), rng)
        counts += _cells(s.pos, dom, 4)
    assert stats.chisquare(counts).pvalue > 0.01


# --------------------------------------------------------------------------
# multi-parent and gaussian events


def test_single_parent_variant_reduces_to_ball_event():
    for i in range(20):
        a = init_state(T10, 2.0, TypeKernel.uniform([0.3, 0.3, 0.4]), SeedKey(7).child(i))
        b = a.copy()
        oa = apply_event(a, (1.0, [5.0, 5.0], 2.0, 0.6), SeedKey(8).child(i))
        ob = apply_event_multi_parent(b, (1.0, [5.0, 5.0], 2.0, 0.6, 1), SeedKey(8).child(i))
        assert np.array_equal(a.pos, b.pos) and np.array_equal(a.types, b.types)
        assert np.array_equal(oa.affected, ob.affected)


def test_multi_parent_lone_particle_keeps_type():
    s = _state([[5.0, 5.0]], [1])
    apply_event_multi_parent(s, (1.0, [5.0, 5.0], 1.0, 1.0, 3), 0)
    assert s.types[0] == 1


def test_multi_parent_uniform_choice():
    reps = 10_000
    share = np.zeros(3)
    for i in range(reps):
        s = _state([[5.0, 5.0], [5.1, 5.0], [5.0, 5.1], [4.9, 5.0], [5.0, 4.9]], [0, 1, 2, 0, 0])
        out = apply_event_multi_parent(s, (1.0, [5.0, 5.0], 1.0, 1.0, 3), SeedKey(9).child(i))
        # the particle of level rank 4 picks one of the three lowest-level parents
        share[s.types[4]] += 1
        assert list(out.parents) == [0, 1, 2]
    p = share / reps
    assert np.all(np.abs(p - 1 / 3) < 3 * math.sqrt((2 / 9) / reps))


GAUSS = EventModel.gaussian(1.0, u0=0.7, theta2=0.25, alpha=1.5)


def test_gaussian_zero_impact_is_noop():
    s = init_state(T10, 2.0, UNI2, 10)
    before = s.copy()
    out = apply_event_gaussian(s, (1.0, [5.0, 5.0], GAUSS.theta, 0.0), GAUSS, 0)
    assert out.affected.size == 0
    assert np.array_equal(s.pos, before.pos)


def test_gaussian_centre_hit_probability():
    reps = 10_000
    hits = 0
    for i in range(reps):
        s = _state([[5.0, 5.0]], [0])
        hits += apply_event_gaussian(s, (1.0, [5.0, 5.0], GAUSS.theta, GAUSS.u0), GAUSS, SeedKey(11).child(i)).affected.size
    assert abs(hits / reps - 0.7) < 3 * math.sqrt(0.21 / reps)


def test_gaussian_parent_radial_law():
    reps = 10_000
    r2 = []
    z = np.array([5.0, 5.0])
    for i in range(reps):
        s = _state([[5.0, 5.0]], [0])
        out = apply_event_gaussian(s, (1.0, z, GAUSS.theta, 1.0), GAUSS, SeedKey(12).child(i))
        if out.parents.size:
            d = geometry.displacement(out.parent_locations[0], z, T10)
            r2.append(d @ d)
    scale2 = (GAUSS.alpha * GAUSS.theta) ** 2
    # |X|^2 / (2 s^2) is Exp(1) for an isotropic planar Gaussian
    assert stats.kstest(np.array(r2) / (2 * scale2), "expon").pvalue > 0.01


# --------------------------------------------------------------------------
# evolution


def test_no_events_no_mutation_is_constant():
    env = Environment(T10, EventModel.ball(1.0), (0.0, 1.0), [], np.zeros((0, 2)), [], [])
    s = init_state(T10, 3.0, UNI2, 13)
    before = s.copy()
    run = evolve(s, env, 0.0, 1.0, None, 14)
    assert run.outcomes == []
    assert np.array_equal(s.pos, before.pos) and np.array_equal(s.types, before.types)


def test_no_events_with_mutation_follows_chain():
    env = Environment(T10, EventModel.ball(1.0), (0.0, 1.0), [], np.zeros((0, 2)), [], [])
    s = init_state(T10, 50.0, TypeKernel.delta(0, 2), 15)
    before = s.pos.copy()
    evolve(s, env, 0.0, 1.0, MutationModel.flip(1.0), 16)
    assert np.array_equal(s.pos, before)
    p = linalg.expm(MutationModel.flip(1.0).generator)[0]
    assert stats.chisquare(np.bincount(s.types, minlength=2), p * len(s)).pvalue > 0.01


def test_covering_unit_event_fixes_lowest_type():
    dom = Domain.torus(2.0, 2.0)
    env = Environment(dom, EventModel.ball(1.0, 2.0, 1.0), (0.0, 2.0), [1.0], [[1.0, 1.0]], [2.0], [1.0])
    s = init_state(dom, 20.0, UNI2, 17)
    first = s.types[0]
    evolve(s, env, 0.0, 2.0, None, 18)
    assert np.all(s.types == first)


def test_lazy_mutation_matches_eager_in_law():
    # types are brought up to date only when read; in law this equals mutating continuously
    env = generate_environment(EventModel.ball(1.0, 1.0, 0.5), (0.0, 2.0), Domain.torus(3.0, 3.0), 19)
    mut = MutationModel.flip(0.7)
    reps = 400
    frac = []
    for i in range(reps):
        s = init_state(env.domain, 30.0, TypeKernel.delta(0, 2), SeedKey(20).child(i))
        evolve(s, env, 0.0, 2.0, mut, SeedKey(21).child(i))
        frac.append(s.types.mean())
    # P(type 1 at t) from type 0 is (1 - e^{-2 θ t})/2 regardless of the genealogy
    expected = (1 - math.exp(-2 * 0.7 * 2.0)) / 2
    assert abs(np.mean(frac) - expected) < 3 * np.std(frac, ddof=1) / math.sqrt(reps)


def test_truncation_is_an_exact_subsystem():
    dom = Domain.torus(3.0, 3.0)
    env = generate_environment(EventModel.ball(1.0, 1.0, 0.5), (0.0, 1.0), dom, 22)
    sub, direct = [], []
    for i in range(300):
        big = init_state(dom, 40.0, UNI2, SeedKey(23).child(i))
        evolve(big, env, 0.0, 1.0, None, SeedKey(24).child(i))
        sub.append(len(big.truncate(10.0)))
        small = init_state(dom, 10.0, UNI2, SeedKey(25).child(i))
        evolve(small, env, 0.0, 1.0, None, SeedKey(26).child(i))
        direct.append(len(small))
    assert stats.ks_2samp(sub, direct).pvalue > 0.01
    with pytest.raises(ValueError):
        big.truncate(100.0)


def test_lineages_merge_at_covering_event():
    dom = Domain.torus(2.0, 2.0)
    env = Environment(dom, EventModel.ball(1.0, 2.0, 1.0), (0.0, 3.0), [1.0], [[1.0, 1.0]], [2.0], [1.0])
    s = init_state(dom, 5.0, UNI2, 27)
    run = evolve(s, env, 0.0, 3.0, None, 28)
    merges, cur = run.lineages([3, 7])
    assert merges[0][0] == pytest.approx(2.0)
    assert cur[0] == cur[1] == 0


# --------------------------------------------------------------------------
# empirical integrals


def test_indicator_integral_counts():
    s = init_state(T10, 4.0, UNI2, 29)
    F = BoxFunction((5.0, 5.0), (1.0, 2.0))
    inside = np.all(np.abs(s.pos - 5.0) <= [1.0, 2.0], axis=1).sum()
    assert empirical_integral(s, F, [1.0, 1.0]) == pytest.approx(inside / 4.0)


def test_empty_state_integral():
    s = _state(np.zeros((0, 2)), [])
    assert empirical_integral(s, BoxFunction((5.0, 5.0), (1.0, 1.0)), [1.0, 1.0], k=2) == 0.0


def test_double_sum_by_hand():
    s = _state([[1.0, 1.0], [2.0, 2.0], [9.0, 9.0]], [0, 1, 1], n=2.0)
    F = BoxFunction((1.5, 1.5), (1.0, 1.0), "bump")
    g = [2.0, 3.0]
    f = F(s.pos, T10) * np.array(g)[s.types]
    hand = sum(f[i] * f[j] for i in range(3) for j in range(3)) / 4.0
    assert empirical_integral(s, F, g, k=2) == pytest.approx(hand)
    prod = lambda x, y: F(x[None], T10)[0] * F(y[None], T10)[0]  # noqa: E731
    assert empirical_integral_bruteforce(s, prod, g, 2) == pytest.approx(hand)


def test_box_function_wraps_on_torus():
    F = BoxFunction((0.0, 5.0), (1.0, 1.0))
    assert F(np.array([[9.5, 5.0], [0.5, 5.5], [2.0, 5.0]]), T10).tolist() == [1.0, 1.0, 0.0]
