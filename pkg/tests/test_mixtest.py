import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_set
from eemmix.core import ReplicateSet, ValidationError, pixel_mean
from eemmix.mixtest import (
    TestInputs,
    benjamini_hochberg,
    run_mixtest,
    sigma_j_hat,
    z_and_p,
)
from eemmix.normal import norm_cdf, two_sided_p
from eemmix.synth import study_like_scene
from oracles import naive_bh

mpmath.mp.dps = 40


@pytest.mark.parametrize("z", [0.0, 1.0, -1.0, 1.96, -1.96, 3.0, -3.0, 6.0, -6.0])
def test_normal_cdf_against_mpmath(z):
    exact = float(mpmath.ncdf(z))
    assert abs(norm_cdf(z) - exact) <= 1e-12
    tail = float(2 * mpmath.ncdf(-abs(z)))
    assert two_sided_p(z) == pytest.approx(tail, rel=1e-10)


def test_sigma_j_noiseless():
    assert sigma_j_hat(10.0, [8.0, 12.0], [0.5, 0.5], 3, 0, 0, [0, 0]) == 0.0


def test_sigma_j_hand_value():
    f = 1.0016 * 1.0001 - 1
    v = 100 * f / 3 + 0.25 * 64 * f / 3 + 0.25 * 144 * f / 3
    got = sigma_j_hat(10.0, [8.0, 12.0], [0.5, 0.5], 3, 0.0016, 0.0001, [0.0001, 0.0001])
    assert got == pytest.approx(np.sqrt(v), rel=1e-12)
    assert got == pytest.approx(0.29350, abs=5e-6)


def test_sigma_j_zero_weights_only_mixture_term():
    got = sigma_j_hat(10.0, [8.0, 12.0], [0.0, 0.0], 3, 0.0016, 0.0001, [0.5, 0.5])
    assert got == pytest.approx(np.sqrt(100 * (1.0016 * 1.0001 - 1) / 3))


def test_sigma_j_vectorized_matches_scalar():
    mu = np.array([1.0, 5.0, 10.0])
    theta = np.array([[1, 2], [3, 4], [8, 12.0]])
    vec = sigma_j_hat(mu, theta, [0.3, 0.7], 3, 0.002, 0.003, [0.1, 0.004])
    for j in range(3):
        assert vec[j] == pytest.approx(
            sigma_j_hat(mu[j], theta[j], [0.3, 0.7], 3, 0.002, 0.003, [0.1, 0.004]))


def test_z_and_p_null():
    z, p = z_and_p(2.0, [1.0, 3.0], [0.5, 0.5], 0.1)
    assert z == 0.0 and p == 1.0


def test_z_and_p_two_sigma():
    z, p = z_and_p(1.2, [1.0], [1.0], 0.1)
    assert z == pytest.approx(2.0)
    assert p == pytest.approx(float(2 * mpmath.ncdf(-2)), rel=1e-12)
    assert p == pytest.approx(0.0455, abs=5e-5)


def test_z_and_p_five_percent():
    _, p = z_and_p(-1.959964, [0.0], [1.0], 1.0)
    assert p == pytest.approx(0.0500, abs=1e-6)


def test_z_and_p_untestable():
    z, p = z_and_p(1.0, [1.0], [1.0], 0.0)
    assert np.isnan(z) and np.isnan(p)


@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(1e-3, 1e3))
def test_z_invariant_to_common_rescaling(mu, theta, k):
    b = [0.5]
    s = sigma_j_hat(mu, [theta], b, 3, 0.0016, 0.003, [0.002])
    z1, _ = z_and_p(mu, [theta], b, s)
    sk = sigma_j_hat(k * mu, [k * theta], b, 3, 0.0016, 0.003, [0.002])
    z2, _ = z_and_p(k * mu, [k * theta], b, sk)
    assert z2 == pytest.approx(z1, rel=1e-9, abs=1e-12)


def test_bh_examples():
    t, rej = benjamini_hochberg([1.0, 1.0, 1.0])
    assert t == 0.0 and not rej.any()
    t, rej = benjamini_hochberg([0.001, 0.013, 0.04, 0.2], 0.05)
    assert t == 0.013 and rej.tolist() == [True, True, False, False]
    t, rej = benjamini_hochberg([0.04], 0.05)
    assert rej.tolist() == [True]


def test_bh_ties_rejected_together():
    t, rej = benjamini_hochberg([0.01, 0.01, 0.01, 0.9], 0.05)
    assert rej.tolist() == [True, True, True, False]


@pytest.mark.parametrize("p, alpha", [([], 0.05), ([0.5, 1.2], 0.05), ([0.5], 0.0), ([0.5], 1.0)])
def test_bh_invalid(p, alpha):
    with pytest.raises(ValidationError):
        benjamini_hochberg(p, alpha)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5))
def test_bh_matches_naive(p, alpha):
    _, rej = benjamini_hochberg(p, alpha)
    assert rej.tolist() == naive_bh(p, alpha)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.randoms())
def test_bh_permutation_invariant(p, rnd):
    order = list(range(len(p)))
    rnd.shuffle(order)
    _, rej = benjamini_hochberg(p, 0.1)
    _, rej_perm = benjamini_hochberg([p[i] for i in order], 0.1)
    assert rej_perm.tolist() == [bool(rej[i]) for i in order]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 29), st.floats(0, 1))
def test_bh_monotone(p, idx, frac):
    idx = idx % len(p)
    lowered = list(p)
    lowered[idx] = p[idx] * frac
    _, rej = benjamini_hochberg(p, 0.1)
    _, rej_low = benjamini_hochberg(lowered, 0.1)
    assert np.all(rej_low[rej])


def _exact_mixture_scene():
    e1 = make_set([[1.0, 2.0, 3.0, 0.0], [1.0, 2.0, 3.0, 0.0]], "e1")
    e2 = make_set([[4.0, 1.0, 2.0, 0.0], [4.0, 1.0, 2.0, 0.0]], "e2")
    b = np.array([0.25, 0.75])
    mix_row = b[0] * pixel_mean(e1).values + b[1] * pixel_mean(e2).values
    mix = make_set([mix_row, mix_row], "m", weights=b)
    return mix, [e1, e2]


def test_run_mixtest_noiseless_exact_mixture():
    mix, ends = _exact_mixture_scene()
    res = run_mixtest(TestInputs(mix, ends, 0.0, 0.0, [0.0, 0.0]))
    assert res.n_rejected == 0
    assert res.n_testable == 0
    records = res.records()
    assert all(r.deviation_sign == "none" and not r.testable for r in records)


def test_run_mixtest_zero_pixel_untestable():
    mix, ends = _exact_mixture_scene()
    res = run_mixtest(TestInputs(mix, ends, 0.0016, 0.001, [0.001, 0.001]))
    assert res.testable.tolist() == [True, True, True, False]
    assert res.n_rejected == 0
    np.testing.assert_allclose(res.z[:3], 0.0, atol=1e-12)


def test_run_mixtest_outputs_shapes():
    scene = study_like_scene(seed=2)
    res = run_mixtest(TestInputs(scene.mixtures["m1"], scene.endmembers, 0.0016, 1e-4,
                                 [1e-4] * 3))
    assert res.z.shape == (5307,)
    grid = res.sign_grid()
    assert grid.shape == (151, 43)
    assert np.isnan(grid[~scene.endmembers[0].layout.mask]).all()
    table = res.logp_table()
    assert table.shape == (res.n_testable, 2)
    rec = res.records()[0]
    assert rec.p_value == pytest.approx(two_sided_p(rec.z))
    assert (rec.deviation_sign == "higher") == (rec.rejected and rec.z > 0)


def test_planted_deviation_detected_with_sign():
    scene = study_like_scene(seed=4)
    mix = scene.mixtures["m2"]
    theta = np.column_stack([scene.mu[e].values for e in scene.design.endmember_ids])
    b = mix.weights
    sig = sigma_j_hat(scene.mu["m2"].values, theta, b, 3, 0.0016, 1e-4, [1e-4] * 3)
    rows = mix.matrix.copy()
    rows[:, 100] += 20 * sig[100]
    rows[:, 200] -= 20 * sig[200]

    shifted = ReplicateSet.from_matrix("m2", rows, scene.mu["m2"], b)
    res = run_mixtest(TestInputs(shifted, scene.endmembers, 0.0016, 1e-4, [1e-4] * 3))
    assert res.rejected[100] and res.sign[100] == 1
    assert res.rejected[200] and res.sign[200] == -1


def test_inputs_validation():
    mix, ends = _exact_mixture_scene()
    with pytest.raises(ValidationError):
        TestInputs(mix, ends, 0.0, 0.0, [0.0])
    with pytest.raises(ValidationError):
        TestInputs(mix, ends, -1.0, 0.0, [0.0, 0.0])
    with pytest.raises(ValidationError):
        TestInputs(mix, ends[:1], 0.0, 0.0, [0.0])


def test_low_signal_pixels_untestable():
    ends = [make_set([[1.0, 2.0, 0.0]] * 3, "e1"), make_set([[2.0, 1.0, 0.0]] * 3, "e2")]
    rng = np.random.default_rng(0)
    mix = make_set([[1.5, 1.5, 0.0] + rng.normal(0, 0.01, 3) * [1, 1, 0] for _ in range(3)],
                   "m", weights=[0.5, 0.5])
    res = run_mixtest(TestInputs(mix, ends, 0.0016, 1e-4, [1e-4, 1e-4]), floor=1e-6)
    assert res.testable.tolist() == [True, True, False]
    assert np.isnan(res.z[2]) and not res.rejected[2]
    res = run_mixtest(TestInputs(mix, ends, 0.0016, 1e-4, [1e-4, 1e-4]), floor=10.0)
    assert res.n_testable == 0 and res.n_rejected == 0
