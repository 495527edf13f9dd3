import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfradar.channel import steering_matrix
from nfradar.estimator import (
    AllPointsFailedError,
    ConcentratedLikelihood,
    EstimationResult,
    RankDeficientError,
    SearchRegion,
    TraceEntry,
    aco_localize,
    aml_coefficients,
    concentrated_nll,
    estimate_noise_cov,
    grid_search_single,
    residual_logdet,
)
from nfradar.scene import Target
from nfradar.synth import simulate_received
from nfradar.verify import random_scene
from nfradar.waveform import generate_isotropic


def _model(scene, X):
    lam = scene.wavelength
    A = steering_matrix(scene.rx.elements, scene.positions, lam, scene.rx.gain)
    V = steering_matrix(scene.tx.elements, scene.positions, lam, scene.tx.gain)
    return A, V.T @ X.data


@pytest.fixture
def setup(two_target_scene):
    sc = two_target_scene
    X = generate_isotropic(sc.N, 24, 1.0, seed=0)
    return sc, X


# -- AML coefficients -------------------------------------------------------

def test_aml_noiseless_exact(setup):
    sc, X = setup
    A, S = _model(sc, X)
    Y = (A * sc.coeffs) @ S
    b = aml_coefficients(Y, A, S, loading=1e-10)
    np.testing.assert_allclose(b, sc.coeffs, rtol=1e-6)


def test_aml_single_target_scalar_reduction(rng):
    M, L = 5, 6
    a = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    s = np.zeros(L, complex)
    s[0] = 2.0
    S = s[None, :]
    Y = rng.standard_normal((M, L)) + 1j * rng.standard_normal((M, L))
    b = aml_coefficients(Y, a[:, None], S)[0]
    # scalar form: (a^H J^-1 Y s^H) / ((a^H J^-1 a) |s|^2)
    YYh = Y @ Y.conj().T
    proj = np.outer(Y @ s.conj(), (Y @ s.conj()).conj()) / np.vdot(s, s)
    J = (YYh - proj) / L
    J = J + (1e-9 * np.trace(J).real / M + 1e-12 * np.trace(YYh).real / (L * M)) * np.eye(M)
    Ji_a = np.linalg.solve(J, a)
    expected = np.vdot(Ji_a, Y @ s.conj()) / (np.vdot(a, Ji_a) * np.vdot(s, s))
    assert b == pytest.approx(expected, rel=1e-10)


def test_aml_zero_data(setup):
    sc, X = setup
    A, S = _model(sc, X)
    np.testing.assert_array_equal(aml_coefficients(np.zeros((sc.M, X.L)), A, S), 0)


def test_aml_rank_deficient(rng):
    Y = rng.standard_normal((4, 2)) + 0j
    A = rng.standard_normal((4, 3)) + 0j
    S = rng.standard_normal((3, 2)) + 0j  # K > L
    with pytest.raises(RankDeficientError):
        aml_coefficients(Y, A, S)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(0.01, 100))
def test_aml_equivariance(seed, alpha):
    rng = np.random.default_rng(seed)
    M, K, L = 6, 3, 10
    A = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
    S = rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))
    Z = 0.1 * (rng.standard_normal((M, L)) + 1j * rng.standard_normal((M, L)))
    b0 = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    Y = (A * b0) @ S + Z
    b = aml_coefficients(Y, A, S)
    perm = rng.permutation(K)
    np.testing.assert_allclose(aml_coefficients(Y, A[:, perm], S[perm]), b[perm], rtol=1e-8, atol=1e-10)
    Yn = (A * b0) @ S
    np.testing.assert_allclose(aml_coefficients(alpha * Yn, A, S), alpha * aml_coefficients(Yn, A, S),
                               rtol=1e-6)


# -- noise covariance and f3 -------------------------------------------------

def test_noise_cov_examples(setup):
    sc, X = setup
    Y = simulate_received(sc, X, seed=1).data
    Q0 = estimate_noise_cov(Y, X.data, sc.positions, np.zeros(2), sc.tx, sc.rx, sc.wavelength)
    np.testing.assert_allclose(Q0, Y @ Y.conj().T / X.L, rtol=1e-12)
    Yn = simulate_received(sc, X, noise=False).data
    Qn = estimate_noise_cov(Yn, X.data, sc.positions, sc.coeffs, sc.tx, sc.rx, sc.wavelength)
    assert np.linalg.norm(Qn) < 1e-10 * np.linalg.norm(Yn) ** 2 / X.L


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_noise_cov_hermitian_psd(seed):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, 6, 5, 2)
    X = generate_isotropic(sc.N, 12, 1.0, seed=seed)
    Y = simulate_received(sc, X, seed=seed).data
    b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    P = sc.positions + rng.uniform(-0.3, 0.3, (2, 3))
    Q = estimate_noise_cov(Y, X.data, P, b, sc.tx, sc.rx, sc.wavelength)
    np.testing.assert_array_equal(Q, Q.conj().T)
    assert np.linalg.eigvalsh(Q).min() >= -1e-12 * np.trace(Q).real


def test_residual_logdet_identity():
    ld, phi = residual_logdet(np.eye(4), floor=0.0)
    assert ld == 0.0
    assert phi > 0


def test_f3_minimum_at_truth(setup):
    sc, X = setup
    Y = simulate_received(sc, X, noise=False).data
    args = (sc.tx, sc.rx, sc.wavelength)
    at_truth = concentrated_nll(Y, X, sc.positions, *args)
    off = sc.positions + np.array([[0.5, 0, 0], [0, 0, 0]])
    assert at_truth < concentrated_nll(Y, X, off, *args)


def test_f3_permutation_symmetry(setup):
    sc, X = setup
    Y = simulate_received(sc, X, seed=4).data
    args = (sc.tx, sc.rx, sc.wavelength)
    assert concentrated_nll(Y, X, sc.positions[::-1], *args) == pytest.approx(
        concentrated_nll(Y, X, sc.positions, *args), rel=1e-10)


def test_f3_scale_leaves_argmin(setup):
    sc, X = setup
    Y = simulate_received(sc, X, seed=3).data
    cands = sc.positions[0] + np.random.default_rng(0).uniform(-0.5, 0.5, (30, 3))
    ev1 = ConcentratedLikelihood(Y, X, sc.tx, sc.rx, sc.wavelength)
    ev2 = ConcentratedLikelihood(7.0 * Y, X, sc.tx, sc.rx, sc.wavelength)
    v1 = ev1.values(sc.positions[1:], 0, cands)
    v2 = ev2.values(sc.positions[1:], 0, cands)
    assert np.argmin(v1) == np.argmin(v2)


# L >= M uses the whitened path. With L < M the residual Gram matrix has M - L
# zero eigenvalues held at the log-det floor, so f3 is only defined to the
# relative precision of that floor.
@pytest.mark.parametrize("L,rtol", [(24, 1e-8), (12, 1e-5)])
def test_batched_evaluator_matches_reference(two_target_scene, L, rtol):
    sc = two_target_scene
    X = generate_isotropic(sc.N, L, 1.0, mode="gaussian", seed=1)
    Y = simulate_received(sc, X, seed=2).data
    ev = ConcentratedLikelihood(Y, X, sc.tx, sc.rx, sc.wavelength)
    cands = np.random.default_rng(5).uniform([-1, -1, 2], [1, 1, 5], (40, 3))
    got = ev.values(sc.positions[1:], 0, cands)
    ref = [concentrated_nll(Y, X, np.vstack([c, sc.positions[1]]), sc.tx, sc.rx, sc.wavelength)
           for c in cands]
    np.testing.assert_allclose(got, ref, rtol=rtol)
    direct = ConcentratedLikelihood(Y, X, sc.tx, sc.rx, sc.wavelength, fast=False)
    np.testing.assert_allclose(direct.values(sc.positions[1:], 0, cands), ref, rtol=rtol)


def test_evaluator_marks_singular_candidates(setup):
    sc, X = setup
    Y = simulate_received(sc, X, seed=2).data
    ev = ConcentratedLikelihood(Y, X, sc.tx, sc.rx, sc.wavelength)
    vals = ev.values(np.empty((0, 3)), 0, np.vstack([sc.rx.elements[0], [0.0, 0.0, 3.0]]))
    assert not np.isfinite(vals[0]) and np.isfinite(vals[1])


# -- grid search -------------------------------------------------------------

def test_schedule_arithmetic():
    r = SearchRegion((0, 0, 0), (10, 10, 10), counts=11, refine_counts=9, factor=4, stages=3)
    np.testing.assert_allclose(r.initial_pitch, 1.0)
    np.testing.assert_allclose(r.final_pitch, 1 / 16)


@pytest.mark.parametrize("kwargs", [
    dict(lower=(0, 0, 0), upper=(1, 0, 1)),
    dict(lower=(0, 0, 0), upper=(1, 1, 1), counts=1),
    dict(lower=(0, 0, 0), upper=(1, 1, 1), refine_counts=4),
    dict(lower=(0, 0, 0), upper=(1, 1, 1), factor=1.0),
    dict(lower=(0, 0, 0), upper=(1, 1, 1), stages=0),
])
def test_region_validation(kwargs):
    with pytest.raises(ValueError):
        SearchRegion(**kwargs)


@settings(max_examples=30, deadline=None)
@given(c=st.tuples(*[st.floats(-0.9, 0.9)] * 3), w=st.tuples(*[st.floats(0.2, 5.0)] * 3))
def test_quadratic_minimum(c, w):
    c, w = np.array(c), np.array(w)
    region = SearchRegion((-1, -1, -1), (1, 1, 1), counts=11, refine_counts=7, factor=4, stages=3)
    out = grid_search_single(lambda p: ((p - c) ** 2 * w).sum(axis=1), region)
    assert np.all(np.abs(out.position - c) <= region.final_pitch + 1e-12)


def test_quadratic_minimum_recenters_across_stage_box():
    region = SearchRegion((0, 0, 0), (1, 1, 1), counts=3, refine_counts=3, factor=2, stages=5)
    c = np.array([0.26, 0.74, 0.49])
    out = grid_search_single(lambda p: ((p - c) ** 2).sum(axis=1), region)
    assert np.all(np.abs(out.position - c) <= region.final_pitch)


def test_constant_objective_lexicographic_tie():
    region = SearchRegion((-1, 0, 2), (1, 3, 4), counts=5, stages=2)
    out = grid_search_single(lambda p: np.zeros(len(p)), region)
    np.testing.assert_array_equal(out.position, [-1, 0, 2])


def test_failed_points_skipped_and_all_failed():
    region = SearchRegion((0, 0, 0), (1, 1, 1), counts=3, stages=1)

    def obj(p):
        v = p.sum(axis=1)
        v[v < 0.1] = np.nan
        return v
    out = grid_search_single(obj, region)
    assert out.position.sum() == pytest.approx(0.5)

    def boom(p):
        raise RuntimeError("nope")
    with pytest.raises(AllPointsFailedError):
        grid_search_single(boom, region)


def test_exclusion_and_incumbent():
    region = SearchRegion((0, 0, 0), (1, 1, 1), counts=3, stages=1)
    f = lambda p: (p ** 2).sum(axis=1)  # noqa: E731
    out = grid_search_single(f, region, exclude=[[0, 0, 0]], exclude_radius=0.1)
    assert not np.allclose(out.position, 0)
    inc = np.array([0.01, 0.02, 0.0])
    out = grid_search_single(lambda p: ((p - inc) ** 2).sum(axis=1), region, incumbent=inc)
    np.testing.assert_array_equal(out.position, inc)
    assert out.value == 0.0


# -- cyclic localization ------------------------------------------------------

def _region(sc):
    return SearchRegion((-1.0, -1.0, 2.5), (1.0, 1.0, 4.5), counts=11, refine_counts=7, factor=4,
                        stages=3)


def test_localize_single_target_noiseless(two_target_scene):
    sc = two_target_scene.with_targets([Target((0.4, 0.2, 3.3), 1 - 0.5j)])
    X = generate_isotropic(sc.N, 24, 1.0, seed=0)
    Y = simulate_received(sc, X, noise=False)
    region = _region(sc)
    res = aco_localize(Y, X, sc.tx, sc.rx, sc.wavelength, 1, region)
    assert np.all(np.abs(res.positions[0] - sc.positions[0]) <= region.final_pitch + 1e-12)
    assert res.converged and res.cycles == 0
    assert [e.phase for e in res.trace] == ["add"]


def test_localize_two_targets(two_target_scene):
    # high SNR narrows the f3 basin below the stage-1 pitch, so targets sit on stage-1 nodes
    sc = two_target_scene.with_targets([Target((0.4, 0.2, 3.1), 1 + 0.5j),
                                        Target((-0.6, -0.2, 3.9), -0.8 + 0.6j)]).with_noise(1e-9)
    X = generate_isotropic(sc.N, 24, 1.0, seed=0)
    Y = simulate_received(sc, X, seed=7)
    region = _region(sc)
    res = aco_localize(Y, X, sc.tx, sc.rx, sc.wavelength, 2, region)
    assert res.converged
    assert res.descent_violations() == []
    order = np.argsort(res.positions[:, 2])
    assert np.all(np.abs(res.positions[order] - sc.positions) <= region.final_pitch)
    np.testing.assert_allclose(res.coeffs[order], sc.coeffs, rtol=1e-2)
    assert res.Q_hat.shape == (16, 16)
    assert res.trace[0].phase == "add" and res.trace[1].phase == "add"
    assert all(e.phase == "cycle" for e in res.trace[2:])
    assert len(res.trace) == 2 + res.cycles
    d = res.to_dict()
    assert d["converged"] and len(d["positions"]) == 2


def test_localize_max_cycles_flag(two_target_scene):
    sc = two_target_scene.with_noise(1e-4)
    X = generate_isotropic(sc.N, 24, 1.0, seed=0)
    Y = simulate_received(sc, X, seed=7)
    res = aco_localize(Y, X, sc.tx, sc.rx, sc.wavelength, 2, _region(sc), max_cycles=1)
    assert not res.converged
    assert res.cycles == 1


def test_localize_argument_checks(setup):
    sc, X = setup
    Y = simulate_received(sc, X, seed=1)
    with pytest.raises(ValueError):
        aco_localize(Y, X, sc.tx, sc.rx, sc.wavelength, 0, _region(sc))
    with pytest.raises(ValueError):
        aco_localize(Y, X, sc.tx, sc.rx, sc.wavelength, 1, _region(sc), epsilon=0)


def test_descent_violations_detection():
    trace = [TraceEntry(0, 1, 0, "add", 5.0), TraceEntry(1, 2, 1, "add", 9.0),
             TraceEntry(2, 2, 0, "cycle", 4.0), TraceEntry(3, 2, 1, "cycle", 4.5)]
    res = EstimationResult(np.zeros((2, 3)), np.zeros(2), np.eye(2), trace)
    bad = res.descent_violations()
    assert len(bad) == 1 and bad[0][1].iteration == 3
