import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfradar.channel import build_steering_set, rx_steering, tx_steering
from nfradar.crb import (
    BLOCK_NAMES,
    IdentifiabilityError,
    assemble_fisher,
    channel_jacobian_crb_oracle,
    constant_amplitude_crb,
    crb_matrix,
    extended_fisher_oracle,
    fisher_blocks,
    numeric_fisher_oracle,
    position_crb,
    reference_coefficients,
    scene_fisher,
    scene_position_crbs,
)
from nfradar.numerics import NotPositiveDefiniteError
from nfradar.scene import ArrayGeometry, Scene, Target, build_upa
from nfradar.verify import random_scene
from nfradar.waveform import generate_isotropic, sample_covariance


def _random_X(rng, N, L):
    return (rng.standard_normal((N, L)) + 1j * rng.standard_normal((N, L))) / np.sqrt(2)


def _zero_b(scene):
    return scene.with_targets([Target(t.position, 0j) for t in scene.targets])


def test_zero_coefficients(small_scene, rng):
    X = _random_X(rng, small_scene.N, 8)
    R = sample_covariance(X)
    full = scene_fisher(small_scene, R, 8, invert=False).blocks
    zero = scene_fisher(_zero_b(small_scene), R, 8, invert=False)
    np.testing.assert_array_equal(zero.blocks["bb"], full["bb"])
    for name in BLOCK_NAMES[:-1]:
        np.testing.assert_array_equal(zero.blocks[name], 0)
    np.testing.assert_array_equal(zero.fisher[:6], 0)  # x, y, z rows for K = 2
    np.testing.assert_array_equal(zero.fisher[:, :6], 0)
    F_num = numeric_fisher_oracle(_zero_b(small_scene), X)
    assert np.abs(F_num[:6]).max() < 1e-6 * np.abs(F_num).max()


def test_scalar_scene():
    one = ArrayGeometry(np.zeros((1, 3)))
    sc = Scene(one, one, [Target((0.3, 0.0, 2.0), 1 + 1j)], 299792458.0, 0.5)
    L = 7
    R = np.array([[2.0]])
    a = rx_steering(one, sc.positions[0], sc.wavenumber)[0]
    v = tx_steering(one, sc.positions[0], sc.wavenumber)[0]
    bb = scene_fisher(sc, R, L, invert=False).blocks["bb"]
    assert bb.shape == (1, 1)
    assert bb[0, 0] == pytest.approx(L * abs(a) ** 2 * abs(v) ** 2 * 2.0 / 0.5, rel=1e-12)


def test_assemble_unit_blocks():
    blocks = {n: np.array([[1 + 0j]]) for n in BLOCK_NAMES}
    expected = 2 * np.array([[1, 1, 1, 1, 0]] * 4 + [[0, 0, 0, 0, 1]], dtype=float)
    np.testing.assert_array_equal(assemble_fisher(blocks), expected)


def test_assemble_zero_and_symmetric(rng):
    K = 3
    zero = {n: np.zeros((K, K), complex) for n in BLOCK_NAMES}
    np.testing.assert_array_equal(assemble_fisher(zero), 0)
    blocks = {}
    for n in BLOCK_NAMES:
        B = rng.standard_normal((K, K)) + 1j * rng.standard_normal((K, K))
        # diagonal-pair blocks are Hermitian in any real scene
        blocks[n] = B + B.conj().T if n in ("xx", "yy", "zz", "bb") else B
    F = assemble_fisher(blocks)
    assert F.shape == (5 * K, 5 * K)


def test_crb_matrix_examples():
    C, cond = crb_matrix(2 * np.eye(5))
    np.testing.assert_allclose(C, 0.5 * np.eye(5))
    assert cond == pytest.approx(1.0)


def test_crb_matrix_errors():
    with pytest.raises(IdentifiabilityError, match="eigenvalue"):
        crb_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]) + np.diag([0.0, 1e-14]))
    with pytest.raises(IdentifiabilityError):
        crb_matrix(np.diag([1.0, 0.0]))
    with pytest.raises(IdentifiabilityError):
        crb_matrix(np.array([[np.nan]]))


def test_coincident_targets_not_identifiable(small_scene, rng):
    t = small_scene.targets[0]
    sc = small_scene.with_targets([t, Target(t.position, 2 * t.coeff)])
    with pytest.raises(IdentifiabilityError):
        scene_fisher(sc, sample_covariance(_random_X(rng, sc.N, 8)), 8)


def test_position_crb_examples():
    assert position_crb(np.diag([1.0, 2, 3, 4, 5]), 0) == 6.0
    assert position_crb(np.diag(np.arange(1.0, 11)), 0) == 9.0
    assert position_crb(np.diag(np.arange(1.0, 11)), 1) == 2 + 4 + 6
    with pytest.raises(IndexError):
        position_crb(np.eye(5), 1)
    with pytest.raises(IndexError):
        position_crb(np.eye(5), -1)


def test_fisher_matches_oracle_small(rng):
    sc = random_scene(rng, 4, 4, 2)
    X = _random_X(rng, 4, 8)
    F = scene_fisher(sc, sample_covariance(X), 8, invert=False).fisher
    F_num = numeric_fisher_oracle(sc, X)
    assert np.linalg.norm(F - F_num) / np.linalg.norm(F_num) < 1e-5


def test_oracle_noise_scaling(rng):
    sc = random_scene(rng, 4, 3, 1, white=True, sigma2=0.8)
    X = _random_X(rng, 3, 6)
    np.testing.assert_allclose(numeric_fisher_oracle(sc, X, 0.2), 4 * numeric_fisher_oracle(sc, X, 0.8),
                               rtol=1e-12)
    with pytest.raises(ValueError):
        numeric_fisher_oracle(sc, X, step=0.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_fisher_invariants(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    sc = random_scene(rng, int(rng.integers(3, 7)), int(rng.integers(3, 7)), K)
    L = int(rng.integers(4, 10))
    X = _random_X(rng, sc.N, L)
    bundle = scene_fisher(sc, sample_covariance(X), L, invert=False)
    F = bundle.fisher
    assert np.abs(F - F.T).max() <= 1e-10 * np.abs(F).max()
    assert np.linalg.eigvalsh(F).min() >= -1e-8 * np.trace(F)
    try:
        C, cond = crb_matrix(F)
    except IdentifiabilityError:
        return
    err = np.abs(C @ F - np.eye(5 * K)).max()
    assert err < 1e-8 * max(1.0, np.linalg.cond(F) * 1e-6)
    # scaling F by alpha scales the CRB by 1/alpha, up to rounding amplified by the condition number
    C3, _ = crb_matrix(3.0 * F)
    tol = max(1e-12, 1e-14 * cond)
    assert np.abs(C3 - C / 3.0).max() <= tol * np.abs(C).max()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s2=st.floats(1e-3, 1e3))
def test_noise_and_length_scaling(seed, s2):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, 5, 4, 2, white=True, sigma2=1.0)
    R = sample_covariance(generate_isotropic(4, 8, 1.0, seed=seed))
    f1 = scene_fisher(sc, R, 8, invert=False).fisher
    fs = scene_fisher(sc.with_noise(s2), R, 8, invert=False).fisher
    np.testing.assert_allclose(fs, f1 / s2, rtol=1e-12, atol=1e-15 * np.abs(f1).max() / s2)
    f2 = scene_fisher(sc, R, 16, invert=False).fisher
    np.testing.assert_allclose(f2, 2 * f1, rtol=1e-12, atol=1e-15 * np.abs(f1).max())


def test_permutation_invariance(rng):
    sc = random_scene(rng, 6, 5, 3)
    R = sample_covariance(_random_X(rng, 5, 10))
    base = scene_position_crbs(sc, R, 10)
    perm = [2, 0, 1]
    swapped = sc.with_targets([sc.targets[i] for i in perm])
    np.testing.assert_allclose(scene_position_crbs(swapped, R, 10), base[perm], rtol=1e-8)


def test_fisher_blocks_rejects_non_pd(small_scene, rng):
    st_ = build_steering_set(small_scene)
    R = sample_covariance(_random_X(rng, small_scene.N, 8))
    with pytest.raises(NotPositiveDefiniteError):
        fisher_blocks(st_, small_scene.coeffs, R, -np.eye(small_scene.M), 8)


def test_noise_block_decouples(rng):
    """Cross-information between target parameters and Q perturbations is zero."""
    sc = random_scene(rng, 3, 3, 1)
    X = _random_X(rng, 3, 4)
    H1 = np.diag([1.0, 0.0, 0.0]).astype(complex)
    H2 = np.zeros((3, 3), complex)
    H2[0, 1], H2[1, 0] = 0.3 + 0.2j, 0.3 - 0.2j
    F = extended_fisher_oracle(sc, X, [H1, H2])
    cross = F[:5, 5:]
    assert np.abs(cross).max() < 1e-6 * np.abs(F[:5, :5]).max()
    F_theta = scene_fisher(sc, sample_covariance(X), 4, invert=False).fisher
    assert np.linalg.norm(F[:5, :5] - F_theta) / np.linalg.norm(F_theta) < 1e-5


def test_reference_coefficients_zero_maps_to_zero(two_target_scene):
    sc = _zero_b(two_target_scene)
    np.testing.assert_array_equal(reference_coefficients(sc), 0)


def _upa_scene(distance, lam=1.0):
    rx = build_upa(8, 8, lam / 2)
    tx = build_upa(8, 8, lam / 2)
    return Scene(tx, rx, [Target((0.0, 0.0, distance), 1.0)], 299792458.0 / lam, 1e-2)


def test_constant_model_converges_far_away():
    sc = _upa_scene(200 * build_upa(8, 8, 0.5).aperture)
    R = np.eye(64)
    exact = scene_position_crbs(sc, R, 64, max_condition=1e16)
    const = constant_amplitude_crb(sc, R, 64, max_condition=1e16)
    assert abs(const[0] / exact[0] - 1) < 0.05


def test_constant_model_deviates_up_close():
    sc = _upa_scene(build_upa(8, 8, 0.5).aperture)
    R = np.eye(64)
    ratio = constant_amplitude_crb(sc, R, 64)[0] / scene_position_crbs(sc, R, 64)[0]
    assert abs(ratio - 1) > 0.10


def test_channel_jacobian_oracle_agrees(rng):
    sc = random_scene(rng, 5, 4, 2, white=True, sigma2=0.3)
    got = channel_jacobian_crb_oracle(sc, 12, power=2.0)
    ref = scene_position_crbs(sc, 2.0 * np.eye(4), 12)
    np.testing.assert_allclose(got, ref, rtol=1e-8)
    with pytest.raises(ValueError):
        channel_jacobian_crb_oracle(random_scene(rng, 3, 3, 1), 4)
