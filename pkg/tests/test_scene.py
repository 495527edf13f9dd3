import numpy as np
import pytest
from scipy.spatial.distance import pdist

from nfradar.scene import ArrayGeometry, Scene, Target, build_upa, wavelength


def test_wavelength_values():
    assert wavelength(299792458.0) == 1.0
    assert wavelength(28e9) == pytest.approx(0.0107068735, rel=1e-9)
    assert wavelength(0.625e9) == pytest.approx(0.479667933, rel=1e-9)


@pytest.mark.parametrize("f", [0.0, -1.0])
def test_wavelength_rejects_nonpositive(f):
    with pytest.raises(ValueError):
        wavelength(f)


def test_upa_single_element():
    arr = build_upa(1, 1, 0.5)
    np.testing.assert_array_equal(arr.elements, [[0.0, 0.0, 0.0]])


def test_upa_2x2():
    arr = build_upa(2, 2, 1.0)
    got = {tuple(p) for p in arr.elements}
    assert got == {(-0.5, -0.5, 0.0), (0.5, -0.5, 0.0), (-0.5, 0.5, 0.0), (0.5, 0.5, 0.0)}
    np.testing.assert_array_equal(arr.reference, [0.0, 0.0, 0.0])


def test_upa_large():
    arr = build_upa(16, 768, wavelength(28e9) / 2)
    assert arr.size == 12288


@pytest.mark.parametrize("rows,cols,spacing,plane", [(3, 4, 0.2, "xy"), (2, 5, 1.5, "xz"), (4, 1, 0.1, "yz")])
def test_upa_count_spacing_and_plane(rows, cols, spacing, plane):
    center = np.array([1.0, -2.0, 0.5])
    arr = build_upa(rows, cols, spacing, center, plane)
    assert arr.size == rows * cols
    assert pdist(arr.elements).min() == pytest.approx(spacing, rel=1e-12)
    np.testing.assert_allclose(arr.elements.mean(axis=0), center, atol=1e-12)
    normal = {"xy": 2, "xz": 1, "yz": 0}[plane]
    np.testing.assert_allclose(arr.elements[:, normal], center[normal])


@pytest.mark.parametrize("args", [(0, 2, 1.0), (2, 0, 1.0), (2, 2, 0.0), (2, 2, -1.0)])
def test_upa_rejects_bad_dimensions(args):
    with pytest.raises(ValueError):
        build_upa(*args)


def test_array_rejects_duplicates_and_negative_gain():
    with pytest.raises(ValueError):
        ArrayGeometry(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ArrayGeometry(np.eye(3), gain=-1.0)


def test_array_reference_defaults_to_centroid():
    arr = ArrayGeometry(np.array([[0.0, 0, 0], [2.0, 0, 0], [1.0, 3.0, 0]]))
    np.testing.assert_allclose(arr.reference, [1.0, 1.0, 0.0])
    assert arr.gain == 1.0


def test_target_rejects_nonfinite():
    with pytest.raises(ValueError):
        Target((0.0, np.nan, 1.0))
    with pytest.raises(ValueError):
        Target((0.0, 0.0, 1.0), complex(np.inf, 0))


def test_scene_noise_validation():
    arr = build_upa(2, 1, 0.5)
    t = [Target((0, 0, 2.0))]
    Scene(arr, arr, t, 1e9, np.eye(2))
    with pytest.raises(ValueError):
        Scene(arr, arr, t, 1e9, np.eye(3))  # wrong size
    with pytest.raises(ValueError):
        Scene(arr, arr, t, 1e9, np.array([[1.0, 0.5], [0.0, 1.0]]))  # not Hermitian
    with pytest.raises(np.linalg.LinAlgError):
        Scene(arr, arr, t, 1e9, np.diag([1.0, -1.0]))  # not PD
    with pytest.raises(ValueError):
        Scene(arr, arr, t, 0.0, 1.0)


def test_scene_accessors(two_target_scene):
    sc = two_target_scene
    assert (sc.M, sc.N, sc.K) == (16, 16, 2)
    assert sc.wavelength == 1.0
    assert sc.wavenumber == pytest.approx(2 * np.pi)
    np.testing.assert_array_equal(sc.noise_matrix(), 1e-2 * np.eye(16))
    assert sc.with_noise(1e-2) == sc
    assert sc.with_noise(2e-2) != sc
