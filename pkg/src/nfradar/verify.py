"""Built-in oracle checks: closed-form Fisher vs finite differences, steering
derivatives vs finite differences, and CRB scaling laws."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import AMPLITUDE_MODELS, AXES, steering_derivative, tx_steering
from .crb import numeric_fisher_oracle, scene_fisher, scene_position_crbs
from .scene import ArrayGeometry, Scene, Target
from .waveform import generate_isotropic, sample_covariance

# carrier giving a 1 m wavelength for the random scenes
UNIT_WAVELENGTH_HZ = 299792458.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    seconds: float
    cases: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name}: worst {self.worst:.3e} (tol {self.tol:.0e}), "
                f"{self.cases} cases, {self.seconds:.2f} s")


def random_pd(rng, M, spread=1.0):
    """Random Hermitian PD matrix with a moderate condition number."""
    B = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    Q = spread * (B @ B.conj().T) / M + np.eye(M)
    return 0.5 * (Q + Q.conj().T)


def random_scene(rng, M, N, K, white=False, sigma2=1.0):
    """Random bistatic scene with a 1 m wavelength.

    Elements lie in a thin slab around z = 0 and targets in ``[-1, 1]^2 x [2, 4]``.
    """
    rx = ArrayGeometry(rng.uniform([-1, -1, -0.1], [1, 1, 0.1], (M, 3)), gain=rng.uniform(0.5, 2))
    tx = ArrayGeometry(rng.uniform([-1, -1, -0.1], [1, 1, 0.1], (N, 3)), gain=rng.uniform(0.5, 2))
    pos = rng.uniform([-1, -1, 2], [1, 1, 4], (K, 3))
    coeff = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    Q = sigma2 if white else random_pd(rng, M)
    return Scene(tx, rx, [Target(p, c) for p, c in zip(pos, coeff)], UNIT_WAVELENGTH_HZ, Q)


def check_fisher_oracle(n_scenes=20, seed=0, tol=1e-5) -> CheckResult:
    """Closed-form Fisher matrix against the finite-difference oracle."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_scenes):
        M, N = rng.integers(3, 7, size=2)
        K = int(rng.integers(1, 4))
        L = int(rng.integers(4, 13))
        sc = random_scene(rng, int(M), int(N), K)
        X = (rng.standard_normal((N, L)) + 1j * rng.standard_normal((N, L))) / np.sqrt(2)
        F = scene_fisher(sc, sample_covariance(X), L, invert=False).fisher
        F_num = numeric_fisher_oracle(sc, X)
        err = np.linalg.norm(F - F_num) / np.linalg.norm(F_num)
        worst = max(worst, float(err))
    return CheckResult("fisher closed form vs finite differences", worst < tol, worst, tol,
                       time.perf_counter() - t0, n_scenes)


def _fd_gradient(el, target, k, model, h):
    arr = ArrayGeometry(el[None, :], gain=1.3)
    g = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g.append((tx_steering(arr, target + e, k, model)[0] - tx_steering(arr, target - e, k, model)[0])
                 / (2 * h))
    return np.array(g)


def check_derivatives(n_pairs=100, seed=1, tol=1e-5) -> CheckResult:
    """Analytic steering derivatives against central differences, both amplitude models."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    for _ in range(n_pairs):
        el = rng.uniform(-1, 1, 3)
        direction = rng.standard_normal(3)
        target = el + rng.uniform(0.5, 5.0) * direction / np.linalg.norm(direction)
        lam = 10 ** rng.uniform(-2, 0)
        k = 2 * np.pi / lam
        h = min(1e-6 * np.linalg.norm(target - el), 1e-4 / k)
        arr = ArrayGeometry(el[None, :], gain=1.3)
        for model in AMPLITUDE_MODELS:
            an = np.array([steering_derivative(arr, target, k, ax, model)[0] for ax in AXES])
            fd = _fd_gradient(el, target, k, model, h)
            worst = max(worst, float(np.linalg.norm(an - fd) / np.linalg.norm(an)))
            cases += 1
    return CheckResult("steering derivatives vs finite differences", worst < tol, worst, tol,
                       time.perf_counter() - t0, cases)


def check_scaling(seed=2, tol=1e-9) -> CheckResult:
    """``CRB`` is linear in the white-noise variance and inversely proportional to L."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    for _ in range(5):
        K = int(rng.integers(1, 3))
        sc = random_scene(rng, 6, 5, K, white=True, sigma2=1.0)
        L = 8
        X = generate_isotropic(sc.N, L, 1.0, "unitary", int(rng.integers(1 << 31)))
        base = scene_position_crbs(sc, sample_covariance(X), L)
        for s2 in (1e-3, 0.37, 25.0):
            got = scene_position_crbs(sc.with_noise(s2), sample_covariance(X), L)
            worst = max(worst, float(np.max(np.abs(got / base / s2 - 1))))
            cases += 1
        X2 = np.hstack([X.data, X.data])
        got = scene_position_crbs(sc, sample_covariance(X2), 2 * L)
        worst = max(worst, float(np.max(np.abs(got / base / 0.5 - 1))))
        cases += 1
    return CheckResult("CRB scaling in noise variance and snapshots", worst < tol, worst, tol,
                       time.perf_counter() - t0, cases)


def run_all(quick: bool = False) -> list:
    if quick:
        return [check_fisher_oracle(5), check_derivatives(20), check_scaling()]
    return [check_fisher_oracle(), check_derivatives(), check_scaling()]
