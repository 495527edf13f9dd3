"""Received-data simulation and SNR bookkeeping."""

from __future__ import annotations

import numpy as np

from .channel import EXACT, steering_matrix
from .numerics import NotPositiveDefiniteError, chol_hermitian
from .waveform import RECEIVE, SignalBlock


def _data(X):
    return X.data if isinstance(X, SignalBlock) else np.asarray(X, dtype=complex)


def draw_noise(Q, L: int, seed=None, M: int | None = None) -> SignalBlock:
    """``M x L`` matrix whose columns are i.i.d. CN(0, Q).

    ``Q`` may be a positive scalar (white noise; pass ``M``) or a Hermitian PD
    matrix, which is applied as a Cholesky coloring of standard CN(0, I) draws.
    """
    rng = np.random.default_rng(seed)
    if np.ndim(Q) == 0:
        if M is None:
            raise ValueError("M is required with a scalar noise variance")
        if not Q > 0:
            raise NotPositiveDefiniteError(f"noise variance must be positive, got {Q}")
        scale = np.sqrt(Q)
        color = None
    else:
        color = chol_hermitian(np.asarray(Q, dtype=complex))
        M = color.shape[0]
    w = (rng.standard_normal((M, L)) + 1j * rng.standard_normal((M, L))) / np.sqrt(2.0)
    z = w * scale if color is None else color @ w
    return SignalBlock(z, RECEIVE)


def noiseless_signal(scene, X) -> np.ndarray:
    """``A diag(b) V^T X`` under the exact-amplitude model."""
    X = _data(X)
    if X.shape[0] != scene.N:
        raise ValueError(f"waveform has {X.shape[0]} rows, scene has N={scene.N} tx elements")
    if scene.K == 0:
        return np.zeros((scene.M, X.shape[1]), dtype=complex)
    lam = scene.wavelength
    A = steering_matrix(scene.rx.elements, scene.positions, lam, scene.rx.gain, EXACT)
    V = steering_matrix(scene.tx.elements, scene.positions, lam, scene.tx.gain, EXACT)
    return (A * scene.coeffs) @ (V.T @ X)


def simulate_received(scene, X, seed=None, noise: bool = True) -> SignalBlock:
    """Draw ``Y = A diag(b) V^T X + Z`` with ``Z`` columns CN(0, Q)."""
    Y = noiseless_signal(scene, X)
    if noise:
        Y = Y + draw_noise(scene.noise_cov, Y.shape[1], seed, M=scene.M).data
    return SignalBlock(Y, RECEIVE)


def signal_energy(scene, X) -> float:
    """Mean per-snapshot noise-free energy ``sum_l ||A B V^T x_l||^2 / L``."""
    S = noiseless_signal(scene, X)
    return float(np.sum(np.abs(S) ** 2) / S.shape[1])


def empirical_snr(scene, X, Z):
    """Sample SNR ``sum ||A B V^T x_l||^2 / sum ||z_l||^2``, returned as (linear, dB)."""
    S = noiseless_signal(scene, X)
    Z = _data(Z)
    if Z.shape[1] != S.shape[1]:
        raise ValueError(f"signal has L={S.shape[1]} snapshots, noise has {Z.shape[1]}")
    noise_energy = np.sum(np.abs(Z) ** 2)
    if noise_energy <= 0:
        raise ZeroDivisionError("noise block has zero energy")
    snr = float(np.sum(np.abs(S) ** 2) / noise_energy)
    snr_db = 10.0 * np.log10(snr) if snr > 0 else -np.inf
    return snr, snr_db


def noise_for_snr(scene, X, snr_db: float):
    """Noise covariance giving the requested SNR for this scene and waveform.

    The expected noise energy per snapshot is ``tr(Q)``; Q keeps its shape and
    is rescaled so ``signal_energy / tr(Q)`` hits the target. A scalar Q stays
    scalar (``sigma2 = energy / (M * snr)``).
    """
    energy = signal_energy(scene, X)
    if energy <= 0:
        raise ValueError("scene has no signal energy; SNR is undefined")
    snr = 10.0 ** (snr_db / 10.0)
    if scene.white_noise:
        return energy / (scene.M * snr)
    Q = scene.noise_matrix()
    return Q * (energy / (snr * np.real(np.trace(Q))))
