"""Fisher information and Cramer-Rao bounds for near-field multi-target localization.

Parameter ordering for the real ``5K x 5K`` Fisher matrix is
``[x_1..x_K, y_1..y_K, z_1..z_K, Re b_1..Re b_K, Im b_1..Im b_K]``.

The noise covariance ``Q`` and transmit covariance ``R_X`` may each be given
as a full matrix or as a scalar multiple of the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .channel import CONSTANT, EXACT, build_steering_set, steering_matrix
from .numerics import NotPositiveDefiniteError, chol_hermitian

BLOCK_NAMES = ("xx", "yy", "zz", "xy", "xz", "yz", "xb", "yb", "zb", "bb")
DEFAULT_MAX_CONDITION = 1e12


class IdentifiabilityError(np.linalg.LinAlgError):
    """The Fisher matrix is singular or too ill-conditioned to invert."""


@dataclass(frozen=True)
class FisherBundle:
    blocks: dict
    fisher: np.ndarray
    crb: np.ndarray | None
    condition: float

    @property
    def K(self) -> int:
        return self.fisher.shape[0] // 5

    def position_crbs(self) -> np.ndarray:
        return np.array([position_crb(self.crb, k) for k in range(self.K)])


class _NoiseWhitener:
    """Applies ``Q^{-1}`` for a scalar or matrix Q."""

    def __init__(self, Q):
        if np.ndim(Q) == 0:
            if not Q > 0:
                raise NotPositiveDefiniteError(f"noise variance must be positive, got {Q}")
            self.scalar = float(np.real(Q))
            self.chol = None
        else:
            self.scalar = None
            self.chol = chol_hermitian(np.asarray(Q, dtype=complex))

    def solve(self, B):
        if self.chol is None:
            return B / self.scalar
        return la.cho_solve((self.chol, True), B, check_finite=False)


def _rx_conj(R_X, B):
    """``R_X^* @ B``."""
    if np.ndim(R_X) == 0:
        return float(np.real(R_X)) * B
    return np.conj(R_X) @ B


def fisher_blocks(steering, b, R_X, Q, L: int) -> dict:
    """The ten complex ``K x K`` Fisher blocks.

    Every block is a sum of Hadamard products of a receive-side Gram
    ``P^H Q^{-1} R`` with a transmit-side Gram ``P^H R_X^* R`` weighted by the
    reflection coefficients.
    """
    A, V, dA, dV = steering.A, steering.V, steering.dA, steering.dV
    b = np.asarray(b, dtype=complex).reshape(-1)
    K = A.shape[1]
    if b.shape != (K,) or V.shape[1] != K:
        raise ValueError("steering columns and coefficient count disagree")
    qi = _NoiseWhitener(Q)

    # receive side: stack [A, dAx, dAy, dAz] once, one solve for all
    rx_stack = np.concatenate([A, dA[0], dA[1], dA[2]], axis=1)
    rx_gram = rx_stack.conj().T @ qi.solve(rx_stack)
    tx_stack = np.concatenate([V, dV[0], dV[1], dV[2]], axis=1)
    tx_gram = tx_stack.conj().T @ _rx_conj(R_X, tx_stack)

    def g(i, j):  # 0 = A, 1..3 = dA_u
        return rx_gram[i * K:(i + 1) * K, j * K:(j + 1) * K]

    def h(i, j):
        return tx_gram[i * K:(i + 1) * K, j * K:(j + 1) * K]

    bb_w = np.outer(b.conj(), b)  # B^* M B  ->  M * conj(b_i) b_j
    bc = b.conj()[:, None]        # B^* M    ->  M * conj(b_i)

    blocks = {}
    for u in range(1, 4):
        for v in range(u, 4):
            name = "xyz"[u - 1] + "xyz"[v - 1]
            blocks[name] = L * (
                g(u, v) * (bb_w * h(0, 0))
                + g(u, 0) * (bb_w * h(0, v))
                + g(0, v) * (bb_w * h(u, 0))
                + g(0, 0) * (bb_w * h(u, v))
            )
    blocks["bb"] = L * g(0, 0) * h(0, 0)
    for u in range(1, 4):
        blocks["xyz"[u - 1] + "b"] = L * (g(u, 0) * (bc * h(0, 0)) + g(0, 0) * (bc * h(u, 0)))
    return {name: blocks[name] for name in BLOCK_NAMES}


def assemble_fisher(blocks: dict) -> np.ndarray:
    """Lay the complex blocks out as the real ``5K x 5K`` Fisher matrix."""
    R, I = np.real, np.imag
    F = blocks
    rows = [
        [R(F["xx"]), R(F["xy"]), R(F["xz"]), R(F["xb"]), -I(F["xb"])],
        [R(F["xy"].T), R(F["yy"]), R(F["yz"]), R(F["yb"]), -I(F["yb"])],
        [R(F["xz"].T), R(F["yz"].T), R(F["zz"]), R(F["zb"]), -I(F["zb"])],
        [R(F["xb"].T), R(F["yb"].T), R(F["zb"].T), R(F["bb"]), -I(F["bb"])],
        [-I(F["xb"].T), -I(F["yb"].T), -I(F["zb"].T), -I(F["bb"].T), R(F["bb"])],
    ]
    return 2.0 * np.block(rows)


def crb_matrix(fisher, max_condition: float = DEFAULT_MAX_CONDITION):
    """Invert the Fisher matrix, refusing singular or ill-conditioned input.

    The matrix is Jacobi-equilibrated first so the condition test and the
    inverse do not depend on the units of each parameter.

    Returns:
        ``(C, condition)`` where ``condition`` is that of the equilibrated matrix.

    Raises:
        IdentifiabilityError: naming the smallest eigenvalue when the
            equilibrated condition number exceeds ``max_condition``.
    """
    F = np.asarray(fisher, dtype=float)
    F = 0.5 * (F + F.T)
    d = np.diag(F)
    if np.any(~np.isfinite(F)):
        raise IdentifiabilityError("Fisher matrix has non-finite entries")
    if np.any(d <= 0):
        idx = int(np.argmin(d))
        raise IdentifiabilityError(f"parameter {idx} carries no information (Fisher diagonal {d[idx]:.3e})")
    s = 1.0 / np.sqrt(d)
    Fs = F * s[:, None] * s[None, :]
    eig = np.linalg.eigvalsh(Fs)
    lo, hi = eig[0], eig[-1]
    cond = np.inf if lo <= 0 else hi / lo
    if not cond <= max_condition:
        raise IdentifiabilityError(
            f"Fisher matrix is not invertible: smallest equilibrated eigenvalue {lo:.3e} "
            f"(largest {hi:.3e}, condition {cond:.3e} > {max_condition:.1e})"
        )
    c = la.cholesky(Fs, lower=True)
    Cs = la.cho_solve((c, True), np.eye(len(F)))
    C = Cs * s[:, None] * s[None, :]
    return 0.5 * (C + C.T), float(cond)


def position_crb(C, k: int) -> float:
    """Sum of the x, y, z variance bounds of target ``k`` (0-based), in m^2."""
    C = np.asarray(C)
    K = C.shape[0] // 5
    if not 0 <= k < K:
        raise IndexError(f"target index {k} out of range for K={K}")
    return float(C[k, k] + C[k + K, k + K] + C[k + 2 * K, k + 2 * K])


def position_crbs(C) -> np.ndarray:
    K = np.asarray(C).shape[0] // 5
    return np.array([position_crb(C, k) for k in range(K)])


def scene_fisher(scene, R_X, L: int, amplitude_model: str = EXACT, coeffs=None,
                 max_condition: float = DEFAULT_MAX_CONDITION, invert: bool = True) -> FisherBundle:
    """Fisher blocks, assembled matrix and (optionally) CRB for a scene."""
    st = build_steering_set(scene, amplitude_model=amplitude_model)
    b = scene.coeffs if coeffs is None else coeffs
    blocks = fisher_blocks(st, b, R_X, scene.noise_cov, L)
    F = assemble_fisher(blocks)
    if not invert:
        return FisherBundle(blocks, F, None, np.nan)
    C, cond = crb_matrix(F, max_condition)
    return FisherBundle(blocks, F, C, cond)


def scene_position_crbs(scene, R_X, L: int, **kwargs) -> np.ndarray:
    return scene_fisher(scene, R_X, L, **kwargs).position_crbs()


def reference_coefficients(scene) -> np.ndarray:
    """Fold round-trip path loss at the reference points into the coefficients.

    ``b~_k = (lambda / 4 pi)^2 sqrt(G_r G_t) / (|l_o^r - l_k| |l_o^t - l_k|) * b_k``.
    """
    lam = scene.wavelength
    P = scene.positions
    dr = np.linalg.norm(P - scene.rx.reference, axis=1)
    dt = np.linalg.norm(P - scene.tx.reference, axis=1)
    g = np.sqrt(scene.rx.gain * scene.tx.gain)
    return (lam / (4 * np.pi)) ** 2 * g / (dr * dt) * scene.coeffs


def constant_amplitude_crb(scene, R_X, L: int, max_condition: float = DEFAULT_MAX_CONDITION) -> np.ndarray:
    """Per-target position CRBs under the phase-only (constant amplitude) model."""
    bundle = scene_fisher(scene, R_X, L, amplitude_model=CONSTANT,
                          coeffs=reference_coefficients(scene), max_condition=max_condition)
    return bundle.position_crbs()


# ---------------------------------------------------------------------------
# finite-difference oracles (no closed-form blocks involved)


def _mean_matrix(positions, coeffs, scene, X, model=EXACT):
    lam = scene.wavelength
    A = steering_matrix(scene.rx.elements, positions, lam, scene.rx.gain, model)
    V = steering_matrix(scene.tx.elements, positions, lam, scene.tx.gain, model)
    return (A * coeffs) @ (V.T @ X)


def _theta(scene):
    P = scene.positions
    b = scene.coeffs
    return np.concatenate([P[:, 0], P[:, 1], P[:, 2], b.real, b.imag])


def _unpack(theta, K):
    P = np.stack([theta[:K], theta[K:2 * K], theta[2 * K:3 * K]], axis=1)
    b = theta[3 * K:4 * K] + 1j * theta[4 * K:]
    return P, b


def _default_steps(scene, rel_step):
    P = scene.positions
    el = np.vstack([scene.rx.elements, scene.tx.elements])
    near = np.array([np.linalg.norm(el - p, axis=1).min() for p in P])
    b = np.abs(scene.coeffs)
    return np.concatenate([np.tile(rel_step * near, 3), rel_step * (1 + b), rel_step * (1 + b)])


def mean_jacobian(scene, X, step: float = 1e-6, model: str = EXACT) -> np.ndarray:
    """Central-difference derivatives of ``A diag(b) V^T X`` w.r.t. each real parameter.

    Returns an array ``(5K, M, L)``.
    """
    X = np.asarray(getattr(X, "data", X), dtype=complex)
    K = scene.K
    theta = _theta(scene)
    h = _default_steps(scene, step)
    out = np.empty((5 * K, scene.M, X.shape[1]), dtype=complex)
    for i in range(5 * K):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h[i]
        tm[i] -= h[i]
        mp = _mean_matrix(*_unpack(tp, K), scene, X, model)
        mm = _mean_matrix(*_unpack(tm, K), scene, X, model)
        out[i] = (mp - mm) / (2 * h[i])
    return out


def numeric_fisher_oracle(scene, X, Q=None, step: float = 1e-6) -> np.ndarray:
    """Fisher matrix for the 5K target parameters from finite differences.

    Uses ``F_ij = 2 Re tr(dMu_i^H Q^{-1} dMu_j)`` with ``dMu`` the numerical
    derivative of the noise-free data matrix; no closed-form blocks.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    Q = scene.noise_cov if Q is None else Q
    J = mean_jacobian(scene, X, step)
    qi = _NoiseWhitener(Q)
    n, M, L = J.shape
    flat = J.transpose(1, 0, 2).reshape(M, n * L)
    wj = qi.solve(flat).reshape(M, n, L).transpose(1, 0, 2)
    F = 2.0 * np.real(np.einsum("iml,jml->ij", J.conj(), wj))
    return 0.5 * (F + F.T)


def gaussian_fisher(mean_fn, cov_fn, zeta, steps) -> np.ndarray:
    """Fisher matrix of ``y ~ CN(mu(zeta), C(zeta))`` by central differences.

    ``F_ij = tr(C^-1 dC_i C^-1 dC_j) + 2 Re(dmu_i^H C^-1 dmu_j)``.
    """
    zeta = np.asarray(zeta, dtype=float)
    n = len(zeta)
    C0 = cov_fn(zeta)
    chol = chol_hermitian(C0)
    dmu, dC = [], []
    for i in range(n):
        zp, zm = zeta.copy(), zeta.copy()
        zp[i] += steps[i]
        zm[i] -= steps[i]
        dmu.append((mean_fn(zp) - mean_fn(zm)) / (2 * steps[i]))
        dC.append((cov_fn(zp) - cov_fn(zm)) / (2 * steps[i]))
    Cinv_dC = [la.cho_solve((chol, True), d) for d in dC]
    Cinv_dmu = [la.cho_solve((chol, True), d) for d in dmu]
    F = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            val = np.real(np.trace(Cinv_dC[i] @ Cinv_dC[j])) + 2 * np.real(np.vdot(dmu[i], Cinv_dmu[j]))
            F[i, j] = F[j, i] = val
    return F


def extended_fisher_oracle(scene, X, q_directions, step: float = 1e-6) -> np.ndarray:
    """Fisher matrix over the 5K target parameters plus perturbations of Q.

    ``q_directions`` is a list of Hermitian ``M x M`` matrices ``H_j``; the
    extra parameter ``t_j`` enters as ``Q + sum_j t_j H_j``. Works on
    ``vec(Y)`` with covariance ``I_L (x) Q`` so keep M*L small.
    """
    X = np.asarray(getattr(X, "data", X), dtype=complex)
    K = scene.K
    L = X.shape[1]
    Q0 = scene.noise_matrix()
    theta = _theta(scene)
    nq = len(q_directions)
    zeta = np.concatenate([theta, np.zeros(nq)])

    def mean_fn(z):
        P, b = _unpack(z[:5 * K], K)
        return _mean_matrix(P, b, scene, X).reshape(-1, order="F")

    def cov_fn(z):
        Q = Q0 + sum(t * H for t, H in zip(z[5 * K:], q_directions))
        return np.kron(np.eye(L), Q)

    qscale = np.abs(Q0).max()
    steps = np.concatenate([_default_steps(scene, step), np.full(nq, step * qscale)])
    return gaussian_fisher(mean_fn, cov_fn, zeta, steps)


def channel_jacobian_crb_oracle(scene, L: int, power: float = 1.0, model: str = EXACT,
                                coeffs=None) -> np.ndarray:
    """Per-target position CRBs for white noise and ``R_X = power * I`` via QR.

    With an ideal waveform the information equals that of observing the
    virtual channel ``H = A diag(b) V^T`` directly, so the Fisher matrix is
    ``2 L power / sigma2 * Re(G^H G)`` with ``G`` the analytic Jacobian of
    ``vec(H)``. Inverting through a QR factor of ``G`` avoids squaring its
    condition number, which makes this a reference for ill-conditioned
    far-range cases. Memory is ``O(M N K)``.
    """
    if not scene.white_noise:
        raise ValueError("the channel-Jacobian oracle needs white noise")
    st = build_steering_set(scene, amplitude_model=model)
    b = scene.coeffs if coeffs is None else np.asarray(coeffs, dtype=complex)
    K = st.K
    cols = [[] for _ in range(5)]
    for k in range(K):
        a, v = st.A[:, k], st.V[:, k]
        for i in range(3):
            cols[i].append(b[k] * (np.outer(st.dA[i, :, k], v) + np.outer(a, st.dV[i, :, k])).ravel())
        h0 = np.outer(a, v).ravel()
        cols[3].append(h0)
        cols[4].append(1j * h0)
    G = np.array([c for group in cols for c in group]).T * np.sqrt(2 * L * power / scene.noise_cov)
    Gr = np.vstack([G.real, G.imag])
    scale = np.linalg.norm(Gr, axis=0)
    if np.any(scale == 0):
        raise IdentifiabilityError("a parameter has an all-zero Jacobian column")
    R = np.linalg.qr(Gr / scale, mode="r")
    Ri = la.solve_triangular(R, np.eye(5 * K))
    C = (Ri @ Ri.T) / np.outer(scale, scale)
    return position_crbs(C)
