"""Transmit waveforms and sample covariances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRANSMIT = "transmit"
RECEIVE = "receive"


@dataclass(frozen=True)
class SignalBlock:
    """A complex snapshot matrix: ``N x L`` for transmit, ``M x L`` for receive."""

    data: np.ndarray
    role: str = TRANSMIT

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.ndim == 1:
            data = data.reshape(-1, 1)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ValueError(f"signal block must be 2-D with L >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("signal block entries must be finite")
        if self.role not in (TRANSMIT, RECEIVE):
            raise ValueError(f"role must be 'transmit' or 'receive', got {self.role!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def L(self) -> int:
        return self.data.shape[1]

    @property
    def rows(self) -> int:
        return self.data.shape[0]


def generate_isotropic(N: int, L: int, power: float = 1.0, mode: str = "unitary",
                       seed=None) -> SignalBlock:
    """Isotropic transmit block with ``R_X`` equal (unitary) or close (gaussian) to ``power * I``.

    Unitary mode draws a random ``L x N`` Gaussian matrix, orthonormalizes its
    columns with QR and scales, so ``X X^H / L = power * I`` up to rounding.
    """
    if N < 1 or L < 1:
        raise ValueError(f"N and L must be >= 1, got N={N}, L={L}")
    if not power > 0:
        raise ValueError(f"power must be positive, got {power}")
    rng = np.random.default_rng(seed)
    if mode == "unitary":
        if L < N:
            raise ValueError(f"unitary mode needs L >= N, got L={L} < N={N}")
        g = rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))
        q, _ = np.linalg.qr(g)
        x = np.sqrt(L * power) * q.conj().T
    elif mode == "gaussian":
        x = np.sqrt(power / 2.0) * (rng.standard_normal((N, L)) + 1j * rng.standard_normal((N, L)))
    else:
        raise ValueError(f"mode must be 'unitary' or 'gaussian', got {mode!r}")
    return SignalBlock(x, TRANSMIT)


def sample_covariance(X) -> np.ndarray:
    """``X X^H / L`` for a transmit block (or raw array)."""
    if isinstance(X, SignalBlock):
        if X.role != TRANSMIT:
            raise ValueError("sample covariance is defined for transmit blocks")
        X = X.data
    X = np.asarray(X)
    R = X @ X.conj().T / X.shape[1]
    return 0.5 * (R + R.conj().T)
