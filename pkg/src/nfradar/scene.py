"""Radar geometry and ground-truth scenes.

Positions are plain ``(3,)`` float arrays in meters; arrays of positions are
``(n, 3)``. Everything here is immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import speed_of_light
from scipy.spatial.distance import pdist

from .numerics import NotPositiveDefiniteError, chol_hermitian

SPEED_OF_LIGHT = speed_of_light  # 299792458 m/s

_PLANES = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}


def as_position(p, name: str = "position") -> np.ndarray:
    """Coerce ``p`` to a finite ``(3,)`` float array."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 coordinates, got shape {np.shape(p)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def wavelength(carrier_hz: float) -> float:
    """Free-space wavelength in meters for a carrier frequency in Hz."""
    if not carrier_hz > 0:
        raise ValueError(f"carrier frequency must be positive, got {carrier_hz}")
    return SPEED_OF_LIGHT / carrier_hz


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """An antenna array: element coordinates, a reference point and a power gain.

    The reference point is where path loss is measured from in the
    constant-amplitude comparison model. It defaults to the element centroid.
    """

    elements: np.ndarray
    reference: np.ndarray = None
    gain: float = 1.0

    def __post_init__(self):
        el = np.array(self.elements, dtype=float, copy=True)
        if el.ndim == 1 and el.size == 3:
            el = el.reshape(1, 3)
        if el.ndim != 2 or el.shape[1] != 3 or el.shape[0] < 1:
            raise ValueError(f"elements must be an (n, 3) array with n >= 1, got {el.shape}")
        if not np.all(np.isfinite(el)):
            raise ValueError("element coordinates must be finite")
        if el.shape[0] > 1 and _has_duplicates(el):
            raise ValueError("array elements must not coincide")
        el.setflags(write=False)
        ref = el.mean(axis=0) if self.reference is None else as_position(self.reference, "reference")
        ref = np.array(ref, dtype=float)
        ref.setflags(write=False)
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise ValueError(f"gain must be finite and >= 0, got {self.gain}")
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "gain", float(self.gain))

    def __len__(self) -> int:
        return self.elements.shape[0]

    @property
    def size(self) -> int:
        return self.elements.shape[0]

    @property
    def aperture(self) -> float:
        """Largest distance between any two elements (0 for a single element)."""
        el = self.elements
        if len(el) == 1:
            return 0.0
        if len(el) <= 2048:
            return float(pdist(el).max())
        # bounding-box diagonal; exact for rectangular grids
        return float(np.linalg.norm(el.max(axis=0) - el.min(axis=0)))

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return (
            self.elements.shape == other.elements.shape
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.reference, other.reference)
            and self.gain == other.gain
        )

    __hash__ = None


def _has_duplicates(el: np.ndarray) -> bool:
    rounded = np.round(el, 12)
    return len(np.unique(rounded, axis=0)) < len(el)


def build_upa(rows: int, cols: int, spacing: float, center=(0.0, 0.0, 0.0),
              plane: str = "xy", gain: float = 1.0) -> ArrayGeometry:
    """Uniform planar array of ``rows x cols`` elements centered at ``center``.

    Rows run along the second in-plane axis and columns along the first, so for
    ``plane="xy"`` a 16 x 768 array is 768 elements wide in x. The reference
    point is the array center.
    """
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be positive integers, got {rows}, {cols}")
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if plane not in _PLANES:
        raise ValueError(f"plane must be one of {sorted(_PLANES)}, got {plane!r}")
    center = as_position(center, "center")
    rows, cols = int(rows), int(cols)
    u = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    v = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    uu, vv = np.meshgrid(u, v)  # row-major: element index = r * cols + c
    ax_u, ax_v, _ = _PLANES[plane]
    el = np.zeros((rows * cols, 3))
    el[:, ax_u] = uu.ravel()
    el[:, ax_v] = vv.ravel()
    el += center
    return ArrayGeometry(el, reference=center, gain=gain)


@dataclass(frozen=True, eq=False)
class Target:
    """A point scatterer with a complex reflection coefficient."""

    position: np.ndarray
    coeff: complex = 1.0 + 0.0j

    def __post_init__(self):
        pos = as_position(self.position)
        pos.setflags(write=False)
        coeff = complex(self.coeff)
        if not np.isfinite(coeff):
            raise ValueError(f"reflection coefficient must be finite, got {coeff}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "coeff", coeff)

    def __eq__(self, other):
        if not isinstance(other, Target):
            return NotImplemented
        return np.array_equal(self.position, other.position) and self.coeff == other.coeff

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Scene:
    """Full ground truth for one radar snapshot block.

    ``noise_cov`` is either an ``(M, M)`` Hermitian positive-definite matrix or
    a positive scalar ``sigma2`` meaning ``sigma2 * I``. The scalar form keeps
    full-scale arrays (M in the tens of thousands) tractable.
    """

    tx: ArrayGeometry
    rx: ArrayGeometry
    targets: tuple = field(default_factory=tuple)
    carrier_hz: float = 28e9
    noise_cov: object = 1.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.carrier_hz > 0:
            raise ValueError(f"carrier_hz must be positive, got {self.carrier_hz}")
        object.__setattr__(self, "carrier_hz", float(self.carrier_hz))
        object.__setattr__(self, "noise_cov", validate_noise_cov(self.noise_cov, self.rx.size))

    @property
    def M(self) -> int:
        return self.rx.size

    @property
    def N(self) -> int:
        return self.tx.size

    @property
    def K(self) -> int:
        return len(self.targets)

    @property
    def wavelength(self) -> float:
        return wavelength(self.carrier_hz)

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets], dtype=float).reshape(-1, 3)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([t.coeff for t in self.targets], dtype=complex)

    @property
    def white_noise(self) -> bool:
        return np.ndim(self.noise_cov) == 0

    def noise_matrix(self) -> np.ndarray:
        """Materialize Q as an ``(M, M)`` complex matrix."""
        if self.white_noise:
            return self.noise_cov * np.eye(self.M, dtype=complex)
        return np.array(self.noise_cov, dtype=complex)

    def with_noise(self, noise_cov) -> "Scene":
        return Scene(self.tx, self.rx, self.targets, self.carrier_hz, noise_cov)

    def with_targets(self, targets) -> "Scene":
        return Scene(self.tx, self.rx, tuple(targets), self.carrier_hz, self.noise_cov)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        if self.white_noise != other.white_noise:
            return False
        return (
            self.tx == other.tx
            and self.rx == other.rx
            and self.targets == other.targets
            and self.carrier_hz == other.carrier_hz
            and np.array_equal(self.noise_cov, other.noise_cov)
        )

    __hash__ = None


def validate_noise_cov(Q, M: int):
    """Check Q is a positive scalar or an M x M Hermitian PD matrix."""
    if np.ndim(Q) == 0:
        q = float(np.real(Q))
        if np.iscomplexobj(Q) and np.imag(Q) != 0:
            raise ValueError("scalar noise covariance must be real")
        if not (np.isfinite(q) and q > 0):
            raise NotPositiveDefiniteError(f"noise variance must be positive, got {q}")
        return q
    Q = np.array(Q, dtype=complex)
    if Q.shape != (M, M):
        raise ValueError(f"noise covariance must be {M}x{M}, got {Q.shape}")
    scale = max(np.abs(Q).max(), np.finfo(float).tiny)
    if np.abs(Q - Q.conj().T).max() > 1e-12 * scale:
        raise ValueError("noise covariance must be Hermitian")
    Q = 0.5 * (Q + Q.conj().T)
    chol_hermitian(Q)  # raises NotPositiveDefiniteError
    Q.setflags(write=False)
    return Q
