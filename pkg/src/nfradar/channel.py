"""Near-field steering vectors and their coordinate derivatives.

The exact model uses the free-space amplitude ``lambda * sqrt(G) / (4 pi d)``
and phase ``exp(-j nu d)`` per element, with ``d`` the element-to-target
distance. The constant model keeps only the phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXACT = "exact"
CONSTANT = "constant"
AMPLITUDE_MODELS = (EXACT, CONSTANT)
AXES = {"x": 0, "y": 1, "z": 2}

# a target closer than this to an element is treated as inside the array
MIN_DISTANCE = 1e-9


class SingularityError(ValueError):
    """A target coincides with an antenna element."""


def _check_model(model):
    if model not in AMPLITUDE_MODELS:
        raise ValueError(f"amplitude model must be one of {AMPLITUDE_MODELS}, got {model!r}")


def _offsets(elements, positions):
    """Element-minus-target offsets ``(G, E, 3)`` and distances ``(G, E)``."""
    elements = np.asarray(elements, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    diff = elements[None, :, :] - positions[:, None, :]
    dist = np.sqrt(np.einsum("gei,gei->ge", diff, diff))
    if dist.size and dist.min() <= MIN_DISTANCE:
        g, e = np.unravel_index(np.argmin(dist), dist.shape)
        raise SingularityError(
            f"target {positions[g]} is within {MIN_DISTANCE} m of element {e} at {elements[e]}"
        )
    return diff, dist


def steering_matrix(elements, positions, wavelength: float, gain: float = 1.0,
                    model: str = EXACT) -> np.ndarray:
    """Steering vectors for many targets at once, shape ``(E, G)``.

    Column ``g`` is the array response toward ``positions[g]``.
    """
    _check_model(model)
    _, dist = _offsets(elements, positions)
    nu = 2.0 * np.pi / wavelength
    phase = np.exp(-1j * nu * dist)
    if model == EXACT:
        phase *= wavelength * np.sqrt(gain) / (4.0 * np.pi * dist)
    return phase.T


def steering_and_derivatives(elements, positions, wavelength: float, gain: float = 1.0,
                             model: str = EXACT):
    """Steering ``(E, G)`` plus derivatives w.r.t. target x, y, z, shape ``(3, E, G)``.

    Per element the derivative is the steering entry times
    ``(u_e - u_k) / d**2 + j nu (u_e - u_k) / d``; the constant model drops the
    ``1 / d**2`` amplitude term since its entries carry no distance amplitude.
    """
    _check_model(model)
    diff, dist = _offsets(elements, positions)
    nu = 2.0 * np.pi / wavelength
    s = np.exp(-1j * nu * dist)
    if model == EXACT:
        s *= wavelength * np.sqrt(gain) / (4.0 * np.pi * dist)
        factor = 1.0 / dist**2 + 1j * nu / dist
    else:
        factor = 1j * nu / dist
    d = s[None] * diff.transpose(2, 0, 1) * factor[None]
    return s.T, d.transpose(0, 2, 1)


def rx_steering(array, target, wavenumber: float, amplitude_model: str = EXACT) -> np.ndarray:
    """Receive steering vector ``a(l)`` of length M."""
    lam = 2.0 * np.pi / wavenumber
    return steering_matrix(array.elements, target, lam, array.gain, amplitude_model)[:, 0]


def tx_steering(array, target, wavenumber: float, amplitude_model: str = EXACT) -> np.ndarray:
    """Transmit steering vector ``v(l)`` of length N."""
    lam = 2.0 * np.pi / wavenumber
    return steering_matrix(array.elements, target, lam, array.gain, amplitude_model)[:, 0]


def steering_derivative(array, target, wavenumber: float, axis: str,
                        amplitude_model: str = EXACT) -> np.ndarray:
    """Derivative of the steering vector w.r.t. one target coordinate.

    ``side`` is implied by which array is passed in.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of 'x', 'y', 'z', got {axis!r}")
    lam = 2.0 * np.pi / wavenumber
    _, d = steering_and_derivatives(array.elements, target, lam, array.gain, amplitude_model)
    return d[AXES[axis], :, 0]


@dataclass(frozen=True)
class SteeringSet:
    """Steering matrices for a candidate target set and their derivative stacks.

    ``dA[i]`` holds the derivatives of each column of ``A`` w.r.t. the i-th
    coordinate (x, y, z) of that column's own target.
    """

    A: np.ndarray   # (M, K)
    V: np.ndarray   # (N, K)
    dA: np.ndarray  # (3, M, K)
    dV: np.ndarray  # (3, N, K)

    @property
    def K(self) -> int:
        return self.A.shape[1]


def build_steering_set(scene_or_positions, tx=None, rx=None, wavelength=None,
                       amplitude_model: str = EXACT) -> SteeringSet:
    """Assemble A, V and their derivatives.

    Pass either a :class:`~nfradar.scene.Scene`, or candidate positions
    ``(K, 3)`` together with ``tx``, ``rx`` and ``wavelength``.
    """
    if hasattr(scene_or_positions, "targets"):
        scene = scene_or_positions
        positions, tx, rx, wavelength = scene.positions, scene.tx, scene.rx, scene.wavelength
    else:
        positions = np.asarray(scene_or_positions, dtype=float).reshape(-1, 3)
        if tx is None or rx is None or wavelength is None:
            raise ValueError("tx, rx and wavelength are required with raw positions")
    A, dA = steering_and_derivatives(rx.elements, positions, wavelength, rx.gain, amplitude_model)
    V, dV = steering_and_derivatives(tx.elements, positions, wavelength, tx.gain, amplitude_model)
    return SteeringSet(A=A, V=V, dA=dA, dV=dV)
