"""Maximum-likelihood localization by approximate cyclic optimization (3D-ACO).

The chain is: AML coefficient estimate for fixed positions, the concentrated
negative log-likelihood ``f3`` over positions only, and a cyclic search that
re-estimates one target at a time on a multi-resolution 3D grid with the
other targets frozen.

``f3`` is evaluated in batches over grid candidates by :class:`ConcentratedLikelihood`.
When ``Y Y^H`` is well conditioned it works in the whitened eigenbasis of
``Y Y^H`` where every candidate costs only ``K x K`` algebra; otherwise it
falls back to forming the ``M x M`` matrices explicitly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as la

from .channel import EXACT, SingularityError, steering_matrix
from .numerics import NotPositiveDefiniteError, chol_hermitian, logdet_hermitian

log = logging.getLogger(__name__)

DEFAULT_LOADING = 1e-9
J_FLOOR = 1e-12       # diagonal floor on J, relative to tr(Y Y^H) / (L M)
LOGDET_FLOOR = 1e-12  # diagonal floor on W, relative to tr(W) / M
FAST_PATH_MIN_RCOND = 1e-8
CHUNK = 2048


class RankDeficientError(np.linalg.LinAlgError):
    """The waveform projection ``S S^H`` is singular (e.g. K > L or coincident targets)."""


# ---------------------------------------------------------------------------
# single-configuration building blocks


def _loading_shift(J, YYh_trace, L, M, loading, floor):
    return loading * np.real(np.trace(J)) / M + floor * YYh_trace / (L * M)


def aml_coefficients(Y, A, S, loading: float = DEFAULT_LOADING, floor: float = J_FLOOR):
    """AML estimate of the reflection coefficients for a diagonal growth-curve model.

    ``b = [(A^H J^-1 A) o (S S^H)^T]^-1 vecd(A^H J^-1 Y S^H)`` with
    ``J = (Y Y^H - Y S^H (S S^H)^-1 S Y^H) / L`` plus diagonal loading
    ``loading * tr(J) / M + floor * tr(Y Y^H) / (L M)``. The loading keeps J
    invertible on noise-free data, where it is exactly singular.
    """
    Y = np.asarray(Y, dtype=complex)
    A = np.asarray(A, dtype=complex).reshape(Y.shape[0], -1)
    S = np.asarray(S, dtype=complex).reshape(A.shape[1], -1)
    M, L = Y.shape
    if S.shape[1] != L:
        raise ValueError(f"S has {S.shape[1]} columns, Y has {L}")
    if not np.any(Y):
        return np.zeros(A.shape[1], dtype=complex)
    SSh = S @ S.conj().T
    try:
        proj = Y @ S.conj().T @ la.solve(SSh, S @ Y.conj().T, assume_a="pos")
        chol_hermitian(SSh)
    except (la.LinAlgError, NotPositiveDefiniteError):
        raise RankDeficientError(
            f"S S^H is singular ({S.shape[0]} rows, {L} snapshots); targets not separable"
        ) from None
    YYh = Y @ Y.conj().T
    J = (YYh - proj) / L
    J = 0.5 * (J + J.conj().T)
    shift = _loading_shift(J, np.real(np.trace(YYh)), L, M, loading, floor)
    Jl = J + shift * np.eye(M)
    try:
        c = chol_hermitian(Jl)
    except NotPositiveDefiniteError:
        raise NotPositiveDefiniteError("loaded J is not positive definite; increase loading") from None
    JiA = la.cho_solve((c, True), A)
    lhs = (A.conj().T @ JiA) * SSh.T
    rhs = np.einsum("mk,mk->k", JiA.conj(), Y @ S.conj().T)
    return la.solve(lhs, rhs)


def residual(Y, X, positions, b, tx, rx, wavelength):
    """``Y - A diag(b) V^T X`` for exact-amplitude steering at ``positions``."""
    A = steering_matrix(rx.elements, positions, wavelength, rx.gain, EXACT)
    V = steering_matrix(tx.elements, positions, wavelength, tx.gain, EXACT)
    return Y - (A * b) @ (V.T @ X)


def estimate_noise_cov(Y, X, positions, b, tx, rx, wavelength):
    """ML noise covariance given positions and coefficients: ``W / L``."""
    Y = np.asarray(Y, dtype=complex)
    R = residual(Y, X, np.asarray(positions, dtype=float).reshape(-1, 3), np.asarray(b), tx, rx, wavelength)
    W = R @ R.conj().T / Y.shape[1]
    return 0.5 * (W + W.conj().T)


def residual_logdet(W, floor: float = LOGDET_FLOOR):
    """``ln det(W + floor * tr(W)/M * I)`` via Cholesky, and the absolute floor used."""
    M = W.shape[0]
    phi = floor * np.real(np.trace(W)) / M
    if phi <= 0:
        phi = np.finfo(float).tiny
    return logdet_hermitian(W + phi * np.eye(M)), phi


def concentrated_nll(Y, X, positions, tx, rx, wavelength, loading: float = DEFAULT_LOADING):
    """Concentrated negative log-likelihood ``f3 = L ln det W`` at candidate positions.

    ``b`` is replaced by its AML estimate and ``W`` is the residual Gram matrix.
    """
    Y = np.asarray(Y, dtype=complex)
    X = np.asarray(getattr(X, "data", X), dtype=complex)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    A = steering_matrix(rx.elements, positions, wavelength, rx.gain, EXACT)
    V = steering_matrix(tx.elements, positions, wavelength, tx.gain, EXACT)
    S = V.T @ X
    b = aml_coefficients(Y, A, S, loading)
    R = Y - (A * b) @ S
    W = R @ R.conj().T
    ld, _ = residual_logdet(0.5 * (W + W.conj().T))
    return Y.shape[1] * ld


# ---------------------------------------------------------------------------
# batched evaluator


def _H(x):
    return np.conj(np.swapaxes(x, -1, -2))


class ConcentratedLikelihood:
    """Batched ``f3`` for one data block, specialised to single-target updates.

    ``values(fixed, slot, candidates)`` evaluates ``f3`` for every candidate
    position placed at column ``slot`` with the ``fixed`` positions filling the
    remaining columns in order.
    """

    def __init__(self, Y, X, tx, rx, wavelength, loading: float = DEFAULT_LOADING,
                 fast: bool | None = None):
        self.Y = np.asarray(Y, dtype=complex)
        self.X = np.asarray(getattr(X, "data", X), dtype=complex)
        self.tx, self.rx, self.wavelength = tx, rx, wavelength
        self.loading = loading
        M, L = self.Y.shape
        if self.X.shape != (tx.size, L):
            raise ValueError(f"X must be {tx.size}x{L}, got {self.X.shape}")
        if rx.size != M:
            raise ValueError(f"Y has {M} rows but the rx array has {rx.size} elements")
        self.M, self.L = M, L
        G0 = self.Y @ self.Y.conj().T
        G0 = 0.5 * (G0 + G0.conj().T)
        self.trG0 = float(np.real(np.trace(G0)))
        lam, E = np.linalg.eigh(G0)
        rcond = lam[0] / lam[-1] if lam[-1] > 0 else 0.0
        can_fast = L >= M and rcond >= FAST_PATH_MIN_RCOND
        self.fast = can_fast if fast is None else (fast and can_fast)
        if fast and not can_fast:
            log.debug("fast f3 path unavailable (rcond %.2e, L=%d, M=%d)", rcond, L, M)
        if self.fast:
            self.lam = lam
            self.Wh = (E / np.sqrt(lam)).conj().T          # whitening: Wh G0 Wh^H = I
            self.Yw = self.Wh @ self.Y                      # orthonormal rows
            null = la.null_space(self.Yw) if L > M else np.zeros((L, 0), dtype=complex)
            self.XN = self.X @ null                         # S N = V^T (X N)
            self.logdet_G0_terms = lam
        self.evaluations = 0

    # -- helpers --------------------------------------------------------

    def _steer(self, positions):
        lam = self.wavelength
        A = steering_matrix(self.rx.elements, positions, lam, self.rx.gain, EXACT)
        V = steering_matrix(self.tx.elements, positions, lam, self.tx.gain, EXACT)
        return A, V

    def _assemble(self, fixed, slot, candidates):
        """Stacked steering ``(G, M, K)`` and ``(G, N, K)`` with candidates at ``slot``."""
        G = len(candidates)
        Ac, Vc = self._steer(candidates)
        K = len(fixed) + 1
        A = np.empty((G, self.M, K), dtype=complex)
        V = np.empty((G, self.tx.size, K), dtype=complex)
        if len(fixed):
            Af, Vf = self._steer(fixed)
            others = [k for k in range(K) if k != slot]
            A[:, :, others] = Af[None]
            V[:, :, others] = Vf[None]
        A[:, :, slot] = Ac.T
        V[:, :, slot] = Vc.T
        return A, V

    # -- public ---------------------------------------------------------

    def values(self, fixed, slot: int, candidates) -> np.ndarray:
        """``f3`` for each candidate; non-finite where the model is degenerate."""
        fixed = np.asarray(fixed, dtype=float).reshape(-1, 3)
        candidates = np.asarray(candidates, dtype=float).reshape(-1, 3)
        out = np.empty(len(candidates))
        step = CHUNK if self.fast else max(1, CHUNK // 8)
        for s in range(0, len(candidates), step):
            chunk = candidates[s:s + step]
            try:
                A, V = self._assemble(fixed, slot, chunk)
            except SingularityError:
                out[s:s + step] = [self._safe_single(fixed, slot, c) for c in chunk]
                continue
            with np.errstate(all="ignore"):
                out[s:s + step] = self._fast(A, V) if self.fast else self._direct(A, V)
        self.evaluations += len(candidates)
        return out

    def _safe_single(self, fixed, slot, c):
        try:
            A, V = self._assemble(fixed, slot, c[None])
        except SingularityError:
            return np.nan
        with np.errstate(all="ignore"):
            return (self._fast(A, V) if self.fast else self._direct(A, V))[0]

    def __call__(self, positions) -> float:
        """``f3`` at one configuration ``(K, 3)`` through the batched path."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        return float(self.values(positions[1:], 0, positions[:1])[0])

    def _fast(self, A, V):
        L, lam = self.L, self.lam
        M = self.M
        K = A.shape[2]
        G = A.shape[0]
        # one GEMM per quantity over all (candidate, column) pairs
        Vt = np.swapaxes(V, 1, 2).reshape(G * K, -1)
        S2 = Vt @ self.X                                      # (G*K, L)
        S = S2.reshape(G, K, L)
        Sig = S @ _H(S)                                       # (G,K,K)
        Tw = np.swapaxes((S2.conj() @ self.Yw.T).reshape(G, K, M), 1, 2)   # whitened Y S^H
        Aw = np.swapaxes((np.swapaxes(A, 1, 2).reshape(G * K, M) @ self.Wh.T).reshape(G, K, M), 1, 2)
        SN = (Vt @ self.XN).reshape(G, K, -1)
        Sig_perp = SN @ _H(SN)

        lam_c = lam[None, :, None]
        TlT = _H(Tw) @ (lam_c * Tw)                           # T^H T in original space
        Sig_inv_TlT = np.linalg.solve(Sig, TlT)
        trJ = (self.trG0 - np.real(np.trace(Sig_inv_TlT, axis1=1, axis2=2))) / L
        delta = self.loading * trJ / M + J_FLOOR * self.trG0 / (L * M)   # (G,)

        Ld = L * delta[:, None]                               # (G,1)
        dinv = L * lam[None, :] / (lam[None, :] + Ld)         # diag of (whitened J_loaded)^-1 part
        shrink = (Ld / (lam[None, :] + Ld))[:, :, None]
        core = L * (Sig_perp + _H(Tw) @ (shrink * Tw))        # (G,K,K)

        DA = dinv[:, :, None] * Aw
        DT = dinv[:, :, None] * Tw
        a1 = _H(Aw) @ DA
        t1 = _H(Aw) @ DT
        tt = _H(Tw) @ DT
        ci_t1h = np.linalg.solve(core, _H(t1))
        AKA = a1 + t1 @ ci_t1h
        AKT = t1 + t1 @ np.linalg.solve(core, tt)
        lhs = AKA * np.swapaxes(Sig, 1, 2)
        rhs = np.diagonal(AKT, axis1=1, axis2=2)
        b = np.linalg.solve(lhs, rhs[..., None])[..., 0]      # (G,K)

        Pw = Aw * b[:, None, :]
        # tr(W) in original coordinates for the floor
        PlT = _H(Pw) @ (lam_c * Tw)
        PlP = _H(Pw) @ (lam_c * Pw)
        trW = (self.trG0 - 2 * np.real(np.trace(PlT, axis1=1, axis2=2))
               + np.real(np.einsum("gij,gji->g", Sig, PlP)))
        phi = LOGDET_FLOOR * trW / M
        dphi = lam[None, :] / (lam[None, :] + phi[:, None])   # (I + phi Lam^-1)^-1
        dp = dphi[:, :, None]
        pp = _H(Pw) @ (dp * Pw)
        pt = _H(Pw) @ (dp * Tw)
        tp = _H(pt)
        ttp = _H(Tw) @ (dp * Tw)
        eye = np.eye(K)
        top = np.concatenate([eye + Sig @ pp - tp, Sig @ pt - ttp], axis=2)
        bot = np.concatenate([-pp, eye - pt], axis=2)
        Mmat = np.concatenate([top, bot], axis=1)
        sign, ld_small = np.linalg.slogdet(Mmat)
        ld = np.sum(np.log(lam[None, :] + phi[:, None]), axis=1) + ld_small
        bad = ~(np.real(sign) > 0.5) | ~(trJ > 0) | ~(phi > 0)
        ld[bad] = np.nan
        return L * ld

    def _direct(self, A, V):
        L, M = self.L, self.M
        Y = self.Y
        S = np.swapaxes(V, 1, 2) @ self.X
        Sig = S @ _H(S)
        T = Y @ _H(S)                                         # (G,M,K)
        Yp = Y[None] - T @ np.linalg.solve(Sig, S)           # Y (I - P_S)
        J = Yp @ _H(Yp) / L
        J = 0.5 * (J + _H(J))
        trJ = np.real(np.trace(J, axis1=1, axis2=2))
        delta = self.loading * trJ / M + J_FLOOR * self.trG0 / (L * M)
        Jl = J + delta[:, None, None] * np.eye(M)
        JiAT = np.linalg.solve(Jl, np.concatenate([A, T], axis=2))
        K = A.shape[2]
        AKA = _H(A) @ JiAT[:, :, :K]
        AKT = _H(A) @ JiAT[:, :, K:]
        lhs = AKA * np.swapaxes(Sig, 1, 2)
        rhs = np.diagonal(AKT, axis1=1, axis2=2)
        b = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        R = Y[None] - (A * b[:, None, :]) @ S
        W = R @ _H(R)
        W = 0.5 * (W + _H(W))
        phi = LOGDET_FLOOR * np.real(np.trace(W, axis1=1, axis2=2)) / M
        phi = np.where(phi > 0, phi, np.finfo(float).tiny)
        Wf = W + phi[:, None, None] * np.eye(M)
        sign, ld = np.linalg.slogdet(Wf)
        ld = np.where(np.real(sign) > 0.5, ld, np.nan)
        return L * ld


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class SearchRegion:
    """Axis-aligned search box and multi-resolution schedule.

    Stage 1 evaluates ``counts`` points per axis spanning the box. Each later
    stage divides the pitch by ``factor`` and evaluates ``refine_counts``
    points per axis centered on the incumbent (so the refined box spans
    ``(refine_counts - 1) / factor`` previous pitches). If the incumbent lands
    on the edge of a refined box the stage is repeated around it, at most
    ``recenter`` extra times.
    """

    lower: tuple
    upper: tuple
    counts: tuple = (21, 21, 21)
    refine_counts: tuple = (11, 11, 11)
    factor: float = 5.0
    stages: int = 3
    recenter: int = 3

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(3)
        hi = np.asarray(self.upper, dtype=float).reshape(3)
        counts = tuple(int(c) for c in np.broadcast_to(self.counts, 3))
        refine = tuple(int(c) for c in np.broadcast_to(self.refine_counts, 3))
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(hi <= lo):
            raise ValueError(f"region needs finite lower < upper on every axis, got {lo}, {hi}")
        if min(counts) < 2:
            raise ValueError(f"grid counts must be >= 2, got {counts}")
        if min(refine) < 3 or any(c % 2 == 0 for c in refine):
            raise ValueError(f"refine counts must be odd and >= 3, got {refine}")
        if not self.factor > 1:
            raise ValueError(f"refinement factor must exceed 1, got {self.factor}")
        if int(self.stages) != self.stages or self.stages < 1:
            raise ValueError(f"stages must be a positive integer, got {self.stages}")
        if int(self.recenter) != self.recenter or self.recenter < 0:
            raise ValueError(f"recenter must be a non-negative integer, got {self.recenter}")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "refine_counts", refine)
        object.__setattr__(self, "factor", float(self.factor))
        object.__setattr__(self, "stages", int(self.stages))
        object.__setattr__(self, "recenter", int(self.recenter))

    @property
    def initial_pitch(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / (np.asarray(self.counts) - 1)

    @property
    def final_pitch(self) -> np.ndarray:
        return self.initial_pitch / self.factor ** (self.stages - 1)

    def initial_grid(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.counts)]
        return _mesh(axes)

    def refine_grid(self, center, pitch):
        """Refined grid around ``center`` clipped to the box, plus per-axis edge offsets."""
        axes = []
        for i in range(3):
            half = (self.refine_counts[i] - 1) // 2
            ax = center[i] + np.arange(-half, half + 1) * pitch[i]
            ax = ax[(ax >= self.lower[i]) & (ax <= self.upper[i])]
            if center[i] not in ax:  # incumbent exactly on a clipped boundary
                ax = np.union1d(ax, [center[i]])
            axes.append(ax)
        return _mesh(axes)


def _mesh(axes):
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


class SearchOutcome(NamedTuple):
    position: np.ndarray
    value: float
    evaluations: int


def _lexi_argmin(points, values):
    """Index of the minimum value; ties go to the lexicographically smallest (x, y, z)."""
    finite = np.isfinite(values)
    if not finite.any():
        return None
    vmin = values[finite].min()
    idx = np.flatnonzero(finite & (values == vmin))
    if len(idx) == 1:
        return int(idx[0])
    p = points[idx]
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
    return int(idx[order[0]])


def _evaluate(objective, points, chunk=CHUNK):
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        pts = points[s:s + chunk]
        try:
            vals = np.asarray(objective(pts), dtype=float).reshape(len(pts))
        except Exception:
            vals = np.empty(len(pts))
            for i, p in enumerate(pts):
                try:
                    vals[i] = float(np.asarray(objective(p[None])).reshape(-1)[0])
                except Exception:
                    vals[i] = np.nan
        out[s:s + chunk] = vals
    return out


class AllPointsFailedError(RuntimeError):
    """Every grid point in a search failed to evaluate."""


def grid_search_single(objective: Callable, region: SearchRegion, incumbent=None,
                       exclude=None, exclude_radius: float = 0.0) -> SearchOutcome:
    """Multi-resolution grid minimization of ``objective`` over one 3D point.

    ``objective`` maps an ``(n, 3)`` array to ``n`` values; non-finite values
    or exceptions mark failed points, which are skipped. ``incumbent`` (if
    given) competes with the stage-1 grid so the result is never worse than it.
    Points within ``exclude_radius`` of any ``exclude`` point are not evaluated.
    """
    exclude = None if exclude is None else np.asarray(exclude, dtype=float).reshape(-1, 3)
    n_eval = 0

    def run(points):
        nonlocal n_eval
        vals = np.full(len(points), np.nan)
        keep = np.ones(len(points), dtype=bool)
        if exclude is not None and len(exclude) and exclude_radius > 0:
            d = np.linalg.norm(points[:, None, :] - exclude[None, :, :], axis=2)
            keep = ~(d < exclude_radius).any(axis=1)
        if keep.any():
            vals[keep] = _evaluate(objective, points[keep])
            n_eval += int(keep.sum())
        return vals

    pts = region.initial_grid()
    if incumbent is not None:
        pts = np.vstack([pts, np.asarray(incumbent, dtype=float).reshape(1, 3)])
    vals = run(pts)
    i = _lexi_argmin(pts, vals)
    if i is None:
        raise AllPointsFailedError("objective failed at every stage-1 grid point")
    best, best_val = pts[i].copy(), float(vals[i])

    pitch = region.initial_pitch
    for _ in range(1, region.stages):
        pitch = pitch / region.factor
        for _attempt in range(region.recenter + 1):
            pts = region.refine_grid(best, pitch)
            vals = run(pts)
            i = _lexi_argmin(pts, vals)
            if i is None or not vals[i] < best_val:
                break
            moved = pts[i].copy()
            best, best_val = moved, float(vals[i])
            if not _on_open_edge(moved, pts, region):
                break
    return SearchOutcome(best, best_val, n_eval)


def _on_open_edge(p, pts, region):
    """True if ``p`` sits on a face of the refined box that is not the region boundary."""
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    for i in range(3):
        if p[i] == lo[i] and lo[i] > region.lower[i]:
            return True
        if p[i] == hi[i] and hi[i] < region.upper[i]:
            return True
    return False


# ---------------------------------------------------------------------------
# cyclic localization


class TraceEntry(NamedTuple):
    iteration: int
    k_hat: int
    target: int
    phase: str  # "add" for a newly introduced target, "cycle" for a cyclic update
    f3: float


@dataclass
class EstimationResult:
    positions: np.ndarray
    coeffs: np.ndarray
    Q_hat: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = True
    cycles: int = 0
    evaluations: int = 0
    final_pitch: np.ndarray | None = None
    logdet_floor: float = 0.0
    f3: float = np.nan

    def descent_violations(self, slack: float = 1e-9):
        """Trace entries where f3 rose within one target-count phase."""
        bad = []
        prev = None
        for e in self.trace:
            if e.phase == "add":
                prev = e
                continue
            if prev is not None and e.f3 > prev.f3 + slack:
                bad.append((prev, e))
            prev = e
        return bad

    def to_dict(self):
        return {
            "positions": self.positions.tolist(),
            "coeffs": [[c.real, c.imag] for c in self.coeffs],
            "q_hat_fro_norm": float(np.linalg.norm(self.Q_hat)),
            "f3": self.f3,
            "objective_trace": [e._asdict() for e in self.trace],
            "cycles": self.cycles,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "final_pitch": None if self.final_pitch is None else self.final_pitch.tolist(),
            "logdet_floor": self.logdet_floor,
        }


def aco_localize(Y, X, tx, rx, wavelength, K_max: int, region: SearchRegion,
                 epsilon: float = 1e-5, loading: float = DEFAULT_LOADING,
                 max_cycles: int | None = None, fast: bool | None = None) -> EstimationResult:
    """Cyclic multi-target localization minimizing ``f3``.

    Targets are added one at a time. After adding the ``k``-th, targets are
    re-estimated in turn ``1, 2, ..., k, 1, ...`` with the others frozen, and
    the cycle stops as soon as one update improves ``f3`` by no more than
    ``epsilon``. ``max_cycles`` caps the number of cyclic updates per target
    count (default ``50 * K_max``); hitting it flags the result as not
    converged rather than raising.
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    max_cycles = 50 * K_max if max_cycles is None else int(max_cycles)
    Y = np.asarray(getattr(Y, "data", Y), dtype=complex)
    X = np.asarray(getattr(X, "data", X), dtype=complex)
    ev = ConcentratedLikelihood(Y, X, tx, rx, wavelength, loading, fast=fast)
    radius = 0.5 * float(np.min(region.final_pitch))
    trace = []
    it = 0

    def estimate(slot, others, incumbent=None):
        others = np.asarray(others, dtype=float).reshape(-1, 3)
        obj = lambda c: ev.values(others, slot, c)  # noqa: E731
        return grid_search_single(obj, region, incumbent=incumbent, exclude=others,
                                  exclude_radius=radius)

    first = estimate(0, [])
    est = [first.position]
    trace.append(TraceEntry(it, 1, 0, "add", first.value))
    converged = True
    cycles = 0
    for k_hat in range(2, K_max + 1):
        new = estimate(k_hat - 1, est)
        est.append(new.position)
        it += 1
        trace.append(TraceEntry(it, k_hat, k_hat - 1, "add", new.value))
        f_new = new.value
        f_old = f_new + 2 * epsilon
        p = 0
        updates = 0
        while f_old - f_new > epsilon:
            if updates >= max_cycles:
                converged = False
                log.warning("cyclic search hit max_cycles=%d at K=%d", max_cycles, k_hat)
                break
            f_old = f_new
            others = [est[m] for m in range(k_hat) if m != p]
            upd = estimate(p, others, incumbent=est[p])
            est[p] = upd.position
            f_new = upd.value
            it += 1
            updates += 1
            trace.append(TraceEntry(it, k_hat, p, "cycle", f_new))
            p = (p + 1) % k_hat
        cycles += updates

    positions = np.array(est)
    A = steering_matrix(rx.elements, positions, wavelength, rx.gain, EXACT)
    V = steering_matrix(tx.elements, positions, wavelength, tx.gain, EXACT)
    S = V.T @ X
    b = aml_coefficients(Y, A, S, loading)
    Q_hat = estimate_noise_cov(Y, X, positions, b, tx, rx, wavelength)
    _, phi = residual_logdet(Q_hat * Y.shape[1])
    return EstimationResult(
        positions=positions, coeffs=b, Q_hat=Q_hat, trace=trace, converged=converged,
        cycles=cycles, evaluations=ev.evaluations, final_pitch=region.final_pitch,
        logdet_floor=phi, f3=trace[-1].f3,
    )
