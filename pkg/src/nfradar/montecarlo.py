"""Monte Carlo sweeps of the localizer against the position CRB."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crb import IdentifiabilityError, scene_position_crbs
from .estimator import DEFAULT_LOADING, SearchRegion, aco_localize
from .io import format_float
from .synth import empirical_snr, noise_for_snr, noiseless_signal, simulate_received
from .waveform import SignalBlock, sample_covariance

log = logging.getLogger(__name__)

CSV_COLUMNS = ("snr_db", "target_index", "mse_m2", "crb_m2", "trials_ok", "trials_failed")
MAX_MATCH_TARGETS = 8


def trial_seed(master_seed: int, snr_index: int, trial_index: int) -> np.random.SeedSequence:
    """Independent stream for one trial; any subset of trials reruns identically."""
    return np.random.SeedSequence([int(master_seed), int(snr_index), int(trial_index)])


def match_targets(estimated, truth):
    """Assignment of estimates to true targets minimizing total squared error.

    Returns ``(perm, sq_err)`` where ``estimated[perm[k]]`` is matched to
    ``truth[k]`` and ``sq_err[k]`` is that squared distance. Brute force over
    injective assignments, so at most ``MAX_MATCH_TARGETS`` estimates.
    """
    est = np.asarray(estimated, dtype=float).reshape(-1, 3)
    tru = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(est) < len(tru):
        raise ValueError(f"{len(est)} estimates cannot cover {len(tru)} targets")
    if len(est) > MAX_MATCH_TARGETS:
        raise ValueError(f"matching supports at most {MAX_MATCH_TARGETS} estimates")
    d2 = np.sum((tru[:, None, :] - est[None, :, :]) ** 2, axis=2)
    best, best_cost = None, np.inf
    rows = np.arange(len(tru))
    for perm in itertools.permutations(range(len(est)), len(tru)):
        cost = d2[rows, perm].sum()
        if cost < best_cost:
            best, best_cost = perm, cost
    perm = np.array(best, dtype=int)
    return perm, d2[rows, perm]


@dataclass
class TrialRecord:
    snr_db: float
    trial: int
    ok: bool
    sq_err: list | None = None
    positions: list | None = None
    cycles: int = 0
    converged: bool = True
    empirical_snr_db: float | None = None
    error: str | None = None
    descent_violations: int = 0  # f3 increases within a cyclic phase; should be 0


@dataclass
class SweepRow:
    snr_db: float
    target_index: int  # 0-based; files use 1-based
    mse_m2: float
    crb_m2: float
    trials_ok: int
    trials_failed: int
    empirical_snr_db: float = float("nan")  # mean over all trials; JSON only


@dataclass
class SweepResult:
    rows: list
    records: list = field(default_factory=list)

    def table(self) -> np.ndarray:
        """Rows as a float array with the CSV column order (1-based target index)."""
        return np.array([[r.snr_db, r.target_index + 1, r.mse_m2, r.crb_m2, r.trials_ok,
                          r.trials_failed] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([format_float(r.snr_db), r.target_index + 1, format_float(r.mse_m2),
                        format_float(r.crb_m2), r.trials_ok, r.trials_failed])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def write_json(self, path) -> None:
        payload = {
            "rows": [{**r.__dict__, "target_index": r.target_index + 1} for r in self.rows],
            "trials": [rec.__dict__ for rec in self.records],
        }
        Path(path).write_text(json.dumps(payload, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _run_trial(args):
    scene, X, snr_db, snr_idx, trial, master_seed, region, k_max, epsilon, loading, noiseless = args
    seed = trial_seed(master_seed, snr_idx, trial)
    snr_emp = None
    try:
        Y = simulate_received(scene, X, seed, noise=not noiseless)
        if not noiseless:
            snr_emp = empirical_snr(scene, X, Y.data - noiseless_signal(scene, X))[1]
        res = aco_localize(Y, X, scene.tx, scene.rx, scene.wavelength, k_max, region,
                           epsilon=epsilon, loading=loading)
    except Exception as exc:  # a failed trial is reported, not fatal
        log.warning("trial %d at %.1f dB failed: %s", trial, snr_db, exc)
        return TrialRecord(snr_db, trial, False, empirical_snr_db=snr_emp,
                           error=f"{type(exc).__name__}: {exc}")
    _, sq = match_targets(res.positions, scene.positions)
    return TrialRecord(snr_db, trial, res.converged, sq.tolist(), res.positions.tolist(),
                       res.cycles, res.converged, snr_emp,
                       None if res.converged else "cyclic search did not converge",
                       len(res.descent_violations()))


def run_sweep(scene, waveform, snr_db, trials: int, master_seed: int, region: SearchRegion,
              k_max: int | None = None, epsilon: float = 1e-5,
              loading: float = DEFAULT_LOADING, noiseless: bool = False,
              workers: int = 1) -> SweepResult:
    """Per-SNR, per-target MSE of the localizer next to the position CRB.

    The scene's noise covariance keeps its shape and is rescaled at each SNR.
    ``waveform`` is held fixed across trials; noise draws use
    :func:`trial_seed`. Failed or non-converged trials are excluded from the
    MSE and counted in ``trials_failed``. Results do not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if scene.K < 1:
        raise ValueError("scene has no targets")
    X = waveform if isinstance(waveform, SignalBlock) else SignalBlock(waveform)
    k_max = scene.K if k_max is None else int(k_max)
    R_X = sample_covariance(X)
    jobs, scenes, crbs = [], [], []
    for i, snr in enumerate(snr_db):
        sc = scene.with_noise(noise_for_snr(scene, X, snr))
        scenes.append(sc)
        try:
            crbs.append(scene_position_crbs(sc, R_X, X.L))
        except IdentifiabilityError as exc:
            log.warning("CRB undefined at %.1f dB: %s", snr, exc)
            crbs.append(np.full(scene.K, np.nan))
        jobs += [(sc, X.data, float(snr), i, t, master_seed, region, k_max, epsilon, loading,
                  noiseless) for t in range(trials)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial, jobs, chunksize=1))
    else:
        records = [_run_trial(j) for j in jobs]

    rows = []
    for i, snr in enumerate(snr_db):
        recs = records[i * trials:(i + 1) * trials]
        ok = [r for r in recs if r.ok]
        sq = np.array([r.sq_err for r in ok], dtype=float).reshape(len(ok), scene.K)
        emp = [r.empirical_snr_db for r in recs if r.empirical_snr_db is not None]
        emp_mean = float(np.mean(emp)) if emp else float("nan")
        for k in range(scene.K):
            mse = float(np.mean(sq[:, k])) if len(ok) else float("nan")
            rows.append(SweepRow(float(snr), k, mse, float(crbs[i][k]), len(ok),
                                 trials - len(ok), emp_mean))
    return SweepResult(rows, records)
