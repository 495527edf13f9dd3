"""Scenario files: YAML in, :class:`Scenario` out, and back.

A scenario carries the scene (arrays, targets, carrier, noise) plus the
waveform, estimator and sweep settings. See ``nfradar/scenarios/*.yaml`` for
complete examples. Relative file paths resolve against the scenario file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .estimator import DEFAULT_LOADING, SearchRegion
from .io import read_complex_csv
from .scene import ArrayGeometry, Scene, Target, build_upa, wavelength
from .waveform import SignalBlock, generate_isotropic, sample_covariance


class ConfigError(ValueError):
    """A scenario file is malformed; the message names the offending key."""


PRESETS = ("minimal", "crb_upa16", "crb_upa12288", "two_target", "two_target_reduced")

_TOP_KEYS = {"carrier_hz", "arrays", "targets", "noise", "waveform", "estimator", "sweep"}
_ARRAY_KEYS = {"upa", "elements", "reference", "gain"}
_UPA_KEYS = {"rows", "cols", "spacing", "spacing_wavelengths", "center", "plane"}
_TARGET_KEYS = {"position", "coeff"}
_NOISE_KEYS = {"sigma2", "q_file"}
_WAVEFORM_KEYS = {"mode", "L", "power", "seed", "file"}
_ESTIMATOR_KEYS = {"region", "schedule", "epsilon", "loading", "max_cycles", "k_max"}
_REGION_KEYS = {"min", "max"}
_SCHEDULE_KEYS = {"counts", "refine_counts", "factor", "stages", "recenter"}
_SWEEP_KEYS = {"snr_db", "trials", "master_seed", "workers"}


# ---------------------------------------------------------------------------
# typed accessors


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}: unknown key (allowed: {', '.join(sorted(allowed))})"
                              if where else f"{k}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _num(v, key, positive=False, nonneg=False):
    if isinstance(v, bool):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    try:
        x = float(v)  # YAML 1.1 reads '1e-3' as a string
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if not np.isfinite(x):
        raise ConfigError(f"{key}: expected a finite number, got {v!r}")
    if positive and not x > 0:
        raise ConfigError(f"{key}: expected a positive number, got {v!r}")
    if nonneg and x < 0:
        raise ConfigError(f"{key}: expected a non-negative number, got {v!r}")
    return x


def _int(v, key, minimum=None):
    x = _num(v, key)
    if x != int(x):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(f"{key}: expected an integer >= {minimum}, got {v!r}")
    return int(x)


def _vec(v, key, n=3):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{key}: expected a list of {n} numbers, got {v!r}")
    return [_num(x, f"{key}[{i}]") for i, x in enumerate(v)]


def _ints3(v, key, minimum):
    if isinstance(v, (list, tuple)):
        if len(v) != 3:
            raise ConfigError(f"{key}: expected 3 integers, got {v!r}")
        return tuple(_int(x, f"{key}[{i}]", minimum) for i, x in enumerate(v))
    return (_int(v, key, minimum),) * 3


def _require(d, k, where):
    if k not in d:
        raise ConfigError(f"{where}.{k}: required key missing")
    return d[k]


# ---------------------------------------------------------------------------
# config records


@dataclass(frozen=True)
class WaveformConfig:
    mode: str = "unitary"
    L: int = 64
    power: float = 1.0
    seed: int = 0
    file: str | None = None

    def build(self, N: int, base_dir: Path | None = None) -> SignalBlock:
        if self.mode == "ideal":
            raise ConfigError("waveform.mode: 'ideal' has no sample realization (CRB only)")
        if self.mode == "file":
            path = Path(self.file)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            X = read_complex_csv(path)
            if X.shape[0] != N:
                raise ConfigError(f"waveform.file: {X.shape[0]} rows but the tx array has {N} elements")
            return SignalBlock(X)
        return generate_isotropic(N, self.L, self.power, self.mode, self.seed)

    def transmit_covariance(self, N: int, base_dir: Path | None = None):
        """``R_X`` for the CRB: ``power`` (meaning ``power * I``) in ideal mode, else the sample covariance."""
        if self.mode == "ideal":
            return self.power
        return sample_covariance(self.build(N, base_dir))


@dataclass(frozen=True)
class EstimatorConfig:
    region: SearchRegion | None = None
    epsilon: float = 1e-5
    loading: float = DEFAULT_LOADING
    max_cycles: int | None = None
    k_max: int | None = None


@dataclass(frozen=True)
class SweepConfig:
    snr_db: tuple = (0.0,)
    trials: int = 1
    master_seed: int = 0
    workers: int = 1


@dataclass
class Scenario:
    scene: Scene
    waveform: WaveformConfig
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    arrays: dict = field(default_factory=dict)   # normalized array specs, kept for serialization
    noise: dict = field(default_factory=dict)
    base_dir: Path | None = None

    def build_waveform(self) -> SignalBlock:
        return self.waveform.build(self.scene.N, self.base_dir)

    def transmit_covariance(self):
        return self.waveform.transmit_covariance(self.scene.N, self.base_dir)

    @property
    def k_max(self) -> int:
        return self.estimator.k_max or self.scene.K


# ---------------------------------------------------------------------------
# parsing


def _parse_array(d, where, carrier_hz):
    _check_keys(d, _ARRAY_KEYS, where)
    gain = _num(d.get("gain", 1.0), f"{where}.gain", nonneg=True)
    spec = {"gain": gain}
    if ("upa" in d) == ("elements" in d):
        raise ConfigError(f"{where}: exactly one of 'upa' or 'elements' is required")
    if "upa" in d:
        u = d["upa"]
        _check_keys(u, _UPA_KEYS, f"{where}.upa")
        if ("spacing" in u) == ("spacing_wavelengths" in u):
            raise ConfigError(f"{where}.upa: exactly one of 'spacing' or 'spacing_wavelengths' is required")
        rows = _int(_require(u, "rows", f"{where}.upa"), f"{where}.upa.rows", 1)
        cols = _int(_require(u, "cols", f"{where}.upa"), f"{where}.upa.cols", 1)
        center = _vec(u.get("center", [0.0, 0.0, 0.0]), f"{where}.upa.center")
        plane = u.get("plane", "xy")
        if plane not in ("xy", "xz", "yz"):
            raise ConfigError(f"{where}.upa.plane: expected xy, xz or yz, got {plane!r}")
        upa = {"rows": rows, "cols": cols, "center": center, "plane": plane}
        if "spacing" in u:
            upa["spacing"] = _num(u["spacing"], f"{where}.upa.spacing", positive=True)
            spacing = upa["spacing"]
        else:
            upa["spacing_wavelengths"] = _num(u["spacing_wavelengths"],
                                              f"{where}.upa.spacing_wavelengths", positive=True)
            spacing = upa["spacing_wavelengths"] * wavelength(carrier_hz)
        spec["upa"] = upa
        if "reference" in d:
            raise ConfigError(f"{where}.reference: a UPA's reference is its center")
        geom = build_upa(rows, cols, spacing, center, plane, gain)
    else:
        el = d["elements"]
        if not isinstance(el, list) or not el:
            raise ConfigError(f"{where}.elements: expected a non-empty list of [x, y, z]")
        pts = [_vec(p, f"{where}.elements[{i}]") for i, p in enumerate(el)]
        spec["elements"] = pts
        ref = None
        if "reference" in d:
            ref = _vec(d["reference"], f"{where}.reference")
            spec["reference"] = ref
        try:
            geom = ArrayGeometry(np.array(pts), reference=ref, gain=gain)
        except ValueError as exc:
            raise ConfigError(f"{where}.elements: {exc}") from None
    return geom, spec


def _parse_coeff(v, key):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"{key}: expected [re, im], got {v!r}")
        return complex(_num(v[0], f"{key}[0]"), _num(v[1], f"{key}[1]"))
    return complex(_num(v, key), 0.0)


def _parse_region(est):
    reg = est.get("region")
    sched = est.get("schedule", {}) or {}
    if reg is None:
        if sched:
            raise ConfigError("estimator.schedule: requires estimator.region")
        return None
    _check_keys(reg, _REGION_KEYS, "estimator.region")
    _check_keys(sched, _SCHEDULE_KEYS, "estimator.schedule")
    kw = {}
    if "counts" in sched:
        kw["counts"] = _ints3(sched["counts"], "estimator.schedule.counts", 2)
    if "refine_counts" in sched:
        kw["refine_counts"] = _ints3(sched["refine_counts"], "estimator.schedule.refine_counts", 3)
    if "factor" in sched:
        kw["factor"] = _num(sched["factor"], "estimator.schedule.factor")
    if "stages" in sched:
        kw["stages"] = _int(sched["stages"], "estimator.schedule.stages", 1)
    if "recenter" in sched:
        kw["recenter"] = _int(sched["recenter"], "estimator.schedule.recenter", 0)
    lo = _vec(_require(reg, "min", "estimator.region"), "estimator.region.min")
    hi = _vec(_require(reg, "max", "estimator.region"), "estimator.region.max")
    try:
        return SearchRegion(tuple(lo), tuple(hi), **kw)
    except ValueError as exc:
        raise ConfigError(f"estimator: {exc}") from None


def scenario_from_dict(d: dict, base_dir: Path | None = None) -> Scenario:
    """Build a :class:`Scenario` from an already-loaded mapping."""
    _check_keys(d, _TOP_KEYS, "")
    carrier = _num(_require(d, "carrier_hz", "scenario"), "carrier_hz", positive=True)

    arrays = _require(d, "arrays", "scenario")
    _check_keys(arrays, {"rx", "tx"}, "arrays")
    rx, rx_spec = _parse_array(_require(arrays, "rx", "arrays"), "arrays.rx", carrier)
    tx, tx_spec = _parse_array(_require(arrays, "tx", "arrays"), "arrays.tx", carrier)

    targets = []
    tlist = d.get("targets", []) or []
    if not isinstance(tlist, list):
        raise ConfigError("targets: expected a list")
    for i, t in enumerate(tlist):
        _check_keys(t, _TARGET_KEYS, f"targets[{i}]")
        pos = _vec(_require(t, "position", f"targets[{i}]"), f"targets[{i}].position")
        targets.append(Target(pos, _parse_coeff(t.get("coeff", 1.0), f"targets[{i}].coeff")))

    noise = d.get("noise", {"sigma2": 1.0}) or {"sigma2": 1.0}
    _check_keys(noise, _NOISE_KEYS, "noise")
    if ("sigma2" in noise) == ("q_file" in noise):
        raise ConfigError("noise: exactly one of 'sigma2' or 'q_file' is required")
    if "sigma2" in noise:
        noise_spec = {"sigma2": _num(noise["sigma2"], "noise.sigma2", positive=True)}
        Q = noise_spec["sigma2"]
    else:
        noise_spec = {"q_file": str(noise["q_file"])}
        qpath = Path(noise_spec["q_file"])
        if not qpath.is_absolute() and base_dir is not None:
            qpath = base_dir / qpath
        try:
            Q = read_complex_csv(qpath)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"noise.q_file: {exc}") from None

    try:
        scene = Scene(tx, rx, targets, carrier, Q)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"noise: {exc}") from None

    w = d.get("waveform", {}) or {}
    _check_keys(w, _WAVEFORM_KEYS, "waveform")
    mode = w.get("mode", "unitary")
    if mode not in ("unitary", "gaussian", "file", "ideal"):
        raise ConfigError(f"waveform.mode: expected unitary, gaussian, file or ideal, got {mode!r}")
    if mode == "file" and "file" not in w:
        raise ConfigError("waveform.file: required when mode is 'file'")
    waveform = WaveformConfig(
        mode=mode,
        L=_int(w.get("L", 64), "waveform.L", 1),
        power=_num(w.get("power", 1.0), "waveform.power", positive=True),
        seed=_int(w.get("seed", 0), "waveform.seed", 0),
        file=None if w.get("file") is None else str(w["file"]),
    )
    if mode == "unitary" and waveform.L < scene.N:
        raise ConfigError(f"waveform.L: unitary mode needs L >= N = {scene.N}, got {waveform.L}")

    e = d.get("estimator", {}) or {}
    _check_keys(e, _ESTIMATOR_KEYS, "estimator")
    estimator = EstimatorConfig(
        region=_parse_region(e),
        epsilon=_num(e.get("epsilon", 1e-5), "estimator.epsilon", positive=True),
        loading=_num(e.get("loading", DEFAULT_LOADING), "estimator.loading", nonneg=True),
        max_cycles=None if e.get("max_cycles") is None else _int(e["max_cycles"], "estimator.max_cycles", 1),
        k_max=None if e.get("k_max") is None else _int(e["k_max"], "estimator.k_max", 1),
    )

    s = d.get("sweep", {}) or {}
    _check_keys(s, _SWEEP_KEYS, "sweep")
    snr = s.get("snr_db", [0.0])
    if not isinstance(snr, list):
        snr = [snr]
    if not snr:
        raise ConfigError("sweep.snr_db: expected at least one value")
    sweep = SweepConfig(
        snr_db=tuple(_num(x, f"sweep.snr_db[{i}]") for i, x in enumerate(snr)),
        trials=_int(s.get("trials", 1), "sweep.trials", 1),
        master_seed=_int(s.get("master_seed", 0), "sweep.master_seed", 0),
        workers=_int(s.get("workers", 1), "sweep.workers", 1),
    )
    return Scenario(scene, waveform, estimator, sweep, {"rx": rx_spec, "tx": tx_spec},
                    noise_spec, base_dir)


def parse_scenario(path) -> Scenario:
    """Read a scenario YAML file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return scenario_from_dict(d, path.parent.resolve())


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(PRESETS)})")
    return Path(str(resources.files("nfradar") / "scenarios" / f"{name}.yaml"))


def load_preset(name: str) -> Scenario:
    return parse_scenario(preset_path(name))


# ---------------------------------------------------------------------------
# serialization


def scenario_to_dict(sc: Scenario) -> dict:
    d = {
        "carrier_hz": sc.scene.carrier_hz,
        "arrays": {k: dict(v) for k, v in sc.arrays.items()},
        "targets": [{"position": t.position.tolist(), "coeff": [t.coeff.real, t.coeff.imag]}
                    for t in sc.scene.targets],
        "noise": dict(sc.noise),
        "waveform": {"mode": sc.waveform.mode, "L": sc.waveform.L, "power": sc.waveform.power,
                     "seed": sc.waveform.seed},
        "estimator": {"epsilon": sc.estimator.epsilon, "loading": sc.estimator.loading},
        "sweep": {"snr_db": list(sc.sweep.snr_db), "trials": sc.sweep.trials,
                  "master_seed": sc.sweep.master_seed, "workers": sc.sweep.workers},
    }
    if sc.waveform.file is not None:
        d["waveform"]["file"] = sc.waveform.file
    e = sc.estimator
    if e.region is not None:
        r = e.region
        d["estimator"]["region"] = {"min": list(r.lower), "max": list(r.upper)}
        d["estimator"]["schedule"] = {"counts": list(r.counts), "refine_counts": list(r.refine_counts),
                                      "factor": r.factor, "stages": r.stages, "recenter": r.recenter}
    if e.max_cycles is not None:
        d["estimator"]["max_cycles"] = e.max_cycles
    if e.k_max is not None:
        d["estimator"]["k_max"] = e.k_max
    return d


def serialize_scenario(sc: Scenario) -> str:
    """YAML text that parses back to an identical scenario."""
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
