"""Command-line interface: ``nfradar {crb,simulate,localize,sweep,verify}``.

Exit codes: 0 success, 2 configuration error, 3 numerical identifiability
error, 4 localization did not converge (the result is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .channel import CONSTANT, EXACT, SingularityError
from .config import ConfigError, parse_scenario, preset_path
from .crb import DEFAULT_MAX_CONDITION, IdentifiabilityError, constant_amplitude_crb, scene_fisher
from .estimator import RankDeficientError, aco_localize
from .io import format_float, read_complex_csv, write_complex_csv
from .montecarlo import run_sweep
from .numerics import NotPositiveDefiniteError
from .scene import Target
from .synth import simulate_received
from .verify import run_all

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IDENTIFIABILITY = 3
EXIT_NOT_CONVERGED = 4

log = logging.getLogger("nfradar")


def _load(spec):
    """Scenario from a path, or from a packaged preset given as ``preset:NAME``."""
    if spec.startswith("preset:"):
        return parse_scenario(preset_path(spec.split(":", 1)[1]))
    return parse_scenario(spec)


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _parse_range(text):
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise ConfigError(f"--sweep-distance: expected a:b:n, got {text!r}") from None
    if not (0 < a and 0 < b) or n < 1:
        raise ConfigError(f"--sweep-distance: need positive distances and n >= 1, got {text!r}")
    return np.linspace(a, b, n)


def _crbs(scene, R_X, L, model, max_condition):
    if model == CONSTANT:
        return constant_amplitude_crb(scene, R_X, L, max_condition=max_condition)
    return scene_fisher(scene, R_X, L, amplitude_model=EXACT,
                        max_condition=max_condition).position_crbs()


def cmd_crb(args):
    sc = _load(args.scenario)
    scene = sc.scene
    if scene.K == 0:
        raise ConfigError("targets: the CRB needs at least one target")
    R_X = sc.transmit_covariance()
    L = sc.waveform.L if sc.waveform.mode == "ideal" else sc.build_waveform().L
    models = [EXACT, CONSTANT] if args.amplitude_model == "both" else [args.amplitude_model]
    if args.sweep_distance:
        k = args.target - 1
        if not 0 <= k < scene.K:
            raise ConfigError(f"--target: expected 1..{scene.K}, got {args.target}")
        origin = scene.rx.reference
        ray = scene.positions[k] - origin
        norm = np.linalg.norm(ray)
        if norm == 0:
            raise ConfigError("--sweep-distance: target sits at the receive reference point")
        ray = ray / norm
        rows = []
        for dist in _parse_range(args.sweep_distance):
            targets = list(scene.targets)
            targets[k] = Target(origin + dist * ray, targets[k].coeff)
            moved = scene.with_targets(targets)
            rows.append([float(dist)] + [float(_crbs(moved, R_X, L, m, args.max_condition)[k]) for m in models])
        _emit(_csv(rows, ["distance_m"] + [f"crb_{m}_m2" for m in models]), args.out)
        return EXIT_OK
    per_model = [_crbs(scene, R_X, L, m, args.max_condition) for m in models]
    rows = [[k + 1] + [float(c[k]) for c in per_model] for k in range(scene.K)]
    _emit(_csv(rows, ["target_index"] + [f"crb_{m}_m2" for m in models]), args.out)
    if args.matrix_out:
        C = scene_fisher(scene, R_X, L, amplitude_model=EXACT, max_condition=args.max_condition).crb
        Path(args.matrix_out).write_text(_csv([[float(v) for v in row] for row in C],
                                              [f"p{i}" for i in range(C.shape[1])]))
    return EXIT_OK


def _apply_snr(sc, X, snr_db):
    from .synth import noise_for_snr
    return sc.scene.with_noise(noise_for_snr(sc.scene, X, snr_db))


def cmd_simulate(args):
    sc = _load(args.scenario)
    X = sc.build_waveform()
    scene = sc.scene if args.snr_db is None else _apply_snr(sc, X, args.snr_db)
    Y = simulate_received(scene, X, args.seed, noise=not args.noiseless)
    write_complex_csv(args.out, Y.data)
    if args.x_out:
        write_complex_csv(args.x_out, X.data)
    return EXIT_OK


def cmd_localize(args):
    sc = _load(args.scenario)
    if sc.estimator.region is None:
        raise ConfigError("estimator.region: required for localize")
    X = sc.build_waveform()
    if args.y:
        try:
            Y = read_complex_csv(args.y)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"--y: {exc}") from None
        if Y.shape != (sc.scene.M, X.L):
            raise ConfigError(f"--y: expected a {sc.scene.M}x{X.L} matrix, got {Y.shape[0]}x{Y.shape[1]}")
    else:
        scene = sc.scene if args.snr_db is None else _apply_snr(sc, X, args.snr_db)
        Y = simulate_received(scene, X, args.seed, noise=not args.noiseless).data
    e = sc.estimator
    res = aco_localize(Y, X, sc.scene.tx, sc.scene.rx, sc.scene.wavelength, sc.k_max, e.region,
                       epsilon=e.epsilon, loading=e.loading, max_cycles=e.max_cycles)
    _emit(json.dumps(res.to_dict(), indent=1) + "\n", args.out)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args):
    sc = _load(args.scenario)
    if sc.estimator.region is None:
        raise ConfigError("estimator.region: required for sweep")
    sw = sc.sweep
    e = sc.estimator
    res = run_sweep(sc.scene, sc.build_waveform(), sw.snr_db, args.trials or sw.trials,
                    sw.master_seed if args.master_seed is None else args.master_seed,
                    e.region, sc.k_max, e.epsilon, e.loading,
                    workers=args.workers or sw.workers)
    _emit(res.to_csv(), args.out)
    if args.json:
        res.write_json(args.json)
    return EXIT_OK


def cmd_verify(args):
    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="nfradar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = "scenario YAML path, or preset:NAME"

    c = sub.add_parser("crb", help="per-target position CRB")
    c.add_argument("scenario", help=scen_help)
    c.add_argument("--amplitude-model", choices=[EXACT, CONSTANT, "both"], default=EXACT)
    c.add_argument("--sweep-distance", metavar="A:B:N",
                   help="move one target along the ray from the rx reference, N distances in [A, B] m")
    c.add_argument("--target", type=int, default=1, help="1-based target moved by --sweep-distance")
    c.add_argument("--max-condition", type=float, default=DEFAULT_MAX_CONDITION,
                   help="largest accepted condition number of the equilibrated Fisher matrix")
    c.add_argument("--matrix-out", help="also write the full exact-model CRB matrix as CSV")
    c.add_argument("--out", help="output CSV (default stdout)")
    c.set_defaults(func=cmd_crb)

    s = sub.add_parser("simulate", help="draw a received data block")
    s.add_argument("scenario", help=scen_help)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="complex CSV for Y")
    s.add_argument("--x-out", help="complex CSV for the transmit block X")
    s.add_argument("--snr-db", type=float, help="rescale the noise to this SNR")
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_simulate)

    loc = sub.add_parser("localize", help="run the cyclic ML localizer")
    loc.add_argument("scenario", help=scen_help)
    src = loc.add_mutually_exclusive_group(required=True)
    src.add_argument("--y", help="complex CSV with the received block")
    src.add_argument("--seed", type=int, help="simulate Y from the scenario with this seed")
    loc.add_argument("--snr-db", type=float, help="with --seed: rescale the noise to this SNR")
    loc.add_argument("--noiseless", action="store_true", help="with --seed: no noise")
    loc.add_argument("--out", help="output JSON (default stdout)")
    loc.set_defaults(func=cmd_localize)

    w = sub.add_parser("sweep", help="Monte Carlo MSE vs CRB over the scenario's SNR list")
    w.add_argument("scenario", help=scen_help)
    w.add_argument("--out", help="output CSV (default stdout)")
    w.add_argument("--json", help="also write per-trial records as JSON")
    w.add_argument("--trials", type=int, help="override sweep.trials")
    w.add_argument("--master-seed", type=int, help="override sweep.master_seed")
    w.add_argument("--workers", type=int, help="override sweep.workers")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the built-in oracle checks")
    v.add_argument("--quick", action="store_true", help="fewer random cases")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "snr_db", None) is not None and getattr(args, "y", None):
        print("error: --snr-db applies only with --seed", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdentifiabilityError, RankDeficientError, SingularityError,
            NotPositiveDefiniteError) as exc:
        print(f"identifiability error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY


if __name__ == "__main__":
    sys.exit(main())
