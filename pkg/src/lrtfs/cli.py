"""Command-line front end: ``lrtfs {decompose,multilayer,cs,replay}``.

Every run writes ``run_manifest.json`` into its output directory. ``replay``
re-runs a manifest into a fresh directory and checks that every output file
is byte-identical. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shlex
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bundle import write_bundle, write_db_grid, write_rows
from .compressive import METHODS, CSConfig, default_ratios, sweep
from .errors import ParameterError, WavFormatError
from .gabor import build_tight_gabor
from .multilayer import LayerSpec, SLRConfig, solve_slr
from .signals import PRESETS, SignalBuffer, add_noise, output_snr_db, preset, read_wav
from .solver import SolverConfig, lambda_grid, reconstruct_components, solve

logger = logging.getLogger("lrtfs")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
MANIFEST = "run_manifest.json"


class UsageError(Exception):
    """Bad command-line values detected after parsing."""


# -- argument types --------------------------------------------------------


def parse_lambda_grid(text: str) -> tuple[float, ...]:
    """``start:end:count`` -> log-spaced values from start down to end."""
    try:
        start, end, count = text.split(":")
        return lambda_grid(float(start), float(end), int(count))
    except (ValueError, ParameterError) as exc:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}: {exc}") from None


def parse_ratios(text: str) -> tuple[float, ...]:
    """``a..b`` (6 log-spaced points), ``a..b:n`` or a comma list."""
    try:
        if ".." in text:
            span, _, count = text.partition(":")
            lo, hi = (float(v) for v in span.split(".."))
            n = int(count) if count else 6
            if n == 6 and (lo, hi) == (0.01, 0.1):
                return default_ratios()
            return tuple(float(v) for v in np.geomspace(lo, hi, n))
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}: {exc}") from None


def parse_mu(text: str) -> float:
    try:
        mu = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"mu must be a number, got {text!r}") from None
    if not 0.0 <= mu <= 1.0:
        raise argparse.ArgumentTypeError(f"mu must lie in [0, 1], got {mu}")
    return mu


def parse_overlap(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("overlap must lie in (0, 1)")
    return v


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def default_seed() -> int:
    env = os.environ.get("LRTFS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"LRTFS_SEED must be an integer, got {env!r}") from None


# -- parser ----------------------------------------------------------------


def _add_input(p: argparse.ArgumentParser, default_rate: float):
    src = p.add_argument_group("input")
    src.add_argument("--input", type=Path, help="mono PCM16 or float32 WAV file")
    src.add_argument("--synthetic", choices=PRESETS, help="named synthetic preset")
    src.add_argument("--duration", type=float, help="preset duration in seconds")
    src.add_argument("--sample-rate", type=float, default=None,
                     help=f"preset sample rate (default {default_rate:g} Hz)")
    src.add_argument("--noise-snr", type=float, default=None,
                     help="add white noise at this input SNR (dB)")
    src.add_argument("--reference", type=Path, help="clean WAV for output SNR")
    p.add_argument("--seed", type=int, default=None, help="seed (default LRTFS_SEED or 0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _add_solver(p: argparse.ArgumentParser, grid: str):
    p.add_argument("--k", type=positive_int, default=10, help="NMF rank K")
    p.add_argument("--lambda-grid", type=parse_lambda_grid, default=parse_lambda_grid(grid),
                   help=f"start:end:count, log-spaced (default {grid})")
    p.add_argument("--max-outer", type=positive_int, default=10)
    p.add_argument("--max-inner", type=positive_int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrtfs", description="Low-rank time-frequency synthesis experiments."
    )
    parser.add_argument("--version", action="version", version=f"lrtfs {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="single-layer LRTFS over a lambda grid")
    _add_input(p, 22050)
    _add_solver(p, "1e-1:1e-6:30")
    p.add_argument("--win", type=positive_int, default=1024, help="window length (samples)")
    p.add_argument("--overlap", type=parse_overlap, default=0.5)

    p = sub.add_parser("multilayer", help="low-rank + sparse two-layer decomposition")
    _add_input(p, 22050)
    _add_solver(p, "1e-1:1e-4:10")
    p.add_argument("--win-a", type=positive_int, default=1024, help="low-rank layer window")
    p.add_argument("--win-b", type=positive_int, default=128, help="sparse layer window")
    p.add_argument("--overlap", type=parse_overlap, default=0.5)
    p.add_argument("--mu", type=parse_mu, default=0.05, help="layer balance in [0, 1]")

    p = sub.add_parser("cs", help="compressive-sensing recovery sweep")
    _add_input(p, 11025)
    p.add_argument("--k", type=positive_int, default=10)
    p.add_argument("--win", type=positive_int, default=512)
    p.add_argument("--overlap", type=parse_overlap, default=0.5)
    p.add_argument("--ratios", type=parse_ratios, default=None,
                   help="a..b[:n] log-spaced or comma list (default 0.01..0.1, 6 points)")
    p.add_argument("--ratio", type=float, help="single ratio (1.0 = identity sensing)")
    p.add_argument("--methods", default="lrtfs,sbl,l1", help="comma list of methods")
    p.add_argument("--method", help="single method (alias of --methods)")
    p.add_argument("--include-oracles", action="store_true")
    p.add_argument("--seeds", type=positive_int, default=1, help="number of sensing seeds")
    p.add_argument("--sensing", choices=("gaussian", "dct"), default="gaussian")
    p.add_argument("--noise-var", type=float, default=0.0, help="measurement noise variance")
    p.add_argument("--lambda-grid", type=parse_lambda_grid, default=parse_lambda_grid("1e3:1e-2:16"))
    p.add_argument("--max-outer", type=positive_int, default=5)
    p.add_argument("--max-inner", type=positive_int, default=50)
    p.add_argument("--jobs", type=positive_int, default=1, help="parallel sweep rows")

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="directory for the re-run (default: temporary)")
    return parser


# -- helpers ---------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_input(args) -> tuple[SignalBuffer, Optional[np.ndarray], str]:
    """Observed signal, optional clean reference and an input hash."""
    if (args.input is None) == (args.synthetic is None):
        raise UsageError("give exactly one of --input or --synthetic")
    if args.input is not None:
        if not args.input.is_file():
            raise UsageError(f"input file not found: {args.input}")
        buf = read_wav(args.input)
        clean = None
        digest = sha256_file(args.input)
    else:
        buf, _truth = preset(args.synthetic, args.sample_rate, args.duration, args.seed)
        clean = buf.samples
        key = json.dumps({"preset": args.synthetic, "rate": args.sample_rate,
                          "duration": args.duration, "seed": args.seed}, sort_keys=True)
        digest = hashlib.sha256(key.encode()).hexdigest()
    if args.noise_snr is not None:
        clean = buf.samples
        buf = add_noise(buf, args.noise_snr, seed=args.seed + 1)
    if getattr(args, "reference", None) is not None:
        if not args.reference.is_file():
            raise UsageError(f"reference file not found: {args.reference}")
        clean = read_wav(args.reference).samples
        if clean.shape != buf.samples.shape:
            raise UsageError("reference and input lengths differ")
    return buf, clean, digest


def _solver_config(args, K=None) -> dict:
    grid = tuple(args.lambda_grid)
    return dict(K=K or args.k, lambda_target=grid[-1], lambda_schedule=grid,
                tol_outer=args.tol, tol_inner_isa=args.tol, tol_inner_nmf=args.tol,
                max_outer=args.max_outer, max_inner=args.max_inner)


def _config_snapshot(args) -> dict:
    snap = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        snap[key] = value
    return snap


def _write_json_atomic(path: Path, payload: dict):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _output_hashes(out: Path) -> dict:
    return {
        str(p.relative_to(out)): sha256_file(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST and not p.name.startswith(".manifest-")
    }


# -- commands --------------------------------------------------------------


def cmd_decompose(args) -> dict:
    buf, clean, digest = _load_input(args)
    x = buf.samples
    d = build_tight_gabor(args.win, args.overlap, len(x), "real")
    cfg = SolverConfig(**_solver_config(args))
    t0 = time.perf_counter()
    sol = solve(x, d, cfg, keep_path=True)
    solve_time = time.perf_counter() - t0

    ref = clean if clean is not None else x
    snrs = [output_snr_db(ref, s.reconstruction) for s in sol.path]
    best = int(np.argmax(snrs)) if clean is not None else len(sol.path) - 1
    chosen = sol.path[best]
    chosen.history = sol.history
    comps = reconstruct_components(chosen, d)

    out = args.out
    config = {"command": "decompose", "window": args.win, "overlap": args.overlap,
              "hop": d.hop, "mode": d.mode, "sample_rate": buf.sample_rate,
              "K": args.k, "lambda_grid": list(cfg.lambda_schedule),
              "lambda_selected": chosen.lambda_used,
              "selection": "best output SNR" if clean is not None else "final lambda"}
    write_bundle(out, chosen, d, buf.sample_rate, config, comps)
    write_rows(out / "snr_vs_lambda.csv", ("lambda", "snr_db"),
               zip(cfg.lambda_schedule, snrs))
    write_db_grid(out / "analysis_power_db.csv", np.abs(d.analysis(x)) ** 2)
    write_db_grid(out / "synthesis_power_db.csv", np.abs(chosen.alpha) ** 2)
    logger.info("best lambda %.3g, output SNR %.2f dB", chosen.lambda_used, snrs[best])
    return {"input_hash": digest, "timings": {"solve_s": solve_time},
            "summary": {"lambda": chosen.lambda_used, "snr_db": snrs[best]}}


def cmd_multilayer(args) -> dict:
    buf, clean, digest = _load_input(args)
    x = buf.samples
    d_a = build_tight_gabor(args.win_a, args.overlap, len(x), "real")
    d_b = build_tight_gabor(args.win_b, args.overlap, len(x), "real")
    cfg = SLRConfig(mu=args.mu, **_solver_config(args))
    t0 = time.perf_counter()
    sol = solve_slr(x, LayerSpec(d_a, "low_rank", args.k), LayerSpec(d_b, "sparse"), cfg)
    solve_time = time.perf_counter() - t0

    out = args.out
    base = {"command": "multilayer", "mu": args.mu, "overlap": args.overlap,
            "sample_rate": buf.sample_rate, "K": args.k,
            "lambda_grid": list(cfg.lambda_schedule)}
    layer_a = sol.layer_a()
    layer_a.history = sol.history
    write_bundle(out / "layer_a", layer_a, d_a, buf.sample_rate,
                 {**base, "layer": "a", "prior": "low_rank", "window": args.win_a},
                 sol.components_a)
    layer_b = sol.layer_b()
    layer_b.history = sol.history
    write_bundle(out / "layer_b", layer_b, d_b, buf.sample_rate,
                 {**base, "layer": "b", "prior": "sparse", "window": args.win_b},
                 sol.x_b[None, :])
    summary = {"energy_a": float(np.sum(sol.x_a ** 2)), "energy_b": float(np.sum(sol.x_b ** 2))}
    if clean is not None:
        summary["snr_db"] = output_snr_db(clean, sol.reconstruction)
    return {"input_hash": digest, "timings": {"solve_s": solve_time}, "summary": summary}


def cmd_cs(args) -> dict:
    buf, clean, digest = _load_input(args)
    x = clean if clean is not None else buf.samples
    methods = [m for m in (args.method or args.methods).split(",") if m]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}; choose from {METHODS}")
    if args.include_oracles:
        methods += [m for m in ("oracle_variance", "oracle_nmf") if m not in methods]
    if args.ratio is not None:
        ratios = (args.ratio,)
    else:
        ratios = args.ratios or default_ratios()
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise UsageError(f"ratio {r} outside (0, 1]")
    d = build_tight_gabor(args.win, args.overlap, len(x), "real")
    cfg = CSConfig(K=args.k, lambda_schedule=args.lambda_grid,
                   max_outer=args.max_outer, max_inner=args.max_inner)
    seeds = [args.seed + i for i in range(args.seeds)]
    t0 = time.perf_counter()
    rows = sweep(x, d, ratios, methods, seeds, cfg, kind=args.sensing,
                 noise_var=args.noise_var, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "results.csv", ("ratio", "method", "seed", "snr_db", "runtime_s"),
               ((r["ratio"], r["method"], r["seed"], r["snr_db"], r["runtime_s"]) for r in rows))
    failures = [r for r in rows if r["error"]]
    if failures:
        write_rows(args.out / "errors.csv", ("ratio", "method", "seed", "error"),
                   ((r["ratio"], r["method"], r["seed"], r["error"]) for r in failures))
    return {"input_hash": digest, "timings": {"sweep_s": elapsed},
            "summary": {"rows": len(rows), "failed_rows": len(failures)}}


COMMANDS = {"decompose": cmd_decompose, "multilayer": cmd_multilayer, "cs": cmd_cs}

# files whose content depends on wall-clock time, excluded from replay checks
_TIMED = {"results.csv"}


def _run(argv: list[str], args) -> int:
    if args.seed is None:
        args.seed = default_seed()
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    info = COMMANDS[args.command](args)
    outputs = _output_hashes(args.out)
    manifest = {
        "command": args.command,
        "argv": argv,
        "config": _config_snapshot(args),
        "input_hash": info["input_hash"],
        "version": __version__,
        "timings": {**info["timings"], "total_s": time.perf_counter() - t0},
        "outputs": outputs,
        "summary": info.get("summary", {}),
    }
    if args.command == "cs":
        manifest["deterministic_columns"] = ["ratio", "method", "seed", "snr_db"]
    _write_json_atomic(args.out / MANIFEST, manifest)
    return EXIT_OK


def _replay_argv(manifest: dict, out: Path) -> list[str]:
    argv = list(manifest["argv"])
    if "--out" in argv:
        argv[argv.index("--out") + 1] = str(out)
    else:
        argv += ["--out", str(out)]
    seed = manifest["config"].get("seed")
    if "--seed" not in argv and seed is not None:
        argv += ["--seed", str(seed)]
    return argv


def _comparable(path: Path, manifest: dict):
    # results.csv carries wall-clock runtimes; compare its deterministic columns
    if path.name in _TIMED:
        lines = path.read_text().splitlines()
        return [",".join(line.split(",")[:4]) for line in lines]
    return sha256_file(path)


def cmd_replay(args) -> int:
    if not args.manifest.is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    manifest = json.loads(args.manifest.read_text())
    original = args.manifest.parent
    out = args.out or Path(tempfile.mkdtemp(prefix="lrtfs-replay-"))
    argv = _replay_argv(manifest, out)
    logger.info("replaying: lrtfs %s", shlex.join(argv))
    code = main(argv)
    if code != EXIT_OK:
        return code
    fresh = json.loads((out / MANIFEST).read_text())
    mismatched = []
    for name in sorted(set(manifest["outputs"]) | set(fresh["outputs"])):
        a, b = original / name, out / name
        if not (a.is_file() and b.is_file()) or _comparable(a, manifest) != _comparable(b, fresh):
            mismatched.append(name)
    if mismatched:
        print(f"replay differs in {len(mismatched)} file(s): {', '.join(mismatched)}",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replay identical: {len(fresh['outputs'])} file(s) in {out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        return _run(argv, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lrtfs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, WavFormatError, OSError, ValueError) as exc:
        print(f"lrtfs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
