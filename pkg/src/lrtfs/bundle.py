"""On-disk solution bundles and plot-ready CSV dumps."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .gabor import load_grid, save_grid
from .isnmf import load_nmf, save_nmf
from .signals import SignalBuffer, read_wav, write_wav

__all__ = [
    "TRACE_HEADER",
    "write_bundle",
    "read_bundle",
    "write_trace",
    "write_rows",
    "write_db_grid",
]

TRACE_HEADER = ("iteration", "lambda", "objective", "residual_norm")


def write_rows(path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    """Plain CSV with a header line; floats written with ``repr`` precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_trace(path, history) -> Path:
    """``trace.csv`` from solver history rows ``(outer, lambda, block, obj, res)``."""
    return write_rows(path, TRACE_HEADER,
                      ((int(o), float(lam), float(obj), float(res))
                       for o, lam, _block, obj, res in history))


def write_db_grid(path, power: np.ndarray, floor_db: float = -120.0) -> Path:
    """Power grid as ``10 log10`` dB, one CSV row per frequency row."""
    power = np.asarray(power, dtype=float)
    db = 10.0 * np.log10(np.maximum(power, 10.0 ** (floor_db / 10.0)))
    path = Path(path)
    np.savetxt(path, db, delimiter=",", fmt="%.6f")
    return path


def write_bundle(
    directory,
    solution,
    dictionary,
    sample_rate: float,
    config: dict,
    components: Optional[np.ndarray] = None,
) -> Path:
    """Persist a single-layer solution.

    Layout: ``config.json``, ``alpha.json`` + ``alpha.bin``, ``nmf.json`` +
    ``nmf.bin``, ``reconstruction.wav``, ``components/kNN.wav`` and
    ``trace.csv``. WAV files are float32.
    """
    out = Path(directory)
    (out / "components").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    save_grid(out / "alpha.json", solution.alpha, signal_len=dictionary.signal_len,
              mode=dictionary.mode)
    save_nmf(out / "nmf.json", solution.model)
    write_wav(SignalBuffer(solution.reconstruction, sample_rate), out / "reconstruction.wav")
    if components is not None:
        width = max(2, len(str(len(components))))
        for k, comp in enumerate(components, start=1):
            write_wav(SignalBuffer(comp, sample_rate), out / "components" / f"k{k:0{width}d}.wav")
    write_trace(out / "trace.csv", solution.history)
    return out


def read_bundle(directory) -> dict:
    """Load a bundle back: config, alpha (+ header), model, reconstruction."""
    out = Path(directory)
    alpha, header = load_grid(out / "alpha.json")
    return {
        "config": json.loads((out / "config.json").read_text()),
        "alpha": alpha,
        "grid_header": header,
        "model": load_nmf(out / "nmf.json"),
        "reconstruction": read_wav(out / "reconstruction.wav"),
        "components": [read_wav(p) for p in sorted((out / "components").glob("k*.wav"))],
    }
