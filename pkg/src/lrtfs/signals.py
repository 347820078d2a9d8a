"""Signals: WAV I/O, synthetic ground truth, noise and output SNR.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64 bit
generator), never the global numpy state.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .errors import ParameterError, WavFormatError
from .gabor import build_tight_gabor

__all__ = [
    "SignalBuffer",
    "SyntheticSpec",
    "read_wav",
    "write_wav",
    "synthesize",
    "add_noise",
    "output_snr_db",
    "preset",
    "PRESETS",
    "SNR_CAP_DB",
]

SNR_CAP_DB = 160.0
SYNTHETIC_KINDS = ("gabor_atoms", "harmonic_notes", "rank_r_tf", "noise")


@dataclass(frozen=True, eq=False)
class SignalBuffer:
    samples: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ParameterError("samples must be a 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")
        if not self.sample_rate > 0:
            raise ParameterError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SyntheticSpec:
    """Description of a synthetic signal; see :func:`synthesize`.

    ``kind`` is one of ``gabor_atoms``, ``harmonic_notes``, ``rank_r_tf``,
    ``noise``. ``params`` holds the kind-specific settings.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ParameterError(f"unknown synthetic kind {self.kind!r}")
        if self.kind in ("rank_r_tf", "noise") and self.seed is None:
            raise ParameterError(f"kind {self.kind!r} needs a seed")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params, "seed": self.seed})

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        data = json.loads(text)
        return cls(data["kind"], data.get("params", {}), data.get("seed"))


# -- WAV ------------------------------------------------------------------


def read_wav(path) -> SignalBuffer:
    """Read a mono PCM16 or IEEE float32 WAV file as float64 samples."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except wavfile.WavFileWarning as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    except (ValueError, EOFError, IndexError, struct.error) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(float)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if samples.size == 0:
        raise WavFormatError(f"{path}: no samples")
    return SignalBuffer(samples, float(rate), path.stem)


def write_wav(buffer: SignalBuffer, path, sample_format: str = "float32") -> Path:
    """Write ``buffer`` as mono ``float32`` (lossless for float32 data) or ``pcm16``."""
    path = Path(path)
    rate = int(round(buffer.sample_rate))
    if sample_format == "float32":
        data = buffer.samples.astype(np.float32)
    elif sample_format == "pcm16":
        data = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ParameterError(f"unsupported sample format {sample_format!r}")
    wavfile.write(path, rate, data)
    return path


# -- metrics and noise ----------------------------------------------------


def output_snr_db(x_true, x_hat) -> float:
    """``10 log10(||x||^2 / ||x - x_hat||^2)``, capped at ``SNR_CAP_DB``."""
    x_true = np.asarray(x_true)
    x_hat = np.asarray(x_hat)
    if x_true.shape != x_hat.shape:
        raise ParameterError("signals must have equal lengths")
    ref = float(np.vdot(x_true, x_true).real)
    if ref == 0.0:
        raise ParameterError("reference signal is zero; SNR undefined")
    err = float(np.vdot(x_true - x_hat, x_true - x_hat).real)
    if err == 0.0 or ref / err > 10.0 ** (SNR_CAP_DB / 10.0):
        return SNR_CAP_DB
    return 10.0 * np.log10(ref / err)


def add_noise(buffer: SignalBuffer, input_snr_db: float, seed: int) -> SignalBuffer:
    """Add white Gaussian noise rescaled to hit ``input_snr_db`` exactly."""
    x = buffer.samples
    energy = float(x @ x)
    if energy == 0.0:
        raise ParameterError("cannot set an SNR on a zero signal")
    noise = np.random.default_rng(seed).standard_normal(x.size)
    noise *= np.sqrt(energy / (float(noise @ noise) * 10.0 ** (input_snr_db / 10.0)))
    return SignalBuffer(x + noise, buffer.sample_rate, buffer.label)


# -- synthetic signals ----------------------------------------------------


def _dictionary_from(params: dict, T: int):
    return build_tight_gabor(
        params.get("window_len", 1024), params.get("overlap", 0.5), T, "real"
    )


def _gabor_atoms(spec, T, sr):
    d = _dictionary_from(spec.params, T)
    comps = []
    for atom in spec.params.get("atoms", []):
        f, n = int(atom["f"]), int(atom["n"])
        if not (0 <= f < d.shape[0] and 0 <= n < d.shape[1]):
            raise ParameterError(f"atom ({f}, {n}) outside grid {d.shape}")
        grid = np.zeros(d.shape, dtype=complex)
        grid[f, n] = complex(atom.get("re", 1.0), atom.get("im", 0.0))
        comps.append(d.synthesis(grid))
    x = np.sum(comps, axis=0) if comps else np.zeros(T)
    return x, {"components": np.array(comps).reshape(len(comps), T)}


def _note_envelope(t, onset, duration, attack, decay, release=0.05):
    local = t - onset
    env = np.where(local < attack, local / attack, np.exp(-(local - attack) / decay))
    fade = np.clip((onset + duration - t) / release, 0.0, 1.0)
    return np.where(local >= 0, env * fade, 0.0)


def _harmonic_notes(spec, T, sr):
    t = np.arange(T) / sr
    rng = np.random.default_rng(spec.seed if spec.seed is not None else 0)
    comps = []
    for note in spec.params.get("notes", []):
        f0 = float(note["freq"])
        if not 0 < f0 < sr / 2:
            raise ParameterError(f"note frequency {f0} Hz is outside (0, Nyquist)")
        n_harm = int(note.get("harmonics", 6))
        rolloff = float(note.get("rolloff", 0.6))
        env = np.zeros(T)
        for onset in note.get("onsets", [0.0]):
            env += _note_envelope(
                t, onset, note.get("duration", 1.0),
                note.get("attack", 0.01), note.get("decay", 0.8),
            )
        tone = np.zeros(T)
        for h in range(1, n_harm + 1):
            if h * f0 >= sr / 2:
                break
            tone += rolloff ** (h - 1) * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        comps.append(float(note.get("amplitude", 0.2)) * env * tone)
    x = np.sum(comps, axis=0) if comps else np.zeros(T)
    return x, {"components": np.array(comps).reshape(len(comps), T)}


def _smooth_activations(rng, r, N, min_len=4):
    H = np.zeros((r, N))
    for k in range(r):
        pos = 0
        while pos < N:
            length = int(rng.integers(min_len, max(min_len + 1, N // 3)))
            if rng.uniform() < 0.6:
                H[k, pos : pos + length] = rng.uniform(0.3, 1.0) * np.exp(
                    -np.arange(min(length, N - pos)) / max(length / 2.0, 1.0)
                )
            pos += length
        if not H[k].any():
            H[k, : N // 2] = 1.0
    return H


def _rank_r_tf(spec, T, sr):
    p = spec.params
    d = _dictionary_from(p, T)
    F, N = d.shape
    r = int(p.get("rank", 2))
    rng = np.random.default_rng(spec.seed)
    if "W" in p:
        W = np.asarray(p["W"], dtype=float)
    else:
        freqs = np.arange(F) * sr / (2 * F)
        n_harm = int(p.get("harmonics", 19))
        width = float(p.get("width_bins", 2.0)) * sr / (2 * F)
        W = np.full((F, r), float(p.get("floor", 1e-4)))
        for k in range(r):
            f0 = rng.uniform(100.0, 600.0)
            for h in range(1, n_harm + 1):
                if h * f0 >= sr / 2:
                    break
                W[:, k] += 0.7 ** (h - 1) * np.exp(-0.5 * ((freqs - h * f0) / width) ** 2)
    if p.get("stationary", False):
        H = np.ones((r, N))
    elif "H" in p:
        H = np.asarray(p["H"], dtype=float)
    else:
        H = _smooth_activations(rng, r, N)
    scale = float(p.get("scale", 1.0))
    parts = []
    for k in range(r):
        v_k = scale * np.outer(W[:, k], H[k])
        z = rng.standard_normal((2, F, N))
        parts.append(np.sqrt(v_k / 2.0) * (z[0] + 1j * z[1]))
    alpha = np.sum(parts, axis=0)
    comps = np.array([d.synthesis(a) for a in parts])
    return d.synthesis(alpha), {
        "components": comps,
        "alpha": alpha,
        "W": W * scale,
        "H": H,
        "dictionary": d,
    }


def synthesize(spec: SyntheticSpec, T: int, sample_rate: float) -> tuple[SignalBuffer, dict]:
    """Deterministic synthetic signal and its ground truth.

    Returns ``(buffer, truth)`` where ``truth["components"]`` is a
    ``(n_components, T)`` array summing to the signal. ``rank_r_tf`` draws
    ``alpha_fn ~ N_c(0, [WH]_fn)`` and also returns ``alpha``, ``W``, ``H``.
    """
    if T < 1 or sample_rate <= 0:
        raise ParameterError("T and sample_rate must be positive")
    if spec.kind == "gabor_atoms":
        x, truth = _gabor_atoms(spec, T, sample_rate)
    elif spec.kind == "harmonic_notes":
        x, truth = _harmonic_notes(spec, T, sample_rate)
    elif spec.kind == "rank_r_tf":
        x, truth = _rank_r_tf(spec, T, sample_rate)
    else:
        sigma = float(spec.params.get("std", 1.0))
        x = sigma * np.random.default_rng(spec.seed).standard_normal(T)
        truth = {"components": x[None, :].copy()}
    return SignalBuffer(x, sample_rate, spec.kind), truth


# -- presets --------------------------------------------------------------

# Pitches chosen so that no two of the first six partials fall within four
# frequency bins of each other at 22050 Hz / 1024 bins. Amplitudes put the mix
# near unit RMS, which is the scale the default lambda grid is tuned for.
FOUR_NOTE_PITCHES = (548.0, 771.0, 874.0, 995.0)
FOUR_NOTE_AMPLITUDES = (2.6, 2.4, 2.2, 2.0)


def _four_notes(sample_rate=22050.0, duration=15.6, seed=0):
    measure = duration / 7.0
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    onsets = [[0.0] for _ in range(4)]
    for m, pair in enumerate(pairs, start=1):
        for i in pair:
            onsets[i].append(m * measure)
    notes = [
        {
            "freq": f,
            "onsets": onsets[i],
            "duration": 0.9 * measure,
            "amplitude": FOUR_NOTE_AMPLITUDES[i],
            "harmonics": 6,
            "decay": 0.35 * measure,
        }
        for i, f in enumerate(FOUR_NOTE_PITCHES)
    ]
    return SyntheticSpec("harmonic_notes", {"notes": notes}, seed), sample_rate, duration


def preset(name: str, sample_rate: Optional[float] = None, duration: Optional[float] = None,
           seed: int = 0) -> tuple[SignalBuffer, dict]:
    """Named benchmark signals.

    ``fournotes``: four harmonic notes, all together then in every pair
    (22050 Hz, 15.6 s by default). ``tonalclick``: sustained notes plus
    broadband clicks made of short-window atoms. ``rank2``: an exact rank-2
    synthesis-model draw (11025 Hz). ``singleatom``: one Gabor atom.
    """
    if name == "fournotes":
        spec, sr, dur = _four_notes(sample_rate or 22050.0, duration or 15.6, seed)
        return synthesize(spec, int(round(sr * dur)), sr)
    if name == "tonalclick":
        sr = sample_rate or 22050.0
        dur = duration or 3.0
        T = int(round(sr * dur))
        tonal_spec = SyntheticSpec("harmonic_notes", {"notes": [
            {"freq": 220.0, "onsets": [0.0], "duration": dur, "amplitude": 1.25,
             "harmonics": 6, "attack": 0.15, "decay": 4.0 * dur},
            {"freq": 329.63, "onsets": [0.3 * dur], "duration": 0.7 * dur,
             "amplitude": 0.9, "harmonics": 5, "attack": 0.15, "decay": 4.0 * dur},
        ]}, seed)
        tonal, _ = synthesize(tonal_spec, T, sr)
        rng = np.random.default_rng(seed + 1)
        d_short = build_tight_gabor(128, 0.5, T, "real")
        atoms = []
        n_clicks = max(2, int(dur * 3))
        for n in np.linspace(2, d_short.shape[1] - 3, n_clicks).astype(int):
            amp = rng.uniform(1.25, 2.0)
            for f in range(2, d_short.shape[0] - 2):
                phase = rng.uniform(0, 2 * np.pi)
                atoms.append({"f": int(f), "n": int(n), "re": amp * np.cos(phase),
                              "im": amp * np.sin(phase)})
        click_spec = SyntheticSpec("gabor_atoms", {"window_len": 128, "atoms": atoms})
        clicks, _ = synthesize(click_spec, T, sr)
        x = tonal.samples + clicks.samples
        truth = {"components": np.stack([tonal.samples, clicks.samples]),
                 "tonal": tonal.samples, "clicks": clicks.samples}
        return SignalBuffer(x, sr, "tonalclick"), truth
    if name == "rank2":
        sr = sample_rate or 11025.0
        dur = duration or 15.6
        # few narrow partials keep the t-f support compressible; the variance
        # scale puts the signal near RMS 100, where the recovery lambda grid
        # 1e3 ... 1e-2 brackets the useful range
        spec = SyntheticSpec("rank_r_tf", {"rank": 2, "window_len": 512, "overlap": 0.5,
                                           "harmonics": 3, "width_bins": 0.5,
                                           "floor": 1e-6, "scale": 2.4e6}, seed)
        return synthesize(spec, int(round(sr * dur)), sr)
    if name == "singleatom":
        sr = sample_rate or 22050.0
        dur = duration or 0.5
        T = int(round(sr * dur))
        d = build_tight_gabor(1024, 0.5, T, "real")
        spec = SyntheticSpec("gabor_atoms", {"window_len": 1024, "atoms": [
            {"f": 40, "n": d.shape[1] // 2, "re": 1.0, "im": 0.0}]})
        return synthesize(spec, T, sr)
    raise ParameterError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("fournotes", "tonalclick", "rank2", "singleatom")
