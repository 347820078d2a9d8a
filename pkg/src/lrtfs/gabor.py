"""Discrete Gabor analysis and synthesis operators.

The transform is periodic: a signal of length ``T`` is zero-padded to
``T_pad = N * hop`` samples and every frame wraps around the padded buffer.
The FFT length equals the window length (``F = len(window)``), which makes the
frame operator ``Phi Phi^H`` diagonal.

Atoms use half-bin frequencies::

    phi_{f,n}(t) = g(tau) * exp(2j*pi*(f + 1/2)*tau / F),   tau = (t - n*hop) mod T_pad

so that ``conj(phi_{f,n}) = phi_{F-1-f,n}``. Every atom has a distinct Hermitian
partner, and a real signal is described exactly by the first ``F/2`` rows
(``mode="real"``), with synthesis ``2 Re[Phi_ Phi alpha_]``.

Coefficient grids are ``(F_rows, N)`` complex arrays. Their vectorized form
is frequency-major within a frame, frames ordered in time (column-major
over ``(f, n)``), see :func:`vectorize`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError

__all__ = [
    "GaborDictionary",
    "MatrixDictionary",
    "build_tight_gabor",
    "analysis",
    "synthesis",
    "spectral_norm_sq",
    "power_iteration",
    "vectorize",
    "matrixize",
    "save_grid",
    "load_grid",
]

MODES = ("complex", "real")
NORM_INFLATION = 1.01
POWER_TOL = 1e-8


def vectorize(grid: np.ndarray) -> np.ndarray:
    """Flatten a ``(F_rows, N)`` grid, frequency index running fastest."""
    return np.asarray(grid).ravel(order="F")


def matrixize(vec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec)
    if vec.size != shape[0] * shape[1]:
        raise ParameterError(f"cannot reshape {vec.size} coefficients to {shape}")
    return vec.reshape(shape, order="F")


def power_iteration(
    apply_op: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = POWER_TOL,
    max_iter: int = 5000,
) -> float:
    """Largest eigenvalue of a positive semi-definite operator.

    Iterates ``x <- A x / ||A x||`` until the Rayleigh quotient changes by
    less than ``tol`` (relative).
    """
    x = x0 / np.linalg.norm(x0)
    value = 0.0
    for _ in range(max_iter):
        y = apply_op(x)
        new_value = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(new_value - value) <= tol * abs(new_value):
            return new_value
        value = new_value
    return value


@dataclass(frozen=True, eq=False)
class GaborDictionary:
    """Painless periodic Gabor frame.

    Parameters
    ----------
    window : ndarray
        Real analysis/synthesis window; its length sets the number of
        frequency channels ``F`` (must be even).
    hop : int
        Time shift between frames, in samples.
    signal_len : int
        Length ``T`` of the signals handled by the dictionary.
    mode : {"complex", "real"}
        ``"real"`` keeps the ``F/2`` positive-frequency rows and synthesizes
        ``2 Re[...]``.
    """

    window: np.ndarray
    hop: int
    signal_len: int
    mode: str = "real"
    tight_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        window = np.asarray(self.window, dtype=float)
        if window.ndim != 1 or window.size < 2 or window.size % 2:
            raise ParameterError("window length must be even and >= 2")
        if not np.all(np.isfinite(window)):
            raise ParameterError("window entries must be finite")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= int(self.hop) <= window.size:
            raise ParameterError("hop must lie in [1, window length]")
        if int(self.signal_len) < window.size:
            raise ParameterError("signal_len must be >= window length")
        window.setflags(write=False)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "hop", int(self.hop))
        object.__setattr__(self, "signal_len", int(self.signal_len))

    @property
    def num_freqs(self) -> int:
        return self.window.size

    @property
    def num_frames(self) -> int:
        return -(-self.signal_len // self.hop)

    @property
    def padded_len(self) -> int:
        return self.num_frames * self.hop

    @property
    def num_rows(self) -> int:
        """Rows of the coefficient grid (``F`` or ``F/2``)."""
        return self.num_freqs if self.mode == "complex" else self.num_freqs // 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_frames)

    @property
    def num_atoms(self) -> int:
        """``M = F * N`` (atoms of the full, Hermitian-extended dictionary)."""
        return self.num_freqs * self.num_frames

    def with_mode(self, mode: str) -> "GaborDictionary":
        return GaborDictionary(self.window, self.hop, self.signal_len, mode)

    @cached_property
    def _frame_index(self) -> np.ndarray:
        starts = np.arange(self.num_frames) * self.hop
        return (starts[:, None] + np.arange(self.num_freqs)[None, :]) % self.padded_len

    @cached_property
    def _modulated_window(self) -> np.ndarray:
        tau = np.arange(self.num_freqs)
        return self.window * np.exp(1j * np.pi * tau / self.num_freqs)

    @cached_property
    def _synthesis_window(self) -> np.ndarray:
        # F absorbs the 1/F of the inverse FFT
        return self.num_freqs * self._modulated_window

    @cached_property
    def _analysis_window(self) -> np.ndarray:
        return np.conj(self._modulated_window)

    def frame_diagonal(self) -> np.ndarray:
        """Diagonal of ``Phi Phi^H`` on the first ``T`` samples."""
        diag = np.bincount(
            self._frame_index.ravel(),
            weights=np.tile(self.window**2, self.num_frames),
            minlength=self.padded_len,
        )
        return self.num_freqs * diag[: self.signal_len]

    @cached_property
    def is_tight(self) -> bool:
        return bool(np.max(np.abs(self.frame_diagonal() - 1.0)) < self.tight_tol)

    @cached_property
    def frame_norm_sq(self) -> float:
        if self.is_tight:
            return 1.0
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(self.signal_len)
        if self.mode == "complex":
            x0 = x0 + 1j * rng.standard_normal(self.signal_len)
        gram = lambda x: self.synthesis(self.analysis(x))  # noqa: E731
        return NORM_INFLATION * power_iteration(gram, x0)

    @property
    def norm_sq(self) -> float:
        return self.frame_norm_sq

    def analysis(self, x: np.ndarray) -> np.ndarray:
        """Inner products with every atom: ``Phi^H x`` (or ``Phi_^H x``)."""
        x = np.asarray(x)
        if x.shape != (self.signal_len,):
            raise ParameterError(
                f"expected a signal of length {self.signal_len}, got shape {x.shape}"
            )
        padded = np.zeros(self.padded_len, dtype=np.result_type(x.dtype, float))
        padded[: self.signal_len] = x
        frames = padded[self._frame_index] * self._analysis_window
        coefs = np.fft.fft(frames, axis=1)
        return np.ascontiguousarray(coefs[:, : self.num_rows].T)

    def synthesis(self, alpha: np.ndarray) -> np.ndarray:
        """``Phi alpha`` (complex mode) or ``2 Re[Phi_ alpha_]`` (real mode)."""
        alpha = np.asarray(alpha)
        if alpha.shape != self.shape:
            raise ParameterError(f"expected a grid of shape {self.shape}, got {alpha.shape}")
        F = self.num_freqs
        spectra = np.zeros((self.num_frames, F), dtype=complex)
        spectra[:, : self.num_rows] = alpha.T
        frames = np.fft.ifft(spectra, axis=1) * self._synthesis_window
        if self.mode == "real":
            frames = 2.0 * frames.real
        return self._overlap_add(frames)[: self.signal_len]

    def _overlap_add(self, frames: np.ndarray) -> np.ndarray:
        # frames (N, F) placed circularly at multiples of the hop
        F, hop, N = self.num_freqs, self.hop, self.num_frames
        if F % hop == 0:
            blocks = frames.reshape(N, F // hop, hop)
            out = blocks[:, 0, :].copy()
            for r in range(1, F // hop):
                out += np.roll(blocks[:, r, :], r, axis=0)
            return out.ravel()
        idx = self._frame_index.ravel()
        out = np.bincount(idx, weights=frames.real.ravel(), minlength=self.padded_len)
        if np.iscomplexobj(frames):
            out = out + 1j * np.bincount(idx, weights=frames.imag.ravel(), minlength=self.padded_len)
        return out

    def atom(self, f: int, n: int) -> np.ndarray:
        """Time-domain atom ``phi_{f,n}`` (complex, length ``T``)."""
        grid = np.zeros(self.shape, dtype=complex)
        grid[f, n] = 1.0
        return self.with_mode("complex").synthesis(
            np.pad(grid, ((0, self.num_freqs - self.num_rows), (0, 0)))
        )

    def header(self) -> dict:
        return {
            "window_len": self.num_freqs,
            "hop": self.hop,
            "signal_len": self.signal_len,
            "mode": self.mode,
            "is_tight": self.is_tight,
        }


class MatrixDictionary:
    """Dense explicit dictionary, mostly for small oracle problems.

    ``atoms`` holds the columns ``phi_m`` (``T x F_rows*N``) in vectorized
    order. In ``"real"`` mode they are the positive-frequency half ``Phi_``
    and synthesis returns ``2 Re[Phi_ alpha_]``.
    """

    def __init__(self, atoms: np.ndarray, shape: tuple[int, int], mode: str = "complex"):
        atoms = np.asarray(atoms, dtype=complex)
        if mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if atoms.ndim != 2 or atoms.shape[1] != shape[0] * shape[1]:
            raise ParameterError("atoms must be a T x (F_rows*N) matrix")
        self.atoms = atoms
        self.shape = tuple(shape)
        self.mode = mode
        self.signal_len = atoms.shape[0]

    @classmethod
    def from_operator(cls, dictionary) -> "MatrixDictionary":
        """Dense copy of any dictionary exposing ``synthesis`` in complex form."""
        rows = dictionary.shape[0]
        cols = []
        for m in range(rows * dictionary.shape[1]):
            cols.append(dictionary.atom(m % rows, m // rows))
        return cls(np.stack(cols, axis=1), dictionary.shape, dictionary.mode)

    def full_atoms(self) -> np.ndarray:
        """``[Phi_, conj(Phi_)]`` in real mode, ``Phi`` otherwise."""
        if self.mode == "real":
            return np.hstack([self.atoms, self.atoms.conj()])
        return self.atoms

    @cached_property
    def norm_sq(self) -> float:
        return float(np.linalg.norm(self.full_atoms(), 2) ** 2)

    @property
    def frame_norm_sq(self) -> float:
        return self.norm_sq

    def analysis(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.signal_len,):
            raise ParameterError(f"expected a signal of length {self.signal_len}")
        return matrixize(self.atoms.conj().T @ x, self.shape)

    def synthesis(self, alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha)
        if alpha.shape != self.shape:
            raise ParameterError(f"expected a grid of shape {self.shape}")
        out = self.atoms @ vectorize(alpha)
        return 2.0 * out.real if self.mode == "real" else out

    def atom(self, f: int, n: int) -> np.ndarray:
        return self.atoms[:, n * self.shape[0] + f].copy()


def build_tight_gabor(
    window_len: int, overlap_fraction: float, signal_len: int, mode: str = "real"
) -> GaborDictionary:
    """Canonical tight Gabor frame on a periodic Hann window.

    The hop is ``round(window_len * (1 - overlap_fraction))``; the Hann window is
    divided by the square root of the frame diagonal so that
    ``Phi Phi^H = I``.

    >>> d = build_tight_gabor(1024, 0.5, 22050, "real")
    >>> d.hop, d.shape[0], d.frame_norm_sq
    (512, 512, 1.0)
    """
    window_len = int(window_len)
    if window_len < 2 or window_len % 2:
        raise ParameterError("window_len must be even and >= 2")
    if not 0.0 < overlap_fraction < 1.0:
        raise ParameterError("overlap_fraction must lie in (0, 1)")
    if signal_len < window_len:
        raise ParameterError("signal_len must be >= window_len")
    hop = int(round(window_len * (1.0 - overlap_fraction)))
    if not 1 <= hop < window_len:
        raise ParameterError("overlap_fraction gives an empty or full hop")
    tau = np.arange(window_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * tau / window_len)
    # frame diagonal is hop-periodic: sum over every window sample sharing tau mod hop
    folded = np.bincount(tau % hop, weights=hann**2, minlength=hop)
    window = hann / np.sqrt(window_len * folded[tau % hop])
    return GaborDictionary(window, hop, signal_len, mode)


def analysis(dictionary, x: np.ndarray) -> np.ndarray:
    return dictionary.analysis(x)


def synthesis(dictionary, alpha: np.ndarray) -> np.ndarray:
    return dictionary.synthesis(alpha)


def spectral_norm_sq(dictionary) -> float:
    """Squared spectral norm ``||Phi||_2^2`` (an upper bound for non-tight frames)."""
    return float(dictionary.norm_sq)


def save_grid(path, grid: np.ndarray, *, signal_len: int, mode: str) -> Path:
    """Write a coefficient grid as a JSON header plus a float64 sidecar.

    The sidecar (same stem, ``.bin``) holds little-endian interleaved
    ``(re, im)`` pairs in vectorized (frequency-major) order.
    """
    path = Path(path)
    grid = np.asarray(grid, dtype=complex)
    payload = path.with_suffix(".bin")
    header = {
        "F_rows": int(grid.shape[0]),
        "N": int(grid.shape[1]),
        "T": int(signal_len),
        "layout": "freq-major",
        "mode": mode,
        "payload": payload.name,
    }
    vec = vectorize(grid)
    inter = np.empty(2 * vec.size, dtype="<f8")
    inter[0::2] = vec.real
    inter[1::2] = vec.imag
    payload.write_bytes(inter.tobytes())
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def load_grid(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("layout") != "freq-major":
        raise ParameterError(f"unsupported grid layout {header.get('layout')!r}")
    raw = np.frombuffer((path.parent / header["payload"]).read_bytes(), dtype="<f8")
    shape = (header["F_rows"], header["N"])
    if raw.size != 2 * shape[0] * shape[1]:
        raise ParameterError("grid payload size does not match header")
    return matrixize(raw[0::2] + 1j * raw[1::2], shape), header
