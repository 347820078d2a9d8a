"""Itakura-Saito NMF: divergence, multiplicative updates, SVD init, Wiener masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

__all__ = [
    "EPS_NMF",
    "NMFModel",
    "is_divergence",
    "mm_update",
    "run_nmf",
    "init_svd",
    "wiener_masks",
    "save_nmf",
    "load_nmf",
]

EPS_NMF = 1e-12


@dataclass(frozen=True, eq=False)
class NMFModel:
    """Nonnegative factors ``W`` (F_rows x K) and ``H`` (K x N); variance ``WH``."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        W = np.maximum(np.asarray(self.W, dtype=float), EPS_NMF)
        H = np.maximum(np.asarray(self.H, dtype=float), EPS_NMF)
        if W.ndim != 2 or H.ndim != 2 or W.shape[1] != H.shape[0]:
            raise ParameterError(f"incompatible factor shapes {W.shape} and {H.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(H))):
            raise ParameterError("NMF factors must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "H", H)

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.W.shape[0], self.H.shape[1])

    def variance(self) -> np.ndarray:
        return self.W @ self.H


def _check_pair(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ParameterError(f"shape mismatch {A.shape} vs {B.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ParameterError("divergence inputs must be finite")
    if np.any(B <= 0):
        raise ParameterError("second argument must be strictly positive")
    if np.any(A < 0):
        raise ParameterError("first argument must be nonnegative")
    return A, B


def is_divergence(A, B) -> float:
    r"""Itakura-Saito divergence :math:`\sum_{ij} a/b - \log(a/b) - 1`.

    Entries of ``A`` are floored at ``EPS_NMF`` before taking ratios.
    """
    A, B = _check_pair(A, B)
    ratio = np.maximum(A, EPS_NMF) / B
    return float(np.sum(ratio - np.log(ratio) - 1.0))


def mm_update(S: np.ndarray, model: NMFModel) -> NMFModel:
    """One multiplicative update of ``W`` then ``H`` (H sees the new W)."""
    S = np.maximum(np.asarray(S, dtype=float), EPS_NMF)
    if S.shape != model.shape:
        raise ParameterError(f"S has shape {S.shape}, model expects {model.shape}")
    W, H = model.W, model.H

    V = W @ H
    W = W * (((S / V**2) @ H.T) / ((1.0 / V) @ H.T))
    W = np.maximum(W, EPS_NMF)

    V = W @ H
    H = H * ((W.T @ (S / V**2)) / (W.T @ (1.0 / V)))
    return NMFModel(W, H)


def _rel_change(new, old):
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    return diff / denom if denom > 0 else diff


def run_nmf(
    S: np.ndarray,
    model: NMFModel,
    tol: float = 1e-5,
    max_iter: int = 200,
    trace: list | None = None,
) -> tuple[NMFModel, int]:
    """Iterate :func:`mm_update` until both factors move by less than ``tol``.

    Returns the final model and the number of updates performed. If ``trace``
    is a list, ``D_IS(S | WH)`` is appended after every update.
    """
    S = np.maximum(np.asarray(S, dtype=float), EPS_NMF)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = mm_update(S, model)
        change = max(_rel_change(new.W, model.W), _rel_change(new.H, model.H))
        model = new
        if trace is not None:
            trace.append(is_divergence(S, model.variance()))
        if change < tol:
            break
    return model, n_iter


def init_svd(Y: np.ndarray, K: int) -> NMFModel:
    """Factors from the magnitudes of a truncated complex SVD of ``Y``.

    With ``Y ~ sum_k s_k u_k v_k^H``: ``w_k = |u_k| sqrt(s_k)`` and
    ``h_k = sqrt(s_k) |v_k|``, floored at ``EPS_NMF``.
    """
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ParameterError("Y must be a matrix")
    if not 1 <= K <= min(Y.shape):
        raise ParameterError(f"rank K={K} outside [1, {min(Y.shape)}]")
    U, s, Vh = np.linalg.svd(Y, full_matrices=False)
    root = np.sqrt(s[:K])
    W = np.abs(U[:, :K]) * root[None, :]
    H = root[:, None] * np.abs(Vh[:K, :])
    return NMFModel(W, H)


def wiener_masks(model: NMFModel) -> np.ndarray:
    """Masks ``w_fk h_kn / [WH]_fn`` stacked as a ``(K, F_rows, N)`` array."""
    parts = model.W.T[:, :, None] * model.H[:, None, :]
    return parts / parts.sum(axis=0, keepdims=True)


def save_nmf(path, model: NMFModel) -> Path:
    """JSON header plus sidecar holding ``W`` then ``H`` (row-major, <f8)."""
    path = Path(path)
    payload = path.with_suffix(".bin")
    header = {
        "F_rows": model.W.shape[0],
        "K": model.rank,
        "N": model.H.shape[1],
        "order": ["W", "H"],
        "layout": "row-major",
        "payload": payload.name,
    }
    payload.write_bytes(
        np.ascontiguousarray(model.W, dtype="<f8").tobytes()
        + np.ascontiguousarray(model.H, dtype="<f8").tobytes()
    )
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def load_nmf(path) -> NMFModel:
    path = Path(path)
    header = json.loads(path.read_text())
    F, K, N = header["F_rows"], header["K"], header["N"]
    raw = np.frombuffer((path.parent / header["payload"]).read_bytes(), dtype="<f8")
    if raw.size != F * K + K * N:
        raise ParameterError("NMF payload size does not match header")
    return NMFModel(raw[: F * K].reshape(F, K), raw[F * K :].reshape(K, N))
