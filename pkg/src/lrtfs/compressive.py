"""Compressive-sensing recovery with LRTFS, l1 and type-I SBL priors.

All methods share one skeleton: start from ``alpha = 0``, run an unpenalized
descent pass, then alternate a variance (or threshold) update with shrinkage
iterations on ``M = A Phi`` while lambda decreases. Only the shrinkage
operator changes between methods. When the true signal is supplied, the
reported estimate is the one with the best output SNR along the lambda path.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.fft

from .errors import ParameterError
from .gabor import power_iteration
from .isnmf import EPS_NMF, NMFModel, init_svd, run_nmf
from .signals import output_snr_db
from .solver import SolverConfig, _rel_change, lambda_grid, shrinkage_iterations, solve

__all__ = [
    "MeasurementOperator",
    "SensedDictionary",
    "CSConfig",
    "CSResult",
    "METHODS",
    "sense",
    "cs_lrtfs",
    "cs_l1",
    "cs_sbl",
    "cs_oracle",
    "recover",
    "default_ratios",
    "sweep",
]

logger = logging.getLogger(__name__)

METHODS = ("lrtfs", "sbl", "l1", "oracle_variance", "oracle_nmf")
KINDS = ("gaussian", "dct", "identity")


class MeasurementOperator:
    """Seeded real sensing operator ``A`` with ``S`` rows and ``T`` columns.

    ``gaussian``: dense i.i.d. ``N(0, 1/S)`` entries, so that
    ``E||Ax||^2 = ||x||^2``. ``dct``: matrix-free random signs, orthonormal
    DCT and ``S`` kept rows scaled by ``sqrt(T/S)`` (same expected energy).
    ``identity``: ``S = T``, ``A = I``.
    """

    def __init__(self, S: int, T: int, seed: int = 0, kind: str = "gaussian"):
        if kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        S, T = int(S), int(T)
        if T < 1 or S < 1:
            raise ParameterError("S and T must be positive")
        if kind == "identity" and S != T:
            raise ParameterError("identity sensing needs S == T")
        if kind != "identity" and S >= T:
            raise ParameterError(f"need S < T for compressive sensing, got S={S}, T={T}")
        self.S, self.T, self.seed, self.kind = S, T, int(seed), kind

    @classmethod
    def identity(cls, T: int) -> "MeasurementOperator":
        return cls(T, T, 0, "identity")

    @classmethod
    def from_ratio(cls, ratio: float, T: int, seed: int = 0, kind: str = "gaussian"):
        """``S = max(1, round(ratio * T))``; ``ratio == 1`` gives the identity."""
        if ratio == 1.0:
            return cls.identity(T)
        if not 0.0 < ratio < 1.0:
            raise ParameterError(f"ratio must lie in (0, 1] , got {ratio}")
        return cls(max(1, int(round(ratio * T))), T, seed, kind)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.S, self.T)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``S x T`` matrix (regenerated identically from the seed)."""
        if self.kind == "gaussian":
            rng = np.random.default_rng(self.seed)
            return rng.standard_normal((self.S, self.T)) / np.sqrt(self.S)
        return np.stack([self.adjoint(e) for e in np.eye(self.S)])

    @cached_property
    def _dct_plan(self):
        rng = np.random.default_rng(self.seed)
        signs = rng.choice([-1.0, 1.0], size=self.T)
        rows = np.sort(rng.choice(self.T, size=self.S, replace=False))
        return signs, rows, np.sqrt(self.T / self.S)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.T,):
            raise ParameterError(f"expected length {self.T}, got {x.shape}")
        if self.kind == "identity":
            return x.copy()
        if self.kind == "gaussian":
            return self.matrix @ x
        signs, rows, gain = self._dct_plan
        return gain * scipy.fft.dct(signs * x, norm="ortho")[rows]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (self.S,):
            raise ParameterError(f"expected length {self.S}, got {y.shape}")
        if self.kind == "identity":
            return y.copy()
        if self.kind == "gaussian":
            return self.matrix.T @ y
        signs, rows, gain = self._dct_plan
        full = np.zeros(self.T, dtype=y.dtype)
        full[rows] = y
        return gain * signs * scipy.fft.idct(full, norm="ortho")

    @cached_property
    def norm_sq(self) -> float:
        """Upper bound on ``||A||_2^2``."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "dct":
            return self.T / self.S
        x0 = np.random.default_rng(self.seed + 1).standard_normal(self.T)
        est = power_iteration(lambda v: self.adjoint(self.apply(v)), x0)
        return 1.01 * est


def sense(A: MeasurementOperator, x, noise_var: float = 0.0, seed: Optional[int] = None):
    """``b = Ax + e`` with ``e ~ N(0, noise_var)`` i.i.d. (seeded)."""
    if noise_var < 0:
        raise ParameterError("noise_var must be nonnegative")
    b = A.apply(np.asarray(x, dtype=float))
    if noise_var > 0:
        rng = np.random.default_rng(A.seed + 7919 if seed is None else seed)
        b = b + np.sqrt(noise_var) * rng.standard_normal(b.shape)
    return b


class SensedDictionary:
    """The composed operator ``M = A Phi`` seen by the solvers.

    ``analysis(b) = Phi^H A^T b`` and ``synthesis(alpha) = A Phi alpha``
    (``2 Re[...]`` in real mode). ``norm_sq`` is the product bound
    ``||A||^2 ||Phi||^2``.
    """

    def __init__(self, A: MeasurementOperator, dictionary):
        if A.T != dictionary.signal_len:
            raise ParameterError("sensing width must equal the dictionary signal length")
        self.A = A
        self.dictionary = dictionary

    @property
    def shape(self):
        return self.dictionary.shape

    @property
    def mode(self):
        return self.dictionary.mode

    @property
    def signal_len(self) -> int:
        return self.A.S

    @property
    def norm_sq(self) -> float:
        return self.A.norm_sq * self.dictionary.norm_sq

    def analysis(self, b):
        return self.dictionary.analysis(self.A.adjoint(b))

    def synthesis(self, alpha):
        return self.A.apply(self.dictionary.synthesis(alpha))


@dataclass(frozen=True)
class CSConfig:
    """Settings shared by every recovery method.

    ``lambda_schedule`` drives the variance-based methods; the l1 baseline
    uses ``l1_count`` thresholds log-spaced from ``max|M^H b|`` down by
    ``l1_span``.
    """

    K: int = 10
    lambda_schedule: Sequence[float] = field(default_factory=lambda: lambda_grid(1e3, 1e-2, 16))
    l1_count: int = 16
    l1_span: float = 1e-5
    tol_outer: float = 1e-5
    tol_inner: float = 1e-5
    max_outer: int = 5
    max_inner: int = 50
    accel: bool = True

    def __post_init__(self):
        sched = tuple(float(v) for v in self.lambda_schedule)
        object.__setattr__(self, "lambda_schedule", sched)
        if not sched or any(v <= 0 for v in sched):
            raise ParameterError("lambda values must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ParameterError("lambda_schedule must be strictly decreasing")
        if self.K < 1 or self.l1_count < 1 or not 0 < self.l1_span < 1:
            raise ParameterError("invalid K, l1_count or l1_span")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            K=self.K,
            lambda_target=self.lambda_schedule[-1],
            lambda_schedule=self.lambda_schedule,
            tol_outer=self.tol_outer,
            tol_inner_isa=self.tol_inner,
            tol_inner_nmf=self.tol_inner,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            accel=self.accel,
        )


@dataclass
class CSResult:
    """Recovered signal ``x_hat = Phi alpha_hat`` and its bookkeeping.

    ``output_snr_db`` is NaN when no reference signal was supplied.
    ``path_snr_db`` lists the SNR at every lambda (or threshold) visited.
    """

    x_hat: np.ndarray
    alpha_hat: np.ndarray
    method: str
    output_snr_db: float
    lambda_used: float
    path_snr_db: list = field(default_factory=list)
    model: Optional[NMFModel] = None


def _first_pass(b, M, cfg: CSConfig) -> np.ndarray:
    # unpenalized descent from alpha = 0
    zero = np.zeros(M.shape, dtype=complex)
    (alpha,), _ = shrinkage_iterations(
        b, [M], [lambda z: z], [zero], M.norm_sq, cfg.tol_inner, cfg.max_inner, cfg.accel
    )
    return alpha


def _select(path, dictionary, method, x_true, model=None) -> CSResult:
    # path: list of (lambda, alpha, model)
    snrs = []
    for lam, alpha, _ in path:
        if x_true is None:
            snrs.append(float("nan"))
        else:
            snrs.append(output_snr_db(x_true, dictionary.synthesis(alpha)))
    best = len(path) - 1 if x_true is None else int(np.nanargmax(snrs))
    lam, alpha, mdl = path[best]
    x_hat = dictionary.synthesis(alpha)
    return CSResult(
        x_hat=x_hat,
        alpha_hat=alpha,
        method=method,
        output_snr_db=snrs[best],
        lambda_used=lam,
        path_snr_db=snrs,
        model=mdl if mdl is not None else model,
    )


def _check(b, A, dictionary):
    b = np.asarray(b, dtype=float)
    if b.shape != (A.S,):
        raise ParameterError(f"expected {A.S} measurements, got {b.shape}")
    return b, SensedDictionary(A, dictionary)


def cs_lrtfs(b, A, dictionary, cfg: Optional[CSConfig] = None, x_true=None) -> CSResult:
    """Low-rank recovery: the LRTFS solver run on ``M = A Phi``.

    The first descent pass from ``alpha = 0`` seeds the SVD initialization of
    ``W`` and ``H``.
    """
    cfg = cfg or CSConfig()
    b, M = _check(b, A, dictionary)
    alpha0 = _first_pass(b, M, cfg)
    model0 = init_svd(alpha0, cfg.K)
    sol = solve(b, M, cfg.solver_config(), keep_path=True, alpha0=alpha0, model0=model0)
    path = [(s.lambda_used, s.alpha, s.model) for s in sol.path]
    return _select(path, dictionary, "lrtfs", x_true)


def _alternate(b, M, alpha, cfg: CSConfig, schedule, variance_fn, prox_fn):
    """Shared skeleton: ``v = variance_fn(alpha)`` then shrinkage, per level."""
    L = M.norm_sq
    path = []
    for level in schedule:
        for _ in range(cfg.max_outer):
            v = variance_fn(alpha)
            prox = prox_fn(v, level, L)
            (new,), _ = shrinkage_iterations(
                b, [M], [prox], [alpha], L, cfg.tol_inner, cfg.max_inner, cfg.accel
            )
            change = _rel_change(new, alpha)
            alpha = new
            if change < cfg.tol_outer:
                break
        path.append((level, alpha, None))
    return path


def _ridge_prox(v, lam, L):
    factor = v / (v + lam / L)
    return lambda z: factor * z


def _soft_prox(_v, lam1, L):
    thresh = lam1 / L

    def prox(z):
        mag = np.abs(z)
        scale = np.maximum(0.0, 1.0 - thresh / np.maximum(mag, np.finfo(float).tiny))
        return scale * z

    return prox


def cs_l1(b, A, dictionary, lambda_l1=None, cfg: Optional[CSConfig] = None,
          x_true=None) -> CSResult:
    """l1 baseline: complex soft-thresholding of magnitudes at ``lambda_l1 / L``.

    ``lambda_l1`` may be a single value or a decreasing sequence; by default
    the ``cfg.l1_count`` values from ``max|M^H b|`` down by ``cfg.l1_span``.
    """
    cfg = cfg or CSConfig()
    b, M = _check(b, A, dictionary)
    if lambda_l1 is None:
        top = float(np.max(np.abs(M.analysis(b))))
        levels = lambda_grid(top, top * cfg.l1_span, cfg.l1_count) if top > 0 else (1.0,)
    else:
        levels = tuple(np.atleast_1d(np.asarray(lambda_l1, dtype=float)))
    if any(v < 0 for v in levels):
        raise ParameterError("lambda_l1 must be nonnegative")
    alpha = _first_pass(b, M, cfg)
    # a fixed threshold needs only one outer pass per level
    path = _alternate(b, M, alpha, replace(cfg, max_outer=1, max_inner=cfg.max_inner * cfg.max_outer),
                      levels, lambda a: None, _soft_prox)
    return _select(path, dictionary, "l1", x_true)


def cs_sbl(b, A, dictionary, cfg: Optional[CSConfig] = None, x_true=None) -> CSResult:
    """Type-I sparse Bayesian learning: ``v = |alpha|^2`` (floored) per outer pass."""
    cfg = cfg or CSConfig()
    b, M = _check(b, A, dictionary)
    alpha = _first_pass(b, M, cfg)
    path = _alternate(b, M, alpha, cfg, cfg.lambda_schedule,
                      lambda a: np.maximum(np.abs(a) ** 2, EPS_NMF), _ridge_prox)
    return _select(path, dictionary, "sbl", x_true)


def oracle_variance(x_true, dictionary) -> np.ndarray:
    """Power spectrogram of the true signal, floored."""
    return np.maximum(np.abs(dictionary.analysis(np.asarray(x_true))) ** 2, EPS_NMF)


def oracle_model(x_true, dictionary, K: int = 10, tol: float = 1e-5,
                 max_iter: int = 500) -> NMFModel:
    """IS-NMF (SVD start) of the true power spectrogram."""
    coefs = dictionary.analysis(np.asarray(x_true))
    S = np.maximum(np.abs(coefs) ** 2, EPS_NMF)
    model, _ = run_nmf(S, init_svd(coefs, K), tol, max_iter)
    return model


def cs_oracle(b, A, dictionary, truth, cfg: Optional[CSConfig] = None,
              x_true=None) -> CSResult:
    """Shrinkage with variances fixed by an oracle; no variance updates.

    ``truth`` is a variance grid (oracle 1) or an :class:`NMFModel`
    (oracle 2).
    """
    cfg = cfg or CSConfig()
    b, M = _check(b, A, dictionary)
    if isinstance(truth, NMFModel):
        v, method, model = truth.variance(), "oracle_nmf", truth
    else:
        v, method, model = np.asarray(truth, dtype=float), "oracle_variance", None
    if v.shape != tuple(M.shape) or np.any(v <= 0):
        raise ParameterError("oracle variances must match the grid and be positive")
    alpha = _first_pass(b, M, cfg)
    path = _alternate(b, M, alpha, replace(cfg, max_outer=1, max_inner=cfg.max_inner * cfg.max_outer),
                      cfg.lambda_schedule, lambda a: v, _ridge_prox)
    return _select(path, dictionary, method, x_true, model)


def recover(method: str, b, A, dictionary, cfg: Optional[CSConfig] = None,
            x_true=None) -> CSResult:
    """Dispatch on ``method`` (oracles need ``x_true``)."""
    cfg = cfg or CSConfig()
    if method == "lrtfs":
        return cs_lrtfs(b, A, dictionary, cfg, x_true)
    if method == "sbl":
        return cs_sbl(b, A, dictionary, cfg, x_true)
    if method == "l1":
        return cs_l1(b, A, dictionary, None, cfg, x_true)
    if method in ("oracle_variance", "oracle_nmf"):
        if x_true is None:
            raise ParameterError("oracle recovery needs the true signal")
        truth = (oracle_variance(x_true, dictionary) if method == "oracle_variance"
                 else oracle_model(x_true, dictionary, cfg.K))
        return cs_oracle(b, A, dictionary, truth, cfg, x_true)
    raise ParameterError(f"unknown method {method!r}; choose from {METHODS}")


def default_ratios(count: int = 6) -> tuple[float, ...]:
    """``count`` measurement ratios log-spaced from 1/100 to 1/10."""
    return tuple(float(r) for r in np.geomspace(0.01, 0.1, count))


def _sweep_row(task):
    ratio, method, seed, x_true, dictionary, cfg, kind, noise_var = task
    t0 = time.perf_counter()
    try:
        A = MeasurementOperator.from_ratio(ratio, len(x_true), seed, kind)
        b = sense(A, x_true, noise_var)
        res = recover(method, b, A, dictionary, cfg, x_true)
        snr, error = res.output_snr_db, ""
    except Exception as exc:  # recorded per row, the sweep goes on
        logger.warning("sweep row (%s, %s, %s) failed: %s", ratio, method, seed, exc)
        snr, error = float("nan"), f"{type(exc).__name__}: {exc}"
    return {
        "ratio": float(ratio),
        "method": method,
        "seed": int(seed),
        "snr_db": float(snr),
        "runtime_s": time.perf_counter() - t0,
        "error": error,
    }


def sweep(
    x_true,
    dictionary,
    ratios: Optional[Sequence[float]] = None,
    methods: Sequence[str] = ("lrtfs", "sbl", "l1"),
    seeds: Sequence[int] = (0,),
    cfg: Optional[CSConfig] = None,
    kind: str = "gaussian",
    noise_var: float = 0.0,
    jobs: int = 1,
) -> list[dict]:
    """Recover ``x_true`` from every (ratio, method, seed) combination.

    Returns rows ``{ratio, method, seed, snr_db, runtime_s, error}`` sorted
    by (ratio, method, seed). A failing row gets ``snr_db = nan`` and a
    message in ``error``.
    """
    cfg = cfg or CSConfig()
    ratios = default_ratios() if ratios is None else tuple(ratios)
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ParameterError(f"ratio {r} outside (0, 1]")
    for m in methods:
        if m not in METHODS:
            raise ParameterError(f"unknown method {m!r}")
    x_true = np.asarray(x_true, dtype=float)
    tasks = [(r, m, s, x_true, dictionary, cfg, kind, noise_var)
             for r in ratios for m in methods for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, tasks))
    else:
        rows = [_sweep_row(t) for t in tasks]
    return sorted(rows, key=lambda row: (row["ratio"], row["method"], row["seed"]))
