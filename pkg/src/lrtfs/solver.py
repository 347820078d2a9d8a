"""Single-layer low-rank time-frequency synthesis (LRTFS) estimation.

Alternates IS-NMF of the synthesis spectrogram ``|alpha|^2`` with an
accelerated iterative shrinkage (ISA) solve of the ridge problem in
``alpha``. The dictionary's ``mode`` selects the complex model or the real
(Hermitian-symmetric) one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .gabor import spectral_norm_sq
from .isnmf import EPS_NMF, NMFModel, init_svd, is_divergence, run_nmf, wiener_masks

__all__ = [
    "SolverConfig",
    "LRTFSSolution",
    "lambda_grid",
    "objective_cjl",
    "isa_solve",
    "solve",
    "reconstruct_components",
    "shrinkage_iterations",
]

logger = logging.getLogger(__name__)


def lambda_grid(start: float, stop: float, count: int) -> tuple[float, ...]:
    """``count`` values log-spaced from ``start`` down to ``stop``."""
    if count < 1 or start <= 0 or stop <= 0:
        raise ParameterError("lambda grid needs positive bounds and count >= 1")
    if count == 1:
        return (float(stop),)
    return tuple(float(v) for v in np.geomspace(start, stop, count))


@dataclass(frozen=True)
class SolverConfig:
    """Hyper-parameters of the alternate minimization.

    ``lambda_schedule`` is the tempering sequence (warm restart from one value
    to the next); it must be strictly decreasing and end at ``lambda_target``.
    Left as ``None`` it becomes the 30-point grid 1e-1 ... 1e-6 when
    ``lambda_target`` is 1e-6, and the single value ``lambda_target``
    otherwise.
    """

    K: int = 10
    lambda_target: float = 1e-6
    lambda_schedule: Optional[Sequence[float]] = None
    tol_outer: float = 1e-5
    tol_inner_isa: float = 1e-5
    tol_inner_nmf: float = 1e-5
    max_outer: int = 30
    max_inner: int = 200
    accel: bool = True

    def __post_init__(self):
        schedule = self.lambda_schedule
        if schedule is None:
            schedule = lambda_grid(1e-1, 1e-6, 30) if self.lambda_target == 1e-6 else (
                self.lambda_target,
            )
        schedule = tuple(float(v) for v in schedule)
        object.__setattr__(self, "lambda_schedule", schedule)
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if any(v <= 0 for v in schedule) or self.lambda_target <= 0:
            raise ParameterError("lambda values must be positive")
        if any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise ParameterError("lambda_schedule must be strictly decreasing")
        if not np.isclose(schedule[-1], self.lambda_target, rtol=1e-12, atol=0):
            raise ParameterError("lambda_schedule must end at lambda_target")
        if min(self.tol_outer, self.tol_inner_isa, self.tol_inner_nmf) <= 0:
            raise ParameterError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ParameterError("iteration caps must be >= 1")

    @classmethod
    def with_grid(cls, start: float, stop: float, count: int, **kwargs) -> "SolverConfig":
        grid = lambda_grid(start, stop, count)
        return cls(lambda_target=grid[-1], lambda_schedule=grid, **kwargs)

    def at(self, lam: float) -> "SolverConfig":
        """Same settings, single value ``lam`` (no tempering)."""
        return replace(self, lambda_target=float(lam), lambda_schedule=(float(lam),))


@dataclass
class LRTFSSolution:
    """Output of :func:`solve`.

    ``history`` rows are ``(outer_iteration, lambda, block, objective,
    residual_norm)`` with ``block`` in ``{"init", "nmf", "isa"}``.
    """

    alpha: np.ndarray
    model: NMFModel
    lambda_used: float
    reconstruction: np.ndarray
    history: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)
    converged: bool = True
    lambda_hat: float = float("nan")
    path: list = field(default_factory=list)

    @property
    def objective_trace(self) -> list[float]:
        """Objective after each block update, at the final lambda."""
        return [row[3] for row in self.history if row[1] == self.lambda_used]


def _data_weight(mode: str, lam: float) -> float:
    # complex noise N_c(0, lam) vs real noise N(0, lam)
    return 1.0 / lam if mode == "complex" else 1.0 / (2.0 * lam)


def _prior_term(alpha: np.ndarray, v: np.ndarray) -> float:
    s = np.maximum(np.abs(alpha) ** 2, EPS_NMF)
    return is_divergence(s, v) + float(np.sum(np.log(s)))


def _variance(model_or_v) -> np.ndarray:
    if isinstance(model_or_v, NMFModel):
        return model_or_v.variance()
    v = np.asarray(model_or_v, dtype=float)
    if np.any(v <= 0):
        raise ParameterError("variances must be positive")
    return v


def objective_cjl(x, alpha, model, lam: float, dictionary) -> float:
    """Joint negative log-likelihood, up to its additive constant.

    ``w ||x - Phi alpha||^2 + D_IS(|alpha|^2 | v) + sum log|alpha|^2`` with
    ``w = 1/lam`` (complex model) or ``1/(2 lam)`` (real model) and
    ``|alpha|^2`` floored at ``EPS_NMF``. ``model`` is an :class:`NMFModel`
    or a variance grid.
    """
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    residual = np.asarray(x) - dictionary.synthesis(alpha)
    fit = _data_weight(dictionary.mode, lam) * float(np.vdot(residual, residual).real)
    return fit + _prior_term(alpha, _variance(model))


def _ridge_objective(x, alpha, v, lam, dictionary) -> float:
    # alpha-dependent part of objective_cjl (same flooring)
    residual = np.asarray(x) - dictionary.synthesis(alpha)
    fit = _data_weight(dictionary.mode, lam) * float(np.vdot(residual, residual).real)
    return fit + float(np.sum(np.maximum(np.abs(alpha) ** 2, EPS_NMF) / v))


def _rel_change(new, old) -> float:
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    return float(diff / denom) if denom > 0 else float(diff)


def shrinkage_iterations(
    x: np.ndarray,
    ops: Sequence,
    proxes: Sequence[Callable[[np.ndarray], np.ndarray]],
    starts: Sequence[np.ndarray],
    L: float,
    tol: float,
    max_iter: int,
    accel: bool = True,
) -> tuple[list[np.ndarray], int]:
    """Accelerated iterative shrinkage over one or several dictionaries.

    Each iteration computes the joint residual ``x - sum_i Phi_i a_i``, takes a
    ``1/L`` descent step on every layer, applies the layer's ``prox`` and
    extrapolates with weight ``j/(j+5)``. Stops when the relative change of
    the stacked iterate falls below ``tol``.
    """
    z = [np.array(s, dtype=complex) for s in starts]
    a = [zi.copy() for zi in z]
    n_iter = 0
    for j in range(max_iter):
        n_iter = j + 1
        residual = x - sum(op.synthesis(ai) for op, ai in zip(ops, a))
        z_new = [
            prox(ai + op.analysis(residual) / L) for op, prox, ai in zip(ops, proxes, a)
        ]
        diff = sum(np.vdot(zn - zo, zn - zo).real for zn, zo in zip(z_new, z))
        ref = sum(np.vdot(zo, zo).real for zo in z)
        weight = j / (j + 5.0) if accel else 0.0
        a = [zn + weight * (zn - zo) for zn, zo in zip(z_new, z)]
        z = z_new
        if (np.sqrt(diff / ref) if ref > 0 else np.sqrt(diff)) < tol:
            break
    return z, n_iter


def _check_isa_inputs(v, lam):
    v = np.asarray(v, dtype=float)
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ParameterError("variances must be finite and positive")
    return v


def isa_solve(
    x,
    dictionary,
    v,
    lam: float,
    alpha0,
    cfg: Optional[SolverConfig] = None,
    L: Optional[float] = None,
) -> np.ndarray:
    """Minimize the ridge problem in ``alpha`` for fixed variances ``v``.

    Descends ``a + (1/L) Phi^H (x - Phi a)`` (``2 Re[...]`` synthesis in real
    mode), shrinks by ``v / (v + lam/L)`` and accelerates with ``j/(j+5)``.
    """
    cfg = cfg or SolverConfig()
    v = _check_isa_inputs(v, lam)
    L = spectral_norm_sq(dictionary) if L is None else float(L)
    alpha, _ = _isa_block(x, dictionary, v, lam, alpha0, cfg, L)
    return alpha


def _isa_block(x, dictionary, v, lam, alpha, cfg, L):
    factor = v / (v + lam / L)
    (new,), n_iter = shrinkage_iterations(
        x, [dictionary], [lambda z: factor * z], [alpha], L,
        cfg.tol_inner_isa, cfg.max_inner, cfg.accel,
    )
    return new, n_iter


def solve(
    x,
    dictionary,
    cfg: Optional[SolverConfig] = None,
    keep_path: bool = False,
    alpha0: Optional[np.ndarray] = None,
    model0: Optional[NMFModel] = None,
) -> LRTFSSolution:
    """Alternate minimization over ``(W, H)`` and ``alpha`` with tempering.

    Parameters
    ----------
    x : ndarray
        Observed signal (length ``dictionary.signal_len``).
    dictionary : GaborDictionary or compatible operator
        Anything exposing ``analysis``, ``synthesis``, ``shape``, ``mode``
        and ``norm_sq``.
    cfg : SolverConfig
    keep_path : bool
        Also return one solution per lambda value in ``solution.path``.
    alpha0, model0 : optional
        Starting point; defaults to the analysis coefficients and the SVD
        initialization.
    """
    cfg = cfg or SolverConfig()
    x = np.asarray(x)
    if x.shape != (dictionary.signal_len,):
        raise ParameterError(f"expected a signal of length {dictionary.signal_len}")
    L = spectral_norm_sq(dictionary)

    alpha = dictionary.analysis(x) if alpha0 is None else np.array(alpha0, dtype=complex)
    model = init_svd(alpha, cfg.K) if model0 is None else model0

    history: list = []
    path: list = []
    counts = {"outer": 0, "nmf": 0, "isa": 0}
    converged = True
    outer = 0
    for lam in cfg.lambda_schedule:
        obj = objective_cjl(x, alpha, model, lam, dictionary)
        history.append((outer, lam, "init", obj, _residual_norm(x, alpha, dictionary)))
        stage_converged = False
        for _ in range(cfg.max_outer):
            outer += 1
            counts["outer"] += 1
            S = np.maximum(np.abs(alpha) ** 2, EPS_NMF)
            new_model, n_nmf = run_nmf(S, model, cfg.tol_inner_nmf, cfg.max_inner)
            counts["nmf"] += n_nmf
            obj = objective_cjl(x, alpha, new_model, lam, dictionary)
            history.append((outer, lam, "nmf", obj, _residual_norm(x, alpha, dictionary)))

            v = new_model.variance()
            new_alpha, n_isa = _isa_block(x, dictionary, v, lam, alpha, cfg, L)
            counts["isa"] += n_isa
            # accelerated iterations are not monotone: keep the block a descent step
            if _ridge_objective(x, new_alpha, v, lam, dictionary) > _ridge_objective(
                x, alpha, v, lam, dictionary
            ):
                new_alpha = alpha
            obj = objective_cjl(x, new_alpha, new_model, lam, dictionary)
            history.append((outer, lam, "isa", obj, _residual_norm(x, new_alpha, dictionary)))

            change = max(
                _rel_change(new_alpha, alpha),
                _rel_change(new_model.W, model.W),
                _rel_change(new_model.H, model.H),
            )
            alpha, model = new_alpha, new_model
            if change < cfg.tol_outer:
                stage_converged = True
                break
        converged = converged and stage_converged
        logger.debug("lambda=%.3g outer=%d objective=%.6g", lam, outer, obj)
        if keep_path:
            path.append(_make_solution(x, dictionary, alpha, model, lam, [], {}, stage_converged))

    if not converged:
        logger.info("iteration cap reached before convergence at some lambda")
    return _make_solution(
        x, dictionary, alpha, model, cfg.lambda_target, history, counts, converged, path
    )


def _residual_norm(x, alpha, dictionary) -> float:
    return float(np.linalg.norm(x - dictionary.synthesis(alpha)))


def _make_solution(x, dictionary, alpha, model, lam, history, counts, converged, path=None):
    recon = dictionary.synthesis(alpha)
    residual = x - recon
    return LRTFSSolution(
        alpha=alpha,
        model=model,
        lambda_used=lam,
        reconstruction=recon,
        history=history,
        iterations=dict(counts),
        converged=converged,
        # diagnostic only, never fed back: lambda stays a fixed hyper-parameter
        lambda_hat=float(np.vdot(residual, residual).real / len(x)),
        path=path or [],
    )


def reconstruct_components(solution: LRTFSSolution, dictionary) -> np.ndarray:
    """Latent components ``synthesis(mask_k * alpha)``, by decreasing energy.

    Returns a ``(K, T)`` array; the components sum to
    ``synthesis(alpha)``.
    """
    masks = wiener_masks(solution.model)
    comps = np.stack([dictionary.synthesis(m * solution.alpha) for m in masks])
    energy = np.sum(np.abs(comps) ** 2, axis=1)
    return comps[np.argsort(-energy, kind="stable")]
