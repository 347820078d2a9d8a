"""Two-layer (sparse + low-rank) synthesis estimation.

Layer ``a`` carries the low-rank variance ``WH``; layer ``b`` has free
variances ``v_b`` (a type-I sparse Bayesian prior). Both layers are updated
jointly by accelerated shrinkage over the stacked dictionary and share one
lambda schedule. ``mu`` weighs the two priors against each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError
from .isnmf import EPS_NMF, NMFModel, init_svd, run_nmf
from .solver import (
    LRTFSSolution,
    SolverConfig,
    _data_weight,
    _prior_term,
    _rel_change,
    reconstruct_components,
    shrinkage_iterations,
)

__all__ = [
    "LayerSpec",
    "SLRConfig",
    "SLRSolution",
    "objective_cslr",
    "joint_isa_step",
    "solve_slr",
]

logger = logging.getLogger(__name__)

PRIORS = ("low_rank", "sparse")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: its dictionary, its prior and (low-rank only) its rank.

    ``variance`` optionally fixes the starting variances of a sparse layer.
    """

    dictionary: object
    prior: str = "low_rank"
    K: Optional[int] = None
    variance: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise ParameterError(f"prior must be one of {PRIORS}, got {self.prior!r}")
        if self.K is not None and self.K < 1:
            raise ParameterError("K must be >= 1")
        if self.variance is not None:
            v = np.asarray(self.variance, dtype=float)
            if v.shape != tuple(self.dictionary.shape) or np.any(v <= 0):
                raise ParameterError("layer variance must match the grid and be positive")


@dataclass(frozen=True)
class SLRConfig(SolverConfig):
    """:class:`SolverConfig` plus the layer balance ``mu`` in [0, 1]."""

    mu: float = 0.05

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.mu <= 1.0:
            raise ParameterError(f"mu must lie in [0, 1], got {self.mu}")


@dataclass
class SLRSolution:
    """Output of :func:`solve_slr`.

    ``x_a`` and ``x_b`` are the layer reconstructions, ``components_a`` the
    Wiener-masked latent components of layer ``a`` (by decreasing energy).
    ``history`` rows are ``(outer, lambda, block, objective, residual_norm)``
    with ``block`` in ``{"init", "nmf", "vb", "isa"}``.
    """

    alpha_a: np.ndarray
    alpha_b: np.ndarray
    model: NMFModel
    v_b: np.ndarray
    lambda_used: float
    mu: float
    x_a: np.ndarray
    x_b: np.ndarray
    components_a: np.ndarray
    history: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def reconstruction(self) -> np.ndarray:
        return self.x_a + self.x_b

    @property
    def objective_trace(self) -> list[float]:
        return [row[3] for row in self.history if row[1] == self.lambda_used]

    def layer_a(self) -> LRTFSSolution:
        """Layer ``a`` as a single-layer solution (for bundle writing)."""
        return LRTFSSolution(self.alpha_a, self.model, self.lambda_used, self.x_a,
                             converged=self.converged)

    def layer_b(self) -> LRTFSSolution:
        """Layer ``b`` with a rank-one stand-in model built from ``v_b``."""
        W = self.v_b.mean(axis=1, keepdims=True)
        H = np.ones((1, self.v_b.shape[1]))
        return LRTFSSolution(self.alpha_b, NMFModel(W, H), self.lambda_used, self.x_b,
                             converged=self.converged)


def _check_dicts(dicts):
    d_a, d_b = dicts
    if d_a.signal_len != d_b.signal_len:
        raise ParameterError("both layers must share the signal length")
    if d_a.mode != d_b.mode:
        raise ParameterError("both layers must use the same (real or complex) mode")
    return d_a, d_b


def objective_cslr(x, alpha_a, alpha_b, model, v_b, lam: float, mu: float, dicts) -> float:
    """Two-layer objective, up to its additive constant.

    ``w ||x - Phi_a a - Phi_b b||^2 + mu [D_IS(|a|^2 | v_a) + sum log|a|^2]
    + (1 - mu) [D_IS(|b|^2 | v_b) + sum log|b|^2]`` with the same data weight
    ``w`` and flooring as the single-layer objective. ``model`` is an
    :class:`NMFModel` or a variance grid for layer ``a``.
    """
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    d_a, d_b = _check_dicts(dicts)
    residual = np.asarray(x) - d_a.synthesis(alpha_a) - d_b.synthesis(alpha_b)
    fit = _data_weight(d_a.mode, lam) * float(np.vdot(residual, residual).real)
    v_a = model.variance() if isinstance(model, NMFModel) else np.asarray(model, dtype=float)
    total = fit
    # skip zero-weight terms so mu = 1 or 0 does not evaluate 0 * inf
    if mu > 0:
        total += mu * _prior_term(alpha_a, v_a)
    if mu < 1:
        total += (1.0 - mu) * _prior_term(alpha_b, np.asarray(v_b, dtype=float))
    return total


def _joint_ridge(x, alphas, variances, lam, mu, dicts) -> float:
    # alpha-dependent part of objective_cslr
    (a, b), (v_a, v_b), (d_a, d_b) = alphas, variances, dicts
    residual = np.asarray(x) - d_a.synthesis(a) - d_b.synthesis(b)
    fit = _data_weight(d_a.mode, lam) * float(np.vdot(residual, residual).real)
    pa = float(np.sum(np.maximum(np.abs(a) ** 2, EPS_NMF) / v_a))
    pb = float(np.sum(np.maximum(np.abs(b) ** 2, EPS_NMF) / v_b))
    return fit + mu * pa + (1.0 - mu) * pb


def joint_isa_step(
    x,
    alphas,
    variances,
    lam: float,
    mu: float,
    dicts,
    L: Optional[float] = None,
    tol: float = 1e-5,
    max_iter: int = 200,
    accel: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint shrinkage over ``[Phi_a, Phi_b]`` for fixed variances.

    Each iteration takes a ``1/L`` step along ``Phi_i^H e`` with the joint
    residual ``e``, then shrinks layer ``a`` by ``v_a / (v_a + mu lam / L)``
    and layer ``b`` by ``v_b / (v_b + (1 - mu) lam / L)``. ``L`` defaults to
    ``||Phi_a||^2 + ||Phi_b||^2``. ``max_iter=1`` gives a single step.
    """
    d_a, d_b = _check_dicts(dicts)
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    if not 0.0 <= mu <= 1.0:
        raise ParameterError("mu must lie in [0, 1]")
    v_a, v_b = (np.asarray(v, dtype=float) for v in variances)
    for v in (v_a, v_b):
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ParameterError("variances must be finite and positive")
    L = d_a.norm_sq + d_b.norm_sq if L is None else float(L)
    fa = v_a / (v_a + mu * lam / L)
    fb = v_b / (v_b + (1.0 - mu) * lam / L)
    (a, b), _ = shrinkage_iterations(
        np.asarray(x), [d_a, d_b], [lambda z: fa * z, lambda z: fb * z],
        list(alphas), L, tol, max_iter, accel,
    )
    return a, b


def _initial_split(mu: float) -> float:
    # share of the analysis coefficients given to layer b at start; a layer
    # without prior weight starts empty and only absorbs what the other sheds
    if mu >= 1.0:
        return 0.0
    if mu <= 0.0:
        return 1.0
    return 0.5


def solve_slr(
    x,
    spec_a: LayerSpec,
    spec_b: LayerSpec,
    cfg: Optional[SLRConfig] = None,
) -> SLRSolution:
    """Alternate IS-NMF on ``|alpha_a|^2``, ``v_b = |alpha_b|^2`` and a joint
    shrinkage solve, for every lambda of the schedule (warm restarts).

    Starts from the analysis coefficients of each layer, split between the
    layers (half each for ``0 < mu < 1``), and the SVD initialization of
    ``W``, ``H``. ``v_b`` is floored at ``EPS_NMF`` so that zeroed sparse
    coefficients can come back. At ``mu = 1`` (``mu = 0``) layer ``b``
    (layer ``a``) carries no prior weight; it is kept at zero and the other
    layer is solved on its own, so ``mu = 1`` reproduces :func:`solve`.
    """
    cfg = cfg or SLRConfig()
    if spec_a.prior != "low_rank" or spec_b.prior != "sparse":
        raise ParameterError("solve_slr expects a low-rank layer a and a sparse layer b")
    dicts = _check_dicts((spec_a.dictionary, spec_b.dictionary))
    d_a, d_b = dicts
    x = np.asarray(x)
    if x.shape != (d_a.signal_len,):
        raise ParameterError(f"expected a signal of length {d_a.signal_len}")
    K = spec_a.K or cfg.K
    mu = cfg.mu
    L = d_a.norm_sq + d_b.norm_sq

    share = _initial_split(mu)
    alpha_a = (1.0 - share) * d_a.analysis(x)
    alpha_b = share * d_b.analysis(x)
    model = init_svd(alpha_a, K)
    if spec_b.variance is not None:
        v_b = np.asarray(spec_b.variance, dtype=float)
    else:
        v_b = np.maximum(np.abs(alpha_b) ** 2, EPS_NMF)

    history: list = []
    counts = {"outer": 0, "nmf": 0, "isa": 0}
    converged = True
    outer = 0

    def record(block, lam, a, b, m, vb):
        obj = objective_cslr(x, a, b, m, vb, lam, mu, dicts)
        res = float(np.linalg.norm(x - d_a.synthesis(a) - d_b.synthesis(b)))
        history.append((outer, lam, block, obj, res))

    for lam in cfg.lambda_schedule:
        record("init", lam, alpha_a, alpha_b, model, v_b)
        stage_converged = False
        for _ in range(cfg.max_outer):
            outer += 1
            counts["outer"] += 1
            S = np.maximum(np.abs(alpha_a) ** 2, EPS_NMF)
            new_model, n_nmf = run_nmf(S, model, cfg.tol_inner_nmf, cfg.max_inner)
            counts["nmf"] += n_nmf
            record("nmf", lam, alpha_a, alpha_b, new_model, v_b)

            new_vb = np.maximum(np.abs(alpha_b) ** 2, EPS_NMF)
            record("vb", lam, alpha_a, alpha_b, new_model, new_vb)

            variances = (new_model.variance(), new_vb)
            (new_a, new_b), n_isa = _joint_block(
                x, (alpha_a, alpha_b), variances, lam, mu, dicts, L, cfg
            )
            counts["isa"] += n_isa
            if _joint_ridge(x, (new_a, new_b), variances, lam, mu, dicts) > _joint_ridge(
                x, (alpha_a, alpha_b), variances, lam, mu, dicts
            ):
                new_a, new_b = alpha_a, alpha_b
            record("isa", lam, new_a, new_b, new_model, new_vb)

            change = max(
                _rel_change(new_a, alpha_a),
                _rel_change(new_b, alpha_b),
                _rel_change(new_model.W, model.W),
                _rel_change(new_model.H, model.H),
            )
            alpha_a, alpha_b, model, v_b = new_a, new_b, new_model, new_vb
            if change < cfg.tol_outer:
                stage_converged = True
                break
        converged = converged and stage_converged
        logger.debug("lambda=%.3g outer=%d", lam, outer)

    x_a = d_a.synthesis(alpha_a)
    x_b = d_b.synthesis(alpha_b)
    layer = LRTFSSolution(alpha_a, model, cfg.lambda_target, x_a)
    return SLRSolution(
        alpha_a=alpha_a,
        alpha_b=alpha_b,
        model=model,
        v_b=v_b,
        lambda_used=cfg.lambda_target,
        mu=mu,
        x_a=x_a,
        x_b=x_b,
        components_a=reconstruct_components(layer, d_a),
        history=history,
        iterations=counts,
        converged=converged,
    )


def _joint_block(x, alphas, variances, lam, mu, dicts, L, cfg):
    v_a, v_b = variances
    if mu in (0.0, 1.0):
        # a layer without prior weight would be unregularized and absorb the
        # whole signal; it is switched off and the other layer runs alone
        live = 0 if mu == 1.0 else 1
        d, v = dicts[live], variances[live]
        factor = v / (v + lam / d.norm_sq)
        (new,), n_iter = shrinkage_iterations(
            x, [d], [lambda z: factor * z], [alphas[live]], d.norm_sq,
            cfg.tol_inner_isa, cfg.max_inner, cfg.accel,
        )
        out = [alphas[0], alphas[1]]
        out[live] = new
        return tuple(out), n_iter
    fa = v_a / (v_a + mu * lam / L)
    fb = v_b / (v_b + (1.0 - mu) * lam / L)
    return shrinkage_iterations(
        x, list(dicts), [lambda z: fa * z, lambda z: fb * z], list(alphas), L,
        cfg.tol_inner_isa, cfg.max_inner, cfg.accel,
    )
