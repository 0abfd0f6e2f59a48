"""Non-blind deconvolution by unrolled linearized ADMM.

Splitting ``z = H x`` and linearising the coupling term gives, per step k,

    x <- P_beta( x - gamma * H^T (H x - z + d) )
    z <- (y + alpha (H x + d)) / (alpha + 1)         alpha = sigma^2 mu
    d <- d + H x - z

where ``P_beta`` is a denoiser/proximal step.  With sensor saturation the
data term ``||R(z) - y||^2 / (2 sigma^2)`` is linearised around the previous
``z`` with a proximal weight ``L_z`` (see :func:`z_update_saturated`).

Per-step ``(alpha, beta, gamma)`` come from an :class:`AdmmSchedule`; the
default is a fixed geometric schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .blur import (BlurOperator, SaturationParams, _unwrap, adjoint, apply,
                   response_R, response_R_prime, response_R_second)
from .errors import DimensionError
from .prox import IdentityProx, PriorProx, TVProx

DEFAULT_ITERS = 8
L_Z_SAFETY = 2.0


@dataclass(frozen=True)
class AdmmSchedule:
    """Per-iteration hyper-parameters.

    ``alphas[k] = sigma^2 mu_k`` weighs the constraint against the data in
    the z-step, ``betas[k]`` is the prior strength and ``gammas[k]`` the
    gradient step of the x-step.  ``L_z=None`` means "estimate from data"
    (saturated mode only).
    """

    alphas: np.ndarray
    betas: np.ndarray
    gammas: np.ndarray
    sigma: float
    L_z: Optional[float] = None

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (self.alphas, self.betas, self.gammas)]
        n = len(arrs[0])
        if n < 1 or any(len(a) != n for a in arrs):
            raise ValueError("alphas, betas and gammas must be non-empty and of equal length")
        if any(np.any(a <= 0) for a in arrs):
            raise ValueError("schedule entries must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.L_z is not None and not self.L_z > 0:
            raise ValueError("L_z must be positive")
        for name, a in zip(("alphas", "betas", "gammas"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_iter(self):
        return len(self.alphas)

    @property
    def mus(self):
        return self.alphas / self.sigma ** 2

    @classmethod
    def geometric(cls, sigma: float, n_iter: int = DEFAULT_ITERS, beta_start: float = 0.08,
                  beta_end: float = 0.01, gamma: float = 1.0, alpha_start: float = 0.05,
                  alpha_end: float = 0.5, L_z: Optional[float] = None):
        """Log-linear decay of the prior strength and log-spaced ``mu_k``.

        ``mu_k`` runs from ``alpha_start / sigma^2`` to ``alpha_end / sigma^2``
        so the z-step moves from trusting the data to enforcing ``z = H x``.
        """
        alphas = np.geomspace(alpha_start, alpha_end, n_iter)
        betas = np.geomspace(beta_start, beta_end, n_iter)
        gammas = np.full(n_iter, float(gamma))
        return cls(alphas, betas, gammas, float(sigma), L_z)


@dataclass
class AdmmState:
    """``x`` lives on the latent grid; ``z`` and the scaled dual ``d`` on the observed grid."""

    x: np.ndarray
    z: np.ndarray
    d: np.ndarray

    def check(self, op: BlurOperator):
        if self.x.shape[1:] != op.input_shape:
            raise DimensionError(f"x {self.x.shape[1:]} vs operator input {op.input_shape}")
        if self.z.shape[1:] != op.output_shape or self.d.shape != self.z.shape:
            raise DimensionError(f"z/d {self.z.shape[1:]}/{self.d.shape[1:]} vs operator output {op.output_shape}")


def x_update(state: AdmmState, op: BlurOperator, prox: PriorProx, beta: float, gamma: float,
             Hx: Optional[np.ndarray] = None) -> np.ndarray:
    state.check(op)
    Hx = apply(op, state.x) if Hx is None else Hx
    step = state.x - gamma * adjoint(op, Hx - state.z + state.d)
    return prox(step, beta)


def z_update(state: AdmmState, op: BlurOperator, y: np.ndarray, alpha: float,
             Hx: Optional[np.ndarray] = None) -> np.ndarray:
    """Closed-form minimiser of ``||z - y||^2 / (2 sigma^2) + mu/2 ||z - (Hx + d)||^2``."""
    Hx = apply(op, state.x) if Hx is None else Hx
    return (y + alpha * (Hx + state.d)) / (alpha + 1.0)


def z_update_saturated(state: AdmmState, op: BlurOperator, y: np.ndarray, beta: float,
                       L_z: float, sigma: float, params: Optional[SaturationParams] = None,
                       Hx: Optional[np.ndarray] = None) -> np.ndarray:
    """One linearised step on ``||R(z) - y||^2 / (2 sigma^2)``.

    ``beta`` is the ADMM penalty (``mu``), ``L_z`` the proximal weight
    around the current ``z``.
    """
    if not L_z > 0:
        raise ValueError("L_z must be positive")
    Hx = apply(op, state.x) if Hx is None else Hx
    zk = state.z
    s2 = sigma * sigma
    num = (y - response_R(zk, params)) * response_R_prime(zk, params) + s2 * L_z * zk \
        + beta * s2 * (Hx + state.d)
    return num / ((L_z + beta) * s2)


def saturated_gradient(z, state: AdmmState, y, beta, L_z, sigma, Hx, params=None):
    """Gradient of the linearised z-cost at ``z`` (zero at the z-update)."""
    zk = state.z
    return ((response_R(zk, params) - y) * response_R_prime(zk, params) / sigma ** 2
            + L_z * (z - zk) + beta * (z - (Hx + state.d)))


def d_update(state: AdmmState, op: BlurOperator, Hx: Optional[np.ndarray] = None) -> np.ndarray:
    Hx = apply(op, state.x) if Hx is None else Hx
    return state.d + (Hx - state.z)


def estimate_L_z(z, y, sigma, params=None, safety: float = L_Z_SAFETY) -> float:
    """Curvature bound of the saturated data term over the current values."""
    rp = np.abs(response_R_prime(z, params))
    rpp = np.abs(response_R_second(z, params))
    res = np.abs(response_R(z, params) - y)
    return float(safety * (rp.max() ** 2 + rpp.max() * res.max()) / sigma ** 2)


def operator_norm_sq(op: BlurOperator, n_iter: int = 30, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``H^T H``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1,) + op.input_shape)
    lam = 0.0
    for _ in range(n_iter):
        x /= np.linalg.norm(x)
        x = adjoint(op, apply(op, x))
        lam = float(np.linalg.norm(x))
    return lam


@dataclass
class DeconvResult:
    x: object
    residuals: List[float] = field(default_factory=list)
    strengths: List[float] = field(default_factory=list)


def _initial_x(op, y):
    a = op.downsample
    if a == 1:
        return y.copy()
    return np.repeat(np.repeat(y, a, axis=1), a, axis=2)


def deconvolve(y, op: BlurOperator, schedule: AdmmSchedule, prox: Optional[PriorProx] = None,
               saturated: bool = False, params: Optional[SaturationParams] = None,
               cap_step: bool = True) -> DeconvResult:
    """Run ``schedule.n_iter`` ADMM steps and return the clipped estimate.

    With ``cap_step`` the gradient steps are limited to ``1 / ||H||^2``
    (estimated by power iteration); replicate borders can push ``||H||``
    above 1 when kernels are large relative to the image.

    ``residuals[0]`` is the data residual of the initial guess and
    ``residuals[k]`` that after step ``k``; the residual is ``||Hx - y||``, or
    ``||R(Hx) - y||`` in saturated mode.
    """
    prox = TVProx() if prox is None else prox
    yarr, wrap = _unwrap(y)
    if yarr.shape[1:] != op.output_shape:
        raise DimensionError(f"observation {yarr.shape[1:]} vs operator output {op.output_shape}")
    state = AdmmState(_initial_x(op, yarr), yarr.copy(), np.zeros_like(yarr))
    L_z = schedule.L_z
    if saturated and L_z is None:
        L_z = estimate_L_z(state.z, yarr, schedule.sigma, params)

    def residual(Hx):
        pred = response_R(Hx, params) if saturated else Hx
        return float(np.linalg.norm(pred - yarr))

    gammas = schedule.gammas
    if cap_step:
        gammas = np.minimum(gammas, 1.0 / max(operator_norm_sq(op), 1e-12))

    Hx = apply(op, state.x)
    out = DeconvResult(None, [residual(Hx)], [])
    for k in range(schedule.n_iter):
        state.x = x_update(state, op, prox, schedule.betas[k], gammas[k], Hx=Hx)
        Hx = apply(op, state.x)
        if saturated:
            state.z = z_update_saturated(state, op, yarr, schedule.mus[k], L_z, schedule.sigma, params, Hx=Hx)
        else:
            state.z = z_update(state, op, yarr, schedule.alphas[k], Hx=Hx)
        state.d = d_update(state, op, Hx=Hx)
        out.residuals.append(residual(Hx))
        out.strengths.append(float(schedule.betas[k]))
    out.x = wrap(np.clip(state.x, 0.0, 1.0))
    return out
