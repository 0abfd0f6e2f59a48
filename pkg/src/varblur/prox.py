"""Classical priors usable as the plug-and-play denoising step.

A prior is any callable ``prox(x, strength) -> array`` working on
``(C, H, W)`` arrays and returning ``x`` unchanged at strength 0; a learned
denoiser can be dropped in with the same signature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage


class PriorProx:
    name = "base"

    def __call__(self, x: np.ndarray, strength: float) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class IdentityProx(PriorProx):
    name = "identity"

    def __call__(self, x, strength):
        return np.array(x, dtype=np.float64, copy=True)


def grad2d(u):
    """Forward differences of ``(..., H, W)`` with zero beyond the last row/col."""
    g = np.zeros((2,) + u.shape)
    g[0, ..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    g[1, ..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return g


def div2d(p):
    """Negative adjoint of :func:`grad2d`."""
    py, px = p[0], p[1]
    d = np.zeros(py.shape)
    d[..., :-1, :] += py[..., :-1, :]
    d[..., 1:, :] -= py[..., :-1, :]
    d[..., :, :-1] += px[..., :, :-1]
    d[..., :, 1:] -= px[..., :, :-1]
    return d


def tv_isotropic(u):
    g = grad2d(u)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


class TVProx(PriorProx):
    """``argmin_p 0.5 ||p - x||^2 + strength^2 * TV(p)``, isotropic TV per channel.

    ``strength`` plays the role of a denoiser noise level, so the TV weight is
    its square.  Solved on the dual with the fast gradient projection of Beck
    and Teboulle, ``n_iter`` iterations from a zero dual.
    """

    name = "tv"

    def __init__(self, n_iter: int = 20):
        self.n_iter = int(n_iter)

    def solve(self, x, strength):
        """Return ``(p, dual)``; ``dual`` is the unit-bounded field with ``p = x + w div(dual)``."""
        x = np.asarray(x, dtype=np.float64)
        lam = float(strength) ** 2
        p = np.zeros((2,) + x.shape)
        if lam <= 0:
            return x.copy(), p
        r = p.copy()
        t = 1.0
        for _ in range(self.n_iter):
            p_old = p
            q = r + grad2d(x + lam * div2d(r)) / (8.0 * lam)
            norm = np.maximum(1.0, np.sqrt(q[0] ** 2 + q[1] ** 2))
            p = q / norm
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            r = p + ((t - 1.0) / t_next) * (p - p_old)
            t = t_next
        return x + lam * div2d(p), p

    def __call__(self, x, strength):
        return self.solve(x, strength)[0]

    @staticmethod
    def objective(p, x, strength):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(np.sum((p - x) ** 2)) + float(strength) ** 2 * tv_isotropic(p)

    def duality_gap(self, x, strength):
        """Primal minus dual objective at the returned solution; bounds its suboptimality."""
        x = np.asarray(x, dtype=np.float64)
        p, _ = self.solve(x, strength)
        dual = 0.5 * float(np.sum(x * x)) - 0.5 * float(np.sum(p * p))
        return self.objective(p, x, strength) - dual

    def __repr__(self):
        return f"TVProx(n_iter={self.n_iter})"


class GaussianProx(PriorProx):
    """Gaussian smoothing with std ``width * strength`` pixels."""

    name = "gaussian"

    def __init__(self, width: float = 10.0):
        self.width = float(width)

    def __call__(self, x, strength):
        x = np.asarray(x, dtype=np.float64)
        s = self.width * float(strength)
        if s <= 0:
            return x.copy()
        return ndimage.gaussian_filter(x, sigma=(0, s, s), mode="nearest")

    def __repr__(self):
        return f"GaussianProx(width={self.width})"


PRIORS = {"identity": IdentityProx, "tv": TVProx, "gaussian": GaussianProx}


def make_prior(name: str, **kw) -> PriorProx:
    try:
        return PRIORS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown prior {name!r}; choose from {sorted(PRIORS)}") from None
