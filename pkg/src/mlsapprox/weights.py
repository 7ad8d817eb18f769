"""Compactly supported radial weights ``w_j(x) = phi(||x - x_j|| / delta)``.

Each profile supplies three closed forms, all regular at ``t = 0``:
``phi(t)``, ``phi'(t)/t`` and ``phi''(t) - phi'(t)/t``. With ``v = x - x_j``
and ``t = ||v||/delta`` the chain rule gives

    grad w = (phi'/t) / delta**2 * v
    hess w = (phi'/t) / delta**2 * I + (phi'' - phi'/t) / delta**2 * v v^T / |v|**2

so the center ``x = x_j`` needs no special branch beyond ``v v^T / |v|**2``
(whose coefficient vanishes there).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class WeightKind(str, enum.Enum):
    WENDLAND_C4 = "wendland_c4"
    WENDLAND_C2 = "wendland_c2"
    BUMP = "bump"


_SMOOTHNESS = {WeightKind.WENDLAND_C4: 4, WeightKind.WENDLAND_C2: 2, WeightKind.BUMP: 1 << 30}


def _wendland_c4(t):
    s = 1.0 - t
    s4 = s**4
    s5 = s4 * s
    return s5 * s * (35.0 * t * t + 18.0 * t + 3.0), -56.0 * s5 * (5.0 * t + 1.0), 1680.0 * s4 * t * t


def _wendland_c2(t):
    s = 1.0 - t
    s2 = s * s
    return s2 * s2 * (4.0 * t + 1.0), -20.0 * s2 * s, 60.0 * s2 * t


def _bump(t):
    # exp(1 - 1/(1 - t^2)), so phi(0) = 1
    g = 1.0 / (1.0 - t * t)
    phi = np.exp(1.0 - g)
    d1t = -2.0 * phi * g * g
    d2 = -2.0 * phi * g * g * (1.0 - 2.0 * t * t * g * g + 4.0 * t * t * g)
    return phi, d1t, d2 - d1t


_PROFILES = {
    WeightKind.WENDLAND_C4: _wendland_c4,
    WeightKind.WENDLAND_C2: _wendland_c2,
    WeightKind.BUMP: _bump,
}


def _profile(kind: WeightKind, t: np.ndarray):
    """``(phi, phi'/t, phi'' - phi'/t)`` with exact zeros for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    inside = t < 1.0
    tt = np.where(inside, t, 0.0)
    vals = _PROFILES[kind](tt)
    return tuple(np.where(inside, v, 0.0) for v in vals)


def phi(kind: WeightKind | str, t) -> np.ndarray | float:
    """Radial profile. Wendland C4 is ``(1-t)_+^6 (35t^2 + 18t + 3)``;
    Wendland C2 is ``(1-t)_+^4 (4t + 1)``; the bump is ``exp(1 - 1/(1-t^2))``.
    """
    kind = WeightKind(kind)
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("phi requires t >= 0")
    out = _profile(kind, arr)[0]
    return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class WeightFunction:
    kind: WeightKind
    support_radius: float

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if not self.support_radius > 0:
            raise ValueError("support radius must be positive")

    @property
    def smoothness(self) -> int:
        return _SMOOTHNESS[self.kind]

    def min_on_half(self) -> float:
        """``min phi`` over ``[0, 1/2]``; a diagnostic for the stability constant."""
        return float(np.min(phi(self.kind, np.linspace(0.0, 0.5, 1001))))

    def evaluate(self, v: np.ndarray, max_order: int = 0):
        """Weights and derivatives for offsets ``v = x - x_j`` of shape ``(..., d)``.

        Returns ``(w, grad, hess)``; ``grad`` is ``(..., d)`` when
        ``max_order >= 1`` and ``hess`` is ``(..., d, d)`` when ``max_order >= 2``,
        otherwise ``None``.
        """
        if max_order > min(2, self.smoothness):
            raise ValueError(f"{self.kind.value} weight does not support derivative order {max_order}")
        delta = self.support_radius
        v = np.asarray(v, dtype=float)
        r2 = np.einsum("...i,...i->...", v, v)
        r = np.sqrt(r2)
        w, d1t, d2r = _profile(self.kind, r / delta)
        grad = hess = None
        if max_order >= 1:
            grad = (d1t / delta**2)[..., None] * v
        if max_order >= 2:
            d = v.shape[-1]
            safe = np.where(r2 > 0, r2, 1.0)
            outer = v[..., :, None] * v[..., None, :] / safe[..., None, None]
            hess = (d2r / delta**2)[..., None, None] * outer
            hess = hess + (d1t / delta**2)[..., None, None] * np.eye(d)
        return w, grad, hess


def weight_and_derivatives(w: WeightFunction, x, x_j, max_order: int = 0):
    """Value, gradient and Hessian of ``w_j`` at a single point ``x``."""
    v = np.asarray(x, dtype=float) - np.asarray(x_j, dtype=float)
    val, grad, hess = w.evaluate(v, max_order)
    return float(val), grad, hess
