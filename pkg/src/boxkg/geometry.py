"""Gumbel box kernel: expected volumes, intersections, conditional
probabilities and the vector-to-box distance.

Everything here is vectorised over leading axes; the last axis is the box
dimension. The ``*_and_grad`` kernels return analytic partial derivatives and
are what the model modules chain through. The plain functions operate on
:class:`GumbelBox` values and are the user-facing surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# below this softplus argument log(softplus(z)) == z to double precision
_LOG_SOFTPLUS_CUTOFF = -30.0


class DegenerateBoxError(ValueError):
    """Raised when a box is too thin for a volume ratio to be meaningful."""


@dataclass(frozen=True)
class BoxConfig:
    dim: int = 512
    beta: float = 1.0
    euler_gamma: float = EULER_GAMMA
    alpha: float = 0.5
    volume_clamp: float = 1e-10
    intersection: str = "smooth"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"box dim must be >= 1, got {self.dim}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.volume_clamp > 0:
            raise ValueError(f"volume_clamp must be > 0, got {self.volume_clamp}")
        if self.intersection not in ("smooth", "hard"):
            raise ValueError(f"intersection must be 'smooth' or 'hard', got {self.intersection!r}")


@dataclass(frozen=True)
class GumbelBox:
    """Axis-aligned box given by center and (strictly positive) offset."""

    center: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64)
        if center.shape != offset.shape:
            raise ValueError(f"center shape {center.shape} != offset shape {offset.shape}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "offset", offset)

    @classmethod
    def from_corners(cls, lo, hi) -> "GumbelBox":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        return cls((lo + hi) / 2.0, (hi - lo) / 2.0)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.offset

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.offset

    @property
    def dim(self) -> int:
        return self.center.shape[-1]

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.offset))):
            raise ValueError("box has non-finite parameters")
        if np.any(self.offset <= 0):
            raise ValueError("box offset must be strictly positive")


# ---------------------------------------------------------------------------
# scalar helpers


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    # same value as logaddexp(0, x), about 3x faster
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    # tanh form does not overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _log_softplus(z):
    z = np.asarray(z, dtype=np.float64)
    safe = np.maximum(z, _LOG_SOFTPLUS_CUTOFF)
    return np.where(z < _LOG_SOFTPLUS_CUTOFF, z, np.log(softplus(safe)))


def _dlog_softplus(z):
    """d/dz log(softplus(z)) = sigmoid(z) / softplus(z)."""
    z = np.asarray(z, dtype=np.float64)
    safe = np.maximum(z, _LOG_SOFTPLUS_CUTOFF)
    return np.where(z < _LOG_SOFTPLUS_CUTOFF, 1.0, sigmoid(safe) / softplus(safe))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite box parameter (corrupted model state?)")


def _check_same_dim(a, b):
    if np.shape(a)[-1] != np.shape(b)[-1]:
        raise ValueError(f"dimension mismatch: {np.shape(a)[-1]} vs {np.shape(b)[-1]}")


# ---------------------------------------------------------------------------
# corner-level kernels


def log_side_lengths(lo, hi, beta, gamma=EULER_GAMMA):
    z = (hi - lo) / beta - 2.0 * gamma
    return np.log(beta) + _log_softplus(z)


def log_volume(lo, hi, beta, gamma=EULER_GAMMA):
    """log E[Vol] of Gumbel boxes with location corners ``lo``/``hi``."""
    return np.sum(log_side_lengths(lo, hi, beta, gamma), axis=-1)


def log_volume_and_grad(lo, hi, beta, gamma=EULER_GAMMA):
    """Returns ``(log_vol, d log_vol / d lo, d log_vol / d hi)``."""
    z = (hi - lo) / beta - 2.0 * gamma
    lv = np.sum(np.log(beta) + _log_softplus(z), axis=-1)
    dz = _dlog_softplus(z) / beta
    return lv, -dz, dz


def intersect_corners(lo_x, hi_x, lo_y, hi_y, beta, mode="smooth"):
    """Intersection corners plus the weights ``d lo / d lo_x`` and ``d hi / d hi_x``.

    The complementary weights (w.r.t. ``y``) are ``1 - w``.
    """
    if mode == "smooth":
        lo = beta * np.logaddexp(lo_x / beta, lo_y / beta)
        hi = -beta * np.logaddexp(-hi_x / beta, -hi_y / beta)
        w_lo = sigmoid((lo_x - lo_y) / beta)
        w_hi = sigmoid((hi_y - hi_x) / beta)
    elif mode == "hard":
        lo = np.maximum(lo_x, lo_y)
        hi = np.minimum(hi_x, hi_y)
        # subgradient: ties split evenly
        w_lo = np.where(lo_x > lo_y, 1.0, np.where(lo_x < lo_y, 0.0, 0.5))
        w_hi = np.where(hi_x < hi_y, 1.0, np.where(hi_x > hi_y, 0.0, 0.5))
    else:
        raise ValueError(f"unknown intersection mode {mode!r}")
    return lo, hi, w_lo, w_hi


def log_conditional_and_grad(lo_x, hi_x, lo_y, hi_y, beta, gamma=EULER_GAMMA, mode="smooth"):
    """log P(x | y) = log E[Vol(x ∩ y)] - log E[Vol(y)] and its corner gradients.

    Returns ``(logp, d_lo_x, d_hi_x, d_lo_y, d_hi_y)``.
    """
    lo_i, hi_i, w_lo, w_hi = intersect_corners(lo_x, hi_x, lo_y, hi_y, beta, mode)
    lv_i, dlo_i, dhi_i = log_volume_and_grad(lo_i, hi_i, beta, gamma)
    lv_y, dlo_y, dhi_y = log_volume_and_grad(lo_y, hi_y, beta, gamma)
    logp = lv_i - lv_y
    g_lo_x = dlo_i * w_lo
    g_hi_x = dhi_i * w_hi
    g_lo_y = dlo_i * (1.0 - w_lo) - dlo_y
    g_hi_y = dhi_i * (1.0 - w_hi) - dhi_y
    return logp, g_lo_x, g_hi_x, g_lo_y, g_hi_y


def adaptive_alpha_and_grad(lo, hi, cfg: BoxConfig):
    """alpha * sigmoid(1 / max(E[Vol], clamp)) with gradients w.r.t. corners."""
    lv, dlv_lo, dlv_hi = log_volume_and_grad(lo, hi, cfg.beta, cfg.euler_gamma)
    log_clamp = np.log(cfg.volume_clamp)
    clamped = lv < log_clamp
    inv_vol = np.exp(-np.maximum(lv, log_clamp))
    s = sigmoid(inv_vol)
    a = cfg.alpha * s
    # d a / d lv = alpha * s(1-s) * d(1/V)/d lv = -alpha * s(1-s) / V
    da_dlv = np.where(clamped, 0.0, -cfg.alpha * s * (1.0 - s) * inv_vol)
    return a, da_dlv[..., None] * dlv_lo, da_dlv[..., None] * dlv_hi


def log_alpha_gap(lo, hi, cfg: BoxConfig):
    """log(alpha - alpha_c), finite even where alpha_c rounds to alpha."""
    lv = log_volume(lo, hi, cfg.beta, cfg.euler_gamma)
    inv_vol = np.exp(-np.maximum(lv, np.log(cfg.volume_clamp)))
    return np.log(cfg.alpha) - softplus(inv_vol)


def box_distance_and_grad(p, lo, hi, cen, alpha_value):
    """Vector-to-box distance ``dist_out + alpha * dist_in`` and its partials.

    ``alpha_value`` broadcasts against the leading axes of ``p``. Returns a dict
    with ``f``, ``out``, ``in`` and gradients ``p``, ``lo``, ``hi``, ``cen``,
    ``alpha`` (the latter is simply ``dist_in``). Subgradients at kinks use
    the convention ``sign(0) = 0`` and strict inequalities.
    """
    alpha_value = np.asarray(alpha_value, dtype=np.float64)
    above = p > hi
    below = p < lo
    inside = ~(above | below)
    out_vec = np.maximum(p - hi, 0.0) + np.maximum(lo - p, 0.0)
    q = np.minimum(hi, np.maximum(lo, p))
    diff = cen - q
    dist_out = np.sum(out_vec, axis=-1)
    dist_in = np.sum(np.abs(diff), axis=-1)
    f = dist_out + alpha_value * dist_in

    a = alpha_value[..., None]
    sgn = np.sign(diff)
    g_p = above.astype(np.float64) - below - a * sgn * inside
    g_hi = -above.astype(np.float64) - a * sgn * above
    g_lo = below.astype(np.float64) - a * sgn * below
    g_cen = a * sgn
    return {
        "f": f,
        "out": dist_out,
        "in": dist_in,
        "p": g_p,
        "lo": g_lo,
        "hi": g_hi,
        "cen": g_cen,
        "alpha": dist_in,
    }


def box_distance_kink_gap(p, lo, hi, cen):
    """Smallest coordinate distance from ``p`` to a kink of the distance."""
    gaps = np.minimum(np.abs(p - lo), np.abs(p - hi))
    inside = (p > lo) & (p < hi)
    gaps = np.where(inside, np.minimum(gaps, np.abs(p - cen)), gaps)
    return np.min(gaps, axis=-1)


# ---------------------------------------------------------------------------
# box-level API


def expected_volume(box: GumbelBox, cfg: BoxConfig):
    """Gumbel expected volume, evaluated in log space and exponentiated.

    Overflows/underflows to ``inf``/``0`` only when the true value is outside
    the double range; use :func:`log_expected_volume` for large ``dim``.
    """
    return np.exp(log_expected_volume(box, cfg))


def log_expected_volume(box: GumbelBox, cfg: BoxConfig):
    _check_finite(box.center, box.offset)
    return log_volume(box.lo, box.hi, cfg.beta, cfg.euler_gamma)


def expected_volume_grad(box: GumbelBox, cfg: BoxConfig):
    """Returns ``(volume, d vol/d center, d vol/d offset)``."""
    _check_finite(box.center, box.offset)
    lv, dlo, dhi = log_volume_and_grad(box.lo, box.hi, cfg.beta, cfg.euler_gamma)
    vol = np.exp(lv)
    v = vol[..., None]
    return vol, v * (dlo + dhi), v * (dhi - dlo)


def intersect(x: GumbelBox, y: GumbelBox, cfg: BoxConfig, mode: str | None = None):
    """Min/max location corners of ``x ∩ y``.

    The result may be inverted (``lo >= hi``) when the hard intersection is
    empty, so corners are returned rather than a :class:`GumbelBox`.
    """
    _check_same_dim(x.center, y.center)
    lo, hi, _, _ = intersect_corners(x.lo, x.hi, y.lo, y.hi, cfg.beta, mode or cfg.intersection)
    return lo, hi


def intersection_volume(x: GumbelBox, y: GumbelBox, cfg: BoxConfig, mode: str | None = None):
    lo, hi = intersect(x, y, cfg, mode)
    return np.exp(log_volume(lo, hi, cfg.beta, cfg.euler_gamma))


def conditional_probability(x: GumbelBox, y: GumbelBox, cfg: BoxConfig, mode: str | None = None):
    """E[Vol(x ∩ y)] / E[Vol(y)].

    Raises :class:`DegenerateBoxError` when a side of ``y`` has expected length
    below ``cfg.volume_clamp``; the full-volume product is allowed to be tiny
    because it is handled in log space.
    """
    _check_same_dim(x.center, y.center)
    _check_finite(x.center, x.offset, y.center, y.offset)
    if np.any(log_side_lengths(y.lo, y.hi, cfg.beta, cfg.euler_gamma) < np.log(cfg.volume_clamp)):
        raise DegenerateBoxError("conditioning box has a side below volume_clamp")
    logp, *_ = log_conditional_and_grad(
        x.lo, x.hi, y.lo, y.hi, cfg.beta, cfg.euler_gamma, mode or cfg.intersection
    )
    p = np.exp(logp)
    return np.where((p > 1.0) & (p < 1.0 + 1e-9), 1.0, p)


def conditional_probability_grad(x: GumbelBox, y: GumbelBox, cfg: BoxConfig, mode: str | None = None):
    """Returns ``(p, dp/dcen_x, dp/doff_x, dp/dcen_y, dp/doff_y)``."""
    _check_same_dim(x.center, y.center)
    logp, glx, ghx, gly, ghy = log_conditional_and_grad(
        x.lo, x.hi, y.lo, y.hi, cfg.beta, cfg.euler_gamma, mode or cfg.intersection
    )
    p = np.exp(logp)
    pp = p[..., None]
    return p, pp * (glx + ghx), pp * (ghx - glx), pp * (gly + ghy), pp * (ghy - gly)


def vector_to_box_distance(e, c: GumbelBox, alpha_value: float):
    """Returns ``(f_d, dist_out, dist_in)`` for point ``e`` and box ``c``."""
    e = np.asarray(e, dtype=np.float64)
    _check_same_dim(e, c.center)
    r = box_distance_and_grad(e, c.lo, c.hi, c.center, alpha_value)
    return r["f"], r["out"], r["in"]


def vector_to_box_distance_grad(e, c: GumbelBox, alpha_value: float):
    """Returns ``(f_d, df/de, df/dcenter, df/doffset)`` at fixed alpha."""
    e = np.asarray(e, dtype=np.float64)
    _check_same_dim(e, c.center)
    r = box_distance_and_grad(e, c.lo, c.hi, c.center, alpha_value)
    return r["f"], r["p"], r["cen"] + r["lo"] + r["hi"], r["hi"] - r["lo"]


def adaptive_alpha(c: GumbelBox, cfg: BoxConfig):
    _check_finite(c.center, c.offset)
    a, _, _ = adaptive_alpha_and_grad(c.lo, c.hi, cfg)
    return a
