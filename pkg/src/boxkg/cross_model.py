"""Cross-view module: entity-to-concept-box distance and the link loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import BoxConfig, sigmoid, softplus
from .inst_model import InstParams
from .onto_model import OntoParams


@dataclass(frozen=True)
class CrossConfig:
    margin: float = 0.15
    adaptive_alpha: bool = True

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"cross margin must be > 0, got {self.margin}")


@dataclass
class Bridge:
    """Affine map from entity space to box space (``e @ w + b``)."""

    w: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, d_vec, d_box, rng):
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_vec), size=(d_vec, d_box)), np.zeros((1, d_box)))

    def tables(self) -> dict:
        return {"bridge_w": self.w, "bridge_b": self.b}

    def __call__(self, e):
        return e @ self.w + self.b[0]


def check_bridge(inst: InstParams, onto: OntoParams, bridge: Bridge | None):
    if (inst.dim != onto.dim) != (bridge is not None):
        raise ValueError("a bridge map is required iff entity and box dimensions differ")
    if bridge is not None and bridge.w.shape != (inst.dim, onto.dim):
        raise ValueError(f"bridge shape {bridge.w.shape} != {(inst.dim, onto.dim)}")


def project(inst: InstParams, bridge: Bridge | None, e):
    ev = inst.entity[e]
    return ev if bridge is None else bridge(ev)


def _alpha(lo, hi, cfg: BoxConfig, cross: CrossConfig):
    if cross.adaptive_alpha:
        return geo.adaptive_alpha_and_grad(lo, hi, cfg)
    a = np.full(lo.shape[:-1], cfg.alpha)
    return a, np.zeros_like(lo), np.zeros_like(hi)


def link_distance(e, c, inst: InstParams, onto: OntoParams, cfg: BoxConfig,
                  cross: CrossConfig = CrossConfig(), bridge: Bridge | None = None):
    """f_d between entity ``e`` (bridged into box space) and the bare box of ``c``."""
    e, c = np.atleast_1d(e), np.atleast_1d(c)
    for ids, n, what in ((e, len(inst.entity), "entity"), (c, len(onto.center), "concept")):
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{what} id out of range [0, {n})")
    p = project(inst, bridge, e)
    lo, hi = onto.corners(c)
    a, _, _ = _alpha(lo, hi, cfg, cross)
    f = geo.box_distance_and_grad(p, lo, hi, onto.center[c], a)["f"]
    return f if f.size > 1 else float(f[0])


def distance_matrix(e, inst, onto, cfg, cross=CrossConfig(), bridge=None, chunk=256):
    """Distances from each entity in ``e`` to every concept; shape ``(len(e), n_concepts)``."""
    e = np.asarray(e)
    lo, hi = onto.corners()
    a, _, _ = _alpha(lo, hi, cfg, cross)
    out = np.empty((len(e), len(onto.center)))
    for s in range(0, len(e), chunk):
        p = project(inst, bridge, e[s:s + chunk])[:, None, :]
        out[s:s + chunk] = geo.box_distance_and_grad(p, lo[None], hi[None], onto.center[None], a[None])["f"]
    return out


def concept_distances(c, inst, onto, cfg, cross=CrossConfig(), bridge=None):
    """Distances from every entity to concept ``c``."""
    lo, hi = onto.corners([c])
    a, _, _ = _alpha(lo, hi, cfg, cross)
    p = project(inst, bridge, np.arange(len(inst.entity)))
    return geo.box_distance_and_grad(p, lo, hi, onto.center[[c]], a)["f"]


def _distance_forward_backward(e, c, inst, onto, cfg, cross, bridge):
    pre = onto.pre_offset[c]
    off = softplus(pre)
    cen = onto.center[c]
    lo, hi = cen - off, cen + off
    a, da_lo, da_hi = _alpha(lo, hi, cfg, cross)
    p = project(inst, bridge, e)
    r = geo.box_distance_and_grad(p, lo, hi, cen, a)
    return r, (p, pre, a, da_lo, da_hi)


def _distance_backward(e, c, u, r, cache, inst, onto, bridge, grads):
    """Accumulates ``u * d f_d`` for rows ``(e, c)`` into ``grads``."""
    p, pre, a, da_lo, da_hi = cache
    uu = u[:, None]
    d_in = r["in"][:, None]
    g_lo = uu * (r["lo"] + d_in * da_lo)
    g_hi = uu * (r["hi"] + d_in * da_hi)
    g_cen = uu * r["cen"] + g_lo + g_hi
    g_off = g_hi - g_lo
    np.add.at(grads["concept_center"], c, g_cen)
    np.add.at(grads["concept_pre_offset"], c, g_off * sigmoid(pre))
    g_p = uu * r["p"]
    if bridge is None:
        np.add.at(grads["entity"], e, g_p)
    else:
        ev = inst.entity[e]
        grads["bridge_w"] += ev.T @ g_p
        grads["bridge_b"] += g_p.sum(0, keepdims=True)
        np.add.at(grads["entity"], e, g_p @ bridge.w.T)


def zero_grads(inst, onto, bridge) -> dict:
    g = {
        "entity": np.zeros_like(inst.entity),
        "concept_center": np.zeros_like(onto.center),
        "concept_pre_offset": np.zeros_like(onto.pre_offset),
    }
    if bridge is not None:
        g["bridge_w"] = np.zeros_like(bridge.w)
        g["bridge_b"] = np.zeros_like(bridge.b)
    return g


def loss_cross(pos, neg, inst: InstParams, onto: OntoParams, cfg: BoxConfig,
               cross: CrossConfig = CrossConfig(), bridge: Bridge | None = None,
               reduction="mean"):
    """Hinge over sigmoid distances: ``max(s(f_d(pos)) - s(f_d(neg)) + margin, 0)``."""
    pos, neg = np.asarray(pos), np.asarray(neg)
    if len(pos) == 0 or pos.shape != neg.shape:
        raise ValueError("loss_cross needs a non-empty batch of paired positive/negative links")
    r_pos, c_pos = _distance_forward_backward(pos[:, 0], pos[:, 1], inst, onto, cfg, cross, bridge)
    r_neg, c_neg = _distance_forward_backward(neg[:, 0], neg[:, 1], inst, onto, cfg, cross, bridge)
    s_pos, s_neg = sigmoid(r_pos["f"]), sigmoid(r_neg["f"])
    arg = s_pos - s_neg + cross.margin
    scale = 1.0 / len(pos) if reduction == "mean" else 1.0
    loss = float(np.maximum(arg, 0.0).sum() * scale)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite cross-view loss")
    grads = zero_grads(inst, onto, bridge)
    active = (arg > 0) * scale
    _distance_backward(pos[:, 0], pos[:, 1], active * s_pos * (1 - s_pos), r_pos, c_pos, inst, onto, bridge, grads)
    _distance_backward(neg[:, 0], neg[:, 1], -active * s_neg * (1 - s_neg), r_neg, c_neg, inst, onto, bridge, grads)
    return loss, grads


def kink_gap(pos, neg, inst, onto, cfg, cross=CrossConfig(), bridge=None) -> float:
    """Nearest distance to a face/center crossing or an inactive-hinge boundary."""
    pos, neg = np.asarray(pos), np.asarray(neg)
    gaps = []
    s = []
    for rows in (pos, neg):
        p = project(inst, bridge, rows[:, 0])
        lo, hi = onto.corners(rows[:, 1])
        gaps.append(float(np.min(geo.box_distance_kink_gap(p, lo, hi, onto.center[rows[:, 1]]))))
        s.append(sigmoid(np.atleast_1d(link_distance(rows[:, 0], rows[:, 1], inst, onto, cfg, cross, bridge))))
    gaps.append(float(np.min(np.abs(s[0] - s[1] + cross.margin))))
    if cross.adaptive_alpha:
        lo, hi = onto.corners(np.r_[pos[:, 1], neg[:, 1]])
        lv = geo.log_volume(lo, hi, cfg.beta, cfg.euler_gamma)
        gaps.append(float(np.min(np.abs(lv - np.log(cfg.volume_clamp)))))
    return min(gaps)
