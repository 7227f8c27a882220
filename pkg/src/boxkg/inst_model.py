"""Instance-view vector KGE: TransE/RotatE-style scores and the hinge loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class InstParams:
    """Entity/relation tables for the instance view.

    ``entity`` is shared with the cross-view module. For ``rotation`` the
    relation table holds ``dim // 2`` phases and each entity vector is read as
    ``dim // 2`` complex numbers ``(re, im) = (v[:k], v[k:])``.
    """

    entity: np.ndarray
    relation: np.ndarray
    score_kind: str = "translation"
    norm: int = 1

    def __post_init__(self):
        if self.score_kind not in ("translation", "rotation"):
            raise ValueError(f"unknown score kind {self.score_kind!r}")
        if self.norm not in (1, 2):
            raise ValueError(f"norm must be 1 or 2, got {self.norm}")
        if self.score_kind == "rotation" and self.entity.shape[1] % 2:
            raise ValueError("rotation scoring needs an even entity dimension")

    @classmethod
    def init(cls, n_entities, n_relations, dim, rng, score_kind="translation", norm=1):
        bound = 6.0 / np.sqrt(dim)
        entity = rng.uniform(-bound, bound, size=(n_entities, dim))
        if score_kind == "rotation":
            relation = rng.uniform(-np.pi, np.pi, size=(n_relations, dim // 2))
        else:
            relation = rng.uniform(-bound, bound, size=(n_relations, dim))
        return cls(entity, relation, score_kind, norm)

    def tables(self) -> dict:
        return {"entity": self.entity, "inst_rel": self.relation}

    @property
    def dim(self) -> int:
        return self.entity.shape[1]


def _check_ids(params: InstParams, h, r, t):
    n_e, n_r = len(params.entity), len(params.relation)
    for name, ids, n in (("head", h, n_e), ("relation", r, n_r), ("tail", t, n_e)):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{name} id out of range [0, {n})")


def _residual(params: InstParams, hv, rv, tv):
    """h ∘ r - t as a real vector, plus what the backward pass needs."""
    if params.score_kind == "translation":
        return hv + rv - tv, None
    k = hv.shape[-1] // 2
    h_re, h_im = hv[..., :k], hv[..., k:]
    cos, sin = np.cos(rv), np.sin(rv)
    rot = np.concatenate([h_re * cos - h_im * sin, h_re * sin + h_im * cos], axis=-1)
    return rot - tv, (h_re, h_im, cos, sin)


def _norm_and_grad(params: InstParams, v):
    """Distance ``||v||`` and ``d||v|| / dv`` (``0`` used at kinks)."""
    if params.score_kind == "translation":
        if params.norm == 1:
            return np.abs(v).sum(-1), np.sign(v)
        n = np.sqrt((v * v).sum(-1))
        return n, v / np.where(n > 0, n, 1.0)[..., None]
    k = v.shape[-1] // 2
    re, im = v[..., :k], v[..., k:]
    if params.norm == 1:
        mod = np.sqrt(re * re + im * im)
        safe = np.where(mod > 0, mod, 1.0)
        return mod.sum(-1), np.concatenate([re / safe, im / safe], axis=-1)
    n = np.sqrt((v * v).sum(-1))
    return n, v / np.where(n > 0, n, 1.0)[..., None]


def distance(params: InstParams, h, r, t) -> np.ndarray:
    """``-score``: nonnegative distance for id arrays ``h, r, t``."""
    v, _ = _residual(params, params.entity[h], params.relation[r], params.entity[t])
    d, _ = _norm_and_grad(params, v)
    return d


def score_inst_triple(h, r, t, params: InstParams):
    """Plausibility score (<= 0, higher is better)."""
    _check_ids(params, h, r, t)
    return -distance(params, np.asarray(h), np.asarray(r), np.asarray(t))


def score_all_tails(params: InstParams, h, r) -> np.ndarray:
    """Scores of ``(h[i], r[i], e)`` for every entity ``e``; shape ``(n, n_entities)``."""
    hv = params.entity[h][:, None, :]
    rv = params.relation[r][:, None, :]
    v, _ = _residual(params, hv, rv, params.entity[None, :, :])
    return -_norm_and_grad(params, v)[0]


def score_all_heads(params: InstParams, r, t) -> np.ndarray:
    hv = params.entity[None, :, :]
    rv = params.relation[r][:, None, :]
    v, _ = _residual(params, hv, rv, params.entity[t][:, None, :])
    return -_norm_and_grad(params, v)[0]


def _distance_backward(params, h, r, t, upstream, grads):
    """Accumulates ``upstream * d distance`` into ``grads``."""
    hv, rv, tv = params.entity[h], params.relation[r], params.entity[t]
    v, cache = _residual(params, hv, rv, tv)
    _, dv = _norm_and_grad(params, v)
    dv = dv * upstream[:, None]
    if params.score_kind == "translation":
        dh, dr = dv, dv
    else:
        h_re, h_im, cos, sin = cache
        k = h_re.shape[-1]
        dre, dim_ = dv[:, :k], dv[:, k:]
        dh = np.concatenate([dre * cos + dim_ * sin, -dre * sin + dim_ * cos], axis=-1)
        dr = dre * (-h_re * sin - h_im * cos) + dim_ * (h_re * cos - h_im * sin)
    np.add.at(grads["entity"], h, dh)
    np.add.at(grads["entity"], t, -dv)
    np.add.at(grads["inst_rel"], r, dr)


def loss_inst(pos: np.ndarray, neg: np.ndarray, params: InstParams, margin: float = 0.3,
              reduction: str = "mean"):
    """Hinge loss ``max(d(pos) - d(neg) + margin, 0)`` over paired rows.

    Returns ``(loss, grads)`` where ``grads`` holds dense arrays shaped like the
    parameter tables; rows outside the batch are exactly zero.
    """
    if not margin > 0:
        raise ValueError("margin must be > 0")
    pos, neg = np.asarray(pos), np.asarray(neg)
    if len(pos) == 0 or pos.shape != neg.shape:
        raise ValueError("loss_inst needs a non-empty batch of paired positives/negatives")
    d_pos = distance(params, pos[:, 0], pos[:, 1], pos[:, 2])
    d_neg = distance(params, neg[:, 0], neg[:, 1], neg[:, 2])
    arg = d_pos - d_neg + margin
    scale = 1.0 / len(pos) if reduction == "mean" else 1.0
    loss = float(np.maximum(arg, 0.0).sum() * scale)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite instance loss")
    grads = {"entity": np.zeros_like(params.entity), "inst_rel": np.zeros_like(params.relation)}
    active = (arg > 0).astype(np.float64) * scale
    _distance_backward(params, pos[:, 0], pos[:, 1], pos[:, 2], active, grads)
    _distance_backward(params, neg[:, 0], neg[:, 1], neg[:, 2], -active, grads)
    return loss, grads


def kink_gap(pos, neg, params: InstParams, margin: float) -> float:
    """Distance of the batch to the nearest non-differentiable point."""
    pos, neg = np.asarray(pos), np.asarray(neg)
    d_pos = distance(params, pos[:, 0], pos[:, 1], pos[:, 2])
    d_neg = distance(params, neg[:, 0], neg[:, 1], neg[:, 2])
    gap = float(np.min(np.abs(d_pos - d_neg + margin)))
    for rows in (pos, neg):
        v, _ = _residual(params, params.entity[rows[:, 0]], params.relation[rows[:, 1]],
                         params.entity[rows[:, 2]])
        if params.score_kind == "translation" and params.norm == 1:
            gap = min(gap, float(np.min(np.abs(v))))
        elif params.score_kind == "rotation" and params.norm == 1:
            k = v.shape[-1] // 2
            gap = min(gap, float(np.min(np.hypot(v[:, :k], v[:, k:]))))
        else:
            gap = min(gap, float(np.min(np.linalg.norm(v, axis=-1))))
    return gap
