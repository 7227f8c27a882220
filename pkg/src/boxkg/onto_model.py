"""Ontology-view box model: concept boxes, relation transforms, triple score
and the ontology loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import BoxConfig, GumbelBox, softplus, sigmoid

# softplus^-1(1): neutral relation scale
NEUTRAL_PRE_SCALE = float(geo.inverse_softplus(1.0))


class MissingFeatureError(KeyError):
    pass


class TextFeatureTable:
    """Precomputed text features keyed by ``(concept_id, relation_id)``."""

    def __init__(self, keys, vectors, n_relations: int):
        keys = [tuple(int(x) for x in k) for k in keys]
        self.vectors = np.asarray(vectors, dtype=np.float64).reshape(len(keys), -1)
        self.n_relations = n_relations
        if len(keys) and max(k[1] for k in keys) >= n_relations:
            raise ValueError("relation id out of range in feature table")
        codes = np.array([c * n_relations + r for c, r in keys], dtype=np.int64)
        order = np.argsort(codes, kind="stable")
        self._codes = codes[order]
        self._rows = order
        if len(np.unique(self._codes)) != len(self._codes):
            raise ValueError("duplicate (concept, relation) feature entries")

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self._codes)

    def lookup(self, concepts, relations) -> np.ndarray:
        codes = np.asarray(concepts, dtype=np.int64) * self.n_relations + np.asarray(relations)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, max(len(self._codes) - 1, 0))
        ok = (self._codes[pos] == codes) if len(self._codes) else np.zeros(codes.shape, bool)
        if not np.all(ok):
            bad = np.flatnonzero(~np.ravel(ok))[0]
            c, r = np.ravel(concepts)[bad], np.ravel(relations)[bad]
            raise MissingFeatureError(f"no text feature for concept {c}, relation {r}")
        return self.vectors[self._rows[pos]]

    @classmethod
    def load(cls, path, kg) -> "TextFeatureTable":
        keys, vecs = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
                c, r, v = parts
                if c not in kg.concepts or r not in kg.onto_relations:
                    raise ValueError(f"{path}:{lineno}: unknown concept/relation {c!r}/{r!r}")
                keys.append((kg.concepts[c], kg.onto_relations[r]))
                vecs.append([float(x) for x in v.split(",")])
        widths = {len(v) for v in vecs}
        if len(widths) > 1:
            raise ValueError(f"{path}: inconsistent feature widths {sorted(widths)}")
        return cls(keys, np.array(vecs), len(kg.onto_relations))


@dataclass
class OntoParams:
    center: np.ndarray
    pre_offset: np.ndarray
    rel_shift: np.ndarray
    rel_pre_scale: np.ndarray
    proj: dict | None = None
    mode: str = "shift_scale"

    def __post_init__(self):
        if self.mode not in ("shift_scale", "text"):
            raise ValueError(f"unknown transform mode {self.mode!r}")
        if self.mode == "text" and self.proj is None:
            raise ValueError("text mode needs projection-head weights")

    @classmethod
    def init(cls, n_concepts, n_relations, dim, rng, mode="shift_scale", text_width=None,
             hidden=None, center_scale=0.5, init_offset=1.0):
        center = rng.uniform(-center_scale, center_scale, size=(n_concepts, dim))
        pre_offset = geo.inverse_softplus(
            init_offset * rng.uniform(0.8, 1.2, size=(n_concepts, dim))
        )
        rel_shift = np.zeros((n_relations, dim))
        rel_pre_scale = np.full((n_relations, dim), NEUTRAL_PRE_SCALE)
        proj = None
        if mode == "text":
            if not text_width:
                raise ValueError("text mode needs the feature width")
            hidden = hidden or text_width
            proj = {
                "proj_w1": rng.normal(0, 1 / np.sqrt(text_width), size=(text_width, hidden)),
                "proj_b1": np.zeros((1, hidden)),
                "proj_w2": rng.normal(0, 1 / np.sqrt(hidden), size=(hidden, 2 * dim)),
                "proj_b2": np.zeros((1, 2 * dim)),
            }
        return cls(center, pre_offset, rel_shift, rel_pre_scale, proj, mode)

    def tables(self) -> dict:
        t = {
            "concept_center": self.center,
            "concept_pre_offset": self.pre_offset,
            "onto_rel_shift": self.rel_shift,
            "onto_rel_pre_scale": self.rel_pre_scale,
        }
        if self.proj is not None:
            t.update(self.proj)
        return t

    @property
    def dim(self) -> int:
        return self.center.shape[1]

    @property
    def offset(self) -> np.ndarray:
        return softplus(self.pre_offset)

    def box(self, c) -> GumbelBox:
        return GumbelBox(self.center[c], softplus(self.pre_offset[c]))

    def corners(self, c=slice(None)):
        cen = self.center[c]
        off = softplus(self.pre_offset[c])
        return cen - off, cen + off


def _check_ids(params: OntoParams, concepts=(), relations=()):
    for ids, n, what in ((concepts, len(params.center), "concept"),
                         (relations, len(params.rel_shift), "relation")):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{what} id out of range [0, {n})")


def _transform(params: OntoParams, c, r, features=None):
    """Transformed ``(center, offset)`` for id arrays ``c``/``r`` plus a backward cache."""
    if params.mode == "shift_scale":
        pre = params.pre_offset[c]
        ps = params.rel_pre_scale[r]
        off0, scale = softplus(pre), softplus(ps)
        cen = params.center[c] + params.rel_shift[r]
        return cen, off0 * scale, ("shift_scale", c, r, pre, ps, off0, scale)
    if features is None:
        raise MissingFeatureError("text mode needs a TextFeatureTable")
    x = features.lookup(c, r)
    p = params.proj
    z1 = x @ p["proj_w1"] + p["proj_b1"][0]
    a = np.tanh(z1)
    out = a @ p["proj_w2"] + p["proj_b2"][0]
    d = params.dim
    cen, pre = out[..., :d], out[..., d:]
    return cen, softplus(pre), ("text", x, a, pre)


def _transform_backward(params: OntoParams, cache, dcen, doff, grads):
    if cache[0] == "shift_scale":
        _, c, r, pre, ps, off0, scale = cache
        np.add.at(grads["concept_center"], c, dcen)
        np.add.at(grads["onto_rel_shift"], r, dcen)
        np.add.at(grads["concept_pre_offset"], c, doff * scale * sigmoid(pre))
        np.add.at(grads["onto_rel_pre_scale"], r, doff * off0 * sigmoid(ps))
        return
    _, x, a, pre = cache
    p = params.proj
    dout = np.concatenate([dcen, doff * sigmoid(pre)], axis=-1)
    grads["proj_w2"] += a.T @ dout
    grads["proj_b2"] += dout.sum(0, keepdims=True)
    dz1 = (dout @ p["proj_w2"].T) * (1.0 - a * a)
    grads["proj_w1"] += x.T @ dz1
    grads["proj_b1"] += dz1.sum(0, keepdims=True)


def transform_box(concept, relation, params: OntoParams, features=None, mode=None) -> GumbelBox:
    """Box of ``concept`` in the context of ``relation``."""
    if mode is not None and mode != params.mode:
        raise ValueError(f"params are configured for {params.mode!r}, not {mode!r}")
    _check_ids(params, [concept], [relation])
    cen, off, _ = _transform(params, np.asarray([concept]), np.asarray([relation]), features)
    return GumbelBox(cen[0], off[0])


def _log_score(params, h, r, t, cfg: BoxConfig, features, mode):
    cen_h, off_h, cache_h = _transform(params, h, r, features)
    cen_t, off_t, cache_t = _transform(params, t, r, features)
    out = geo.log_conditional_and_grad(
        cen_h - off_h, cen_h + off_h, cen_t - off_t, cen_t + off_t,
        cfg.beta, cfg.euler_gamma, mode or cfg.intersection,
    )
    return out, (cache_h, cache_t)


def score_onto_triple(h, r, t, params: OntoParams, cfg: BoxConfig, features=None, mode=None):
    """phi(h, r, t) = E[Vol(f_r(h) ∩ f_r(t))] / E[Vol(f_r(t))]; accepts id arrays."""
    _check_ids(params, np.r_[np.ravel(h), np.ravel(t)], np.ravel(r))
    h, r, t = (np.atleast_1d(np.asarray(x)) for x in (h, r, t))
    (logp, *_), _ = _log_score(params, h, r, t, cfg, features, mode)
    p = np.exp(logp)
    p = np.where((p > 1.0) & (p < 1.0 + 1e-9), 1.0, p)
    return p if p.size > 1 else float(p[0])


def score_all(params: OntoParams, anchor, r, cfg: BoxConfig, side="tail", features=None,
              mode=None) -> np.ndarray:
    """phi with the ``side`` slot ranging over every concept; shape ``(n, n_concepts)``.

    ``anchor`` holds the fixed heads (``side='tail'``) or tails (``side='head'``).
    """
    anchor, r = np.asarray(anchor), np.asarray(r)
    n_c = len(params.center)
    cen_a, off_a, _ = _transform(params, anchor, r, features)
    all_c = np.tile(np.arange(n_c), len(anchor))
    cen_c, off_c, _ = _transform(params, all_c, np.repeat(r, n_c), features)
    cen_c = cen_c.reshape(len(anchor), n_c, -1)
    off_c = off_c.reshape(len(anchor), n_c, -1)
    lo_a, hi_a = (cen_a - off_a)[:, None, :], (cen_a + off_a)[:, None, :]
    lo_c, hi_c = cen_c - off_c, cen_c + off_c
    m = mode or cfg.intersection
    if side == "tail":
        lo_i, hi_i, _, _ = geo.intersect_corners(lo_a, hi_a, lo_c, hi_c, cfg.beta, m)
        denom = geo.log_volume(lo_c, hi_c, cfg.beta, cfg.euler_gamma)
    else:
        lo_i, hi_i, _, _ = geo.intersect_corners(lo_c, hi_c, lo_a, hi_a, cfg.beta, m)
        denom = geo.log_volume(lo_a, hi_a, cfg.beta, cfg.euler_gamma)
    return np.exp(geo.log_volume(lo_i, hi_i, cfg.beta, cfg.euler_gamma) - denom)


def zero_grads(params: OntoParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.tables().items()}


def loss_onto(pos, neg, params: OntoParams, cfg: BoxConfig, features=None, loss_kind="squared",
              reduction="mean", mode=None):
    """Ontology loss over paired positive/negative triples.

    ``squared``: ``(phi(pos) - 1)^2 + phi(neg)^2``;
    ``bce``: ``-log phi(pos) - log(1 - phi(neg))``.
    Returns ``(loss, grads)`` with dense gradient arrays per table.
    """
    pos, neg = np.asarray(pos), np.asarray(neg)
    if len(pos) == 0 or pos.shape != neg.shape:
        raise ValueError("loss_onto needs a non-empty batch of paired positives/negatives")
    scale = 1.0 / len(pos) if reduction == "mean" else 1.0
    grads = zero_grads(params)
    total = 0.0
    for rows, positive in ((pos, True), (neg, False)):
        h, r, t = rows[:, 0], rows[:, 1], rows[:, 2]
        (logp, glx, ghx, gly, ghy), (cache_h, cache_t) = _log_score(params, h, r, t, cfg, features, mode)
        phi = np.exp(logp)
        if loss_kind == "squared":
            target = 1.0 if positive else 0.0
            total += float(np.sum((phi - target) ** 2))
            dlogp = 2.0 * (phi - target) * phi
        elif loss_kind == "bce":
            if positive:
                total += float(-np.sum(logp))
                dlogp = -np.ones_like(phi)
            else:
                phi_c = np.minimum(phi, 1.0 - 1e-12)
                total += float(-np.sum(np.log1p(-phi_c)))
                dlogp = phi_c / (1.0 - phi_c)
        else:
            raise ValueError(f"unknown ontology loss {loss_kind!r}")
        u = (dlogp * scale)[:, None]
        _transform_backward(params, cache_h, u * (glx + ghx), u * (ghx - glx), grads)
        _transform_backward(params, cache_t, u * (gly + ghy), u * (ghy - gly), grads)
    loss = total * scale
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite ontology loss")
    return loss, grads


def kink_gap(pos, neg, params: OntoParams, cfg: BoxConfig, features=None, mode=None) -> float:
    """Smooth intersections have no kinks; hard ones kink where corners tie."""
    if (mode or cfg.intersection) == "smooth":
        return np.inf
    gap = np.inf
    for rows in (pos, neg):
        rows = np.asarray(rows)
        cen_h, off_h, _ = _transform(params, rows[:, 0], rows[:, 1], features)
        cen_t, off_t, _ = _transform(params, rows[:, 2], rows[:, 1], features)
        gap = min(gap, float(np.min(np.abs((cen_h - off_h) - (cen_t - off_t)))))
        gap = min(gap, float(np.min(np.abs((cen_h + off_h) - (cen_t + off_t)))))
    return gap
