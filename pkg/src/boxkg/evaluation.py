"""Ranking evaluation: KG completion, concept linking, diversity-aware
retrieval and concept inspection.

Ranks are filtered against every known positive (train, valid and test)
except the target itself, and ties take the mean rank of the tied block, so
ranks can be half-integers.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cross_model, geometry as geo, inst_model, onto_model
from .kgdata import SplitKG
from .state import TrainState


@dataclass
class RankResult:
    query: tuple
    rank: float
    candidates: int


@dataclass
class MetricReport:
    view: str
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int
    ranks: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_ranks(cls, view, ranks):
        ranks = np.asarray(ranks, dtype=np.float64)
        if len(ranks) == 0:
            raise ValueError("no ranks to summarise")
        return cls(
            view=view,
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1) * 100),
            hits3=float(np.mean(ranks <= 3) * 100),
            hits10=float(np.mean(ranks <= 10) * 100),
            count=len(ranks),
            ranks=ranks,
        )

    def rows(self):
        for metric in ("mrr", "hits1", "hits3", "hits10"):
            yield self.view, metric, getattr(self, metric), self.count


def write_reports(reports, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "metric", "value", "query_count"])
        for rep in reports:
            for row in rep.rows():
                w.writerow(row)


def format_reports(reports) -> str:
    lines = [f"{'view':<28} {'metric':<12} {'value':>10} {'n':>7}"]
    for rep in reports:
        for view, metric, value, count in rep.rows():
            lines.append(f"{view:<28} {metric:<12} {value:10.4f} {count:7d}")
    return "\n".join(lines)


def random_ranking_mrr(n_candidates: int) -> float:
    """Expected MRR when the target's rank is uniform on ``1..n``."""
    return float(np.sum(1.0 / np.arange(1, n_candidates + 1)) / n_candidates)


def filtered_ranks(scores: np.ndarray, target: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    """Mean-tie rank of ``scores[i, target[i]]`` among candidates not in ``exclude[i]``.

    ``scores`` is higher-is-better with shape ``(n, n_candidates)``; ``exclude``
    is a boolean mask of the same shape that must not flag the targets.
    """
    idx = np.arange(len(target))
    s_true = scores[idx, target][:, None]
    keep = ~exclude
    greater = np.sum((scores > s_true) & keep, axis=1)
    ties = np.sum((scores == s_true) & keep, axis=1) - 1
    return 1.0 + greater + 0.5 * ties


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("BOXKG_THREADS", "1") or 1)
    cap = os.environ.get("BOXKG_THREADS")
    if cap:
        threads = min(threads, max(int(cap), 1))
    return max(threads, 1)


def _chunked(fn, n: int, chunk: int, threads: int):
    spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if threads <= 1 or len(spans) <= 1:
        parts = [fn(a, b) for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), spans))
    return np.concatenate(parts) if parts else np.zeros(0)


def _answer_sets(triples, key_cols, answer_col):
    out = defaultdict(list)
    for row in triples:
        out[tuple(int(row[c]) for c in key_cols)].append(int(row[answer_col]))
    return out


def _exclusion_mask(queries, targets, answers, n_candidates):
    mask = np.zeros((len(queries), n_candidates), dtype=bool)
    for i, (key, tgt) in enumerate(zip(queries, targets)):
        known = answers.get(key)
        if known:
            mask[i, known] = True
        mask[i, tgt] = False
    return mask


def _split_rows(data: SplitKG, view: str, partition: str) -> np.ndarray:
    rows = getattr(data, view if view != "instance" else "inst")
    if partition not in rows:
        raise ValueError(f"unknown partition {partition!r}")
    got = rows[partition]
    if len(got) == 0:
        raise ValueError(f"{view} {partition} partition is empty")
    return got


def eval_kgc(state: TrainState, data: SplitKG, view: str = "instance", partition: str = "test",
             features=None, intersection: str | None = None, threads: int | None = None):
    """Filtered head and tail prediction for one view.

    ``view`` is ``instance`` (scored by the vector model) or ``ontology``
    (scored by the box conditional probability).
    """
    if view in ("instance", "inst"):
        view = "instance"
        triples = _split_rows(data, "inst", partition)
        full = data.kg.inst_triples
        n_cand = data.kg.n_entities
        params = state.inst()

        def tails(h, r):
            return inst_model.score_all_tails(params, h, r)

        def heads(r, t):
            return inst_model.score_all_heads(params, r, t)

        width = params.dim
    elif view in ("ontology", "onto"):
        view = "ontology"
        triples = _split_rows(data, "onto", partition)
        full = data.kg.onto_triples
        n_cand = data.kg.n_concepts
        params = state.onto()
        cfg = state.box_config(intersection)

        def tails(h, r):
            return onto_model.score_all(params, h, r, cfg, "tail", features)

        def heads(r, t):
            return onto_model.score_all(params, t, r, cfg, "head", features)

        width = params.dim * 4
    else:
        raise ValueError(f"unknown view {view!r}")

    chunk = max(1, (1 << 24) // max(n_cand * width, 1))
    nthreads = _threads(threads)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    tail_ans = _answer_sets(full, (0, 1), 2)
    head_ans = _answer_sets(full, (1, 2), 0)

    def tail_ranks(a, b):
        s = tails(h[a:b], r[a:b])
        keys = list(zip(h[a:b].tolist(), r[a:b].tolist()))
        return filtered_ranks(s, t[a:b], _exclusion_mask(keys, t[a:b], tail_ans, n_cand))

    def head_ranks(a, b):
        s = heads(r[a:b], t[a:b])
        keys = list(zip(r[a:b].tolist(), t[a:b].tolist()))
        return filtered_ranks(s, h[a:b], _exclusion_mask(keys, h[a:b], head_ans, n_cand))

    ranks = np.concatenate([
        _chunked(tail_ranks, len(triples), chunk, nthreads),
        _chunked(head_ranks, len(triples), chunk, nthreads),
    ])
    return MetricReport.from_ranks(view, ranks)


def eval_linking(state: TrainState, data: SplitKG, partition: str = "test",
                 threads: int | None = None) -> MetricReport:
    """Ranks every concept for each held-out link by ascending link distance."""
    links = _split_rows(data, "links", partition)
    inst, onto, bridge = state.inst(), state.onto(), state.bridge()
    cfg, cross = state.box_config(), state.cross_config()
    n_c = data.kg.n_concepts
    answers = _answer_sets(data.kg.cross_links, (0,), 1)
    e, c = links[:, 0], links[:, 1]
    chunk = max(1, (1 << 23) // max(n_c * onto.dim, 1))

    def ranks(a, b):
        d = cross_model.distance_matrix(e[a:b], inst, onto, cfg, cross, bridge)
        keys = [(x,) for x in e[a:b].tolist()]
        return filtered_ranks(-d, c[a:b], _exclusion_mask(keys, c[a:b], answers, n_c))

    return MetricReport.from_ranks("linking", _chunked(ranks, len(links), chunk, _threads(threads)))


def eval_linking_frequency_baseline(data: SplitKG, partition: str = "test") -> MetricReport:
    """Degenerate linker: every entity gets concepts ordered by training-link frequency."""
    links = _split_rows(data, "links", partition)
    n_c = data.kg.n_concepts
    freq = np.bincount(data.links["train"][:, 1], minlength=n_c).astype(np.float64)
    answers = _answer_sets(data.kg.cross_links, (0,), 1)
    scores = np.broadcast_to(freq, (len(links), n_c))
    keys = [(x,) for x in links[:, 0].tolist()]
    mask = _exclusion_mask(keys, links[:, 1], answers, n_c)
    return MetricReport.from_ranks("linking", filtered_ranks(scores, links[:, 1], mask))


# ---------------------------------------------------------------------------
# diversity-aware retrieval


@dataclass
class DiversityReport:
    types: int
    items: int
    hits: dict  # recipe concept id -> Hits@budget in percent
    union_sizes: dict
    padded: dict  # recipe id -> number of padding concepts used

    @property
    def mean_hits(self) -> float:
        return float(np.mean(list(self.hits.values()))) if self.hits else float("nan")

    def rows(self):
        yield "diversity", f"hits@{self.types * self.items}", self.mean_hits, len(self.hits)


def eval_diversity(state: TrainState, data: SplitKG, recipes, types: int, items: int,
                   relation: int, gold: dict | None = None, budget: int = 120,
                   features=None, intersection: str | None = None) -> DiversityReport:
    """Top-``types`` related concepts per recipe, then top-``items`` entities each.

    Candidate types are the tails of ``relation`` in the ontology triples,
    ranked by the ontology score; if fewer than ``types`` exist the list is
    padded with the best-scoring remaining concepts. ``gold`` maps recipe id to
    the set of expected entity ids (default: the recipe's cross-view links).
    """
    if types * items != budget:
        raise ValueError(f"types * items = {types * items} must equal the budget {budget}")
    if types < 1 or items < 1:
        raise ValueError("types and items must be >= 1")
    onto, inst, bridge = state.onto(), state.inst(), state.bridge()
    cfg = state.box_config(intersection)
    cross = state.cross_config()
    triples = data.kg.onto_triples
    pool = np.unique(triples[triples[:, 1] == relation][:, 2])
    if gold is None:
        gold = defaultdict(set)
        for e, c in data.kg.cross_links:
            gold[int(c)].add(int(e))
    entity_rank_cache = {}

    def top_entities(c):
        if c not in entity_rank_cache:
            d = cross_model.concept_distances(c, inst, onto, cfg, cross, bridge)
            entity_rank_cache[c] = np.argsort(d, kind="stable")[:items]
        return entity_rank_cache[c]

    hits, sizes, padded = {}, {}, {}
    for rec in recipes:
        rec = int(rec)
        phi = onto_model.score_all(onto, [rec], [relation], cfg, "tail", features)[0]
        cand = pool[pool != rec]
        order = cand[np.argsort(-phi[cand], kind="stable")]
        chosen = list(order[:types])
        n_pad = max(0, types - len(chosen))
        if n_pad:
            rest = np.setdiff1d(np.arange(len(phi)), np.r_[cand, rec])
            rest = rest[np.argsort(-phi[rest], kind="stable")]
            chosen += list(rest[:n_pad])
        padded[rec] = n_pad
        union = set()
        for c in chosen:
            union.update(int(x) for x in top_entities(int(c)))
        sizes[rec] = len(union)
        g = set(gold.get(rec, ()))
        if g:
            hits[rec] = 100.0 * len(g & union) / len(g)
    return DiversityReport(types, items, hits, sizes, padded)


# ---------------------------------------------------------------------------
# inspection


@dataclass
class ConceptInspection:
    concept: int
    relation: int
    intersections: list  # (concept id, expected intersection volume, log volume)
    volumes: list  # (concept id, expected volume, log volume), largest first

    def to_tsv(self, names=None) -> str:
        def nm(i):
            return names[i] if names is not None else str(i)

        lines = ["section\tconcept\tvolume\tlog_volume"]
        for c, v, lv in self.intersections:
            lines.append(f"intersection\t{nm(c)}\t{v:.6g}\t{lv:.6f}")
        for c, v, lv in self.volumes:
            lines.append(f"volume\t{nm(c)}\t{v:.6g}\t{lv:.6f}")
        return "\n".join(lines) + "\n"


def inspect_concepts(state: TrainState, concept: int, relation: int, top_k: int = 3,
                     features=None, intersection: str | None = None) -> ConceptInspection:
    """Concepts with the largest relation-transformed intersection with ``concept``
    and the table of all bare-box volumes."""
    onto = state.onto()
    n_c = len(onto.center)
    if not 0 <= concept < n_c:
        raise IndexError(f"concept id {concept} out of range [0, {n_c})")
    if not 0 <= relation < len(onto.rel_shift):
        raise IndexError(f"relation id {relation} out of range")
    cfg = state.box_config(intersection)
    cen_all, off_all, _ = onto_model._transform(onto, np.arange(n_c), np.full(n_c, relation), features)
    lo_all, hi_all = cen_all - off_all, cen_all + off_all
    lo_i, hi_i, _, _ = geo.intersect_corners(lo_all[concept], hi_all[concept], lo_all, hi_all,
                                             cfg.beta, cfg.intersection)
    lv_int = geo.log_volume(lo_i, hi_i, cfg.beta, cfg.euler_gamma)
    order = np.argsort(-lv_int, kind="stable")[:top_k]
    intersections = [(int(c), float(np.exp(lv_int[c])), float(lv_int[c])) for c in order]
    lo, hi = onto.corners()
    lv = geo.log_volume(lo, hi, cfg.beta, cfg.euler_gamma)
    vol_order = np.argsort(-lv, kind="stable")
    volumes = [(int(c), float(np.exp(lv[c])), float(lv[c])) for c in vol_order]
    return ConceptInspection(concept, relation, intersections, volumes)
