"""Loading, validating, splitting and negative sampling for two-view KGs.

File formats (UTF-8, tab separated, no header)::

    instance / ontology triples:   head<TAB>relation<TAB>tail
    cross-view links:              entity<TAB>concept

Ids are assigned in order of first appearance.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class KGFormatError(ValueError):
    """Malformed or inconsistent input files."""


class SamplingError(RuntimeError):
    """Negative sampling could not satisfy its constraints."""


class Vocab:
    """Bidirectional name <-> id map with first-appearance ids."""

    def __init__(self, names=()):
        self._ids: dict[str, int] = {}
        self.names: list[str] = []
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self._ids[name] = idx
            self.names.append(name)
        return idx

    def __getitem__(self, name: str) -> int:
        return self._ids[name]

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.names == other.names

    def __repr__(self) -> str:
        return f"Vocab({len(self)} names)"


def _as_triples(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64).reshape(-1, 3)


def _as_links(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64).reshape(-1, 2)


@dataclass
class TwoViewKG:
    entities: Vocab
    concepts: Vocab
    inst_relations: Vocab
    onto_relations: Vocab
    inst_triples: np.ndarray
    onto_triples: np.ndarray
    cross_links: np.ndarray
    duplicates_dropped: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inst_triples = _as_triples(self.inst_triples)
        self.onto_triples = _as_triples(self.onto_triples)
        self.cross_links = _as_links(self.cross_links)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    def validate(self) -> None:
        overlap = set(self.entities.names) & set(self.concepts.names)
        if overlap:
            raise KGFormatError(f"names used as both entity and concept: {sorted(overlap)[:5]}")
        checks = [
            ("inst_triples", self.inst_triples, (len(self.entities), len(self.inst_relations), len(self.entities))),
            ("onto_triples", self.onto_triples, (len(self.concepts), len(self.onto_relations), len(self.concepts))),
            ("cross_links", self.cross_links, (len(self.entities), len(self.concepts))),
        ]
        for name, arr, bounds in checks:
            for col, bound in enumerate(bounds):
                if arr.size and (arr[:, col].min() < 0 or arr[:, col].max() >= bound):
                    raise KGFormatError(f"{name}: id out of range in column {col}")
            if len(np.unique(arr, axis=0)) != len(arr):
                raise KGFormatError(f"{name}: duplicate rows")

    def summary(self) -> dict:
        return {
            "entities": self.n_entities,
            "inst_relations": len(self.inst_relations),
            "inst_triples": len(self.inst_triples),
            "concepts": self.n_concepts,
            "onto_relations": len(self.onto_relations),
            "onto_triples": len(self.onto_triples),
            "cross_links": len(self.cross_links),
        }


def _read_rows(path, n_fields):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != n_fields or any(p == "" for p in parts):
                raise KGFormatError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(parts)}"
                )
            rows.append(parts)
    if not rows:
        raise KGFormatError(f"{path}: empty file")
    return rows


def _dedupe(rows, label, counts):
    seen = set()
    out = []
    for r in rows:
        if r in seen:
            continue
        seen.add(r)
        out.append(r)
    dropped = len(rows) - len(out)
    counts[label] = dropped
    if dropped:
        logger.info("%s: dropped %d duplicate lines", label, dropped)
    return out


def load_kg(inst_path, onto_path, links_path) -> TwoViewKG:
    """Reads the three TSV files into a validated :class:`TwoViewKG`.

    Entity ids follow the order of first appearance across the instance
    triples and then the link file; concept ids likewise across ontology
    triples and links.
    """
    inst_rows = _read_rows(inst_path, 3)
    onto_rows = _read_rows(onto_path, 3)
    link_rows = _read_rows(links_path, 2)

    dup_counts: dict[str, int] = {}
    entities, concepts = Vocab(), Vocab()
    inst_rel, onto_rel = Vocab(), Vocab()

    inst = []
    for h, r, t in _dedupe([tuple(r) for r in inst_rows], "inst_triples", dup_counts):
        inst.append((entities.add(h), inst_rel.add(r), entities.add(t)))
    onto = []
    for h, r, t in _dedupe([tuple(r) for r in onto_rows], "onto_triples", dup_counts):
        onto.append((concepts.add(h), onto_rel.add(r), concepts.add(t)))
    links = []
    for e, c in _dedupe([tuple(r) for r in link_rows], "cross_links", dup_counts):
        links.append((entities.add(e), concepts.add(c)))

    kg = TwoViewKG(entities, concepts, inst_rel, onto_rel, inst, onto, links, dup_counts)
    kg.validate()
    return kg


def canonicalize(kg: TwoViewKG):
    """Re-indexes ``kg`` in the order :func:`load_kg` would assign.

    Returns ``(kg, entity_map, concept_map)`` where the maps send old ids to
    new ones.
    """
    maps = {k: {} for k in ("e", "c", "ir", "or")}

    def m(kind, i):
        return maps[kind].setdefault(int(i), len(maps[kind]))

    inst = [(m("e", h), m("ir", r), m("e", t)) for h, r, t in kg.inst_triples]
    onto = [(m("c", h), m("or", r), m("c", t)) for h, r, t in kg.onto_triples]
    links = [(m("e", e), m("c", c)) for e, c in kg.cross_links]

    def vocab(old, kind):
        inv = sorted(maps[kind], key=maps[kind].get)
        if len(inv) != len(old):
            raise KGFormatError("vocabulary has names that appear in no triple or link")
        return Vocab(old.names[i] for i in inv)

    out = TwoViewKG(vocab(kg.entities, "e"), vocab(kg.concepts, "c"), vocab(kg.inst_relations, "ir"),
                    vocab(kg.onto_relations, "or"), inst, onto, links, dict(kg.duplicates_dropped))
    out.validate()
    return out, maps["e"], maps["c"]


def write_kg(kg: TwoViewKG, directory, prefix="") -> tuple[str, str, str]:
    """Writes the KG back as TSV.

    Reloading reproduces the same ids when the KG is in load order (anything
    returned by :func:`load_kg` or :func:`canonicalize`).
    """
    os.makedirs(directory, exist_ok=True)
    paths = tuple(os.path.join(directory, f"{prefix}{n}") for n in ("inst.tsv", "onto.tsv", "links.tsv"))
    E, C = kg.entities.names, kg.concepts.names
    with open(paths[0], "w", encoding="utf-8") as fh:
        for h, r, t in kg.inst_triples:
            fh.write(f"{E[h]}\t{kg.inst_relations.names[r]}\t{E[t]}\n")
    with open(paths[1], "w", encoding="utf-8") as fh:
        for h, r, t in kg.onto_triples:
            fh.write(f"{C[h]}\t{kg.onto_relations.names[r]}\t{C[t]}\n")
    with open(paths[2], "w", encoding="utf-8") as fh:
        for e, c in kg.cross_links:
            fh.write(f"{E[e]}\t{C[c]}\n")
    return paths


# ---------------------------------------------------------------------------
# splitting


def allocate_counts(n: int, ratios) -> list[int]:
    """Floor allocation with the remainder going to the largest fractional parts."""
    exact = [n * r for r in ratios]
    counts = [math.floor(x) for x in exact]
    remainder = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


@dataclass
class SplitKG:
    kg: TwoViewKG
    inst: dict
    onto: dict
    links: dict
    ratios: tuple
    seed: int
    mode: str

    def all_inst(self) -> np.ndarray:
        return self.kg.inst_triples

    def all_onto(self) -> np.ndarray:
        return self.kg.onto_triples

    def all_links(self) -> np.ndarray:
        return self.kg.cross_links


def _split_array(arr, ratios, rng, label):
    counts = allocate_counts(len(arr), ratios)
    if min(counts) == 0:
        raise ValueError(f"{label}: split {counts} of {len(arr)} rows leaves an empty partition")
    perm = rng.permutation(len(arr))
    a, b = counts[0], counts[0] + counts[1]
    return {
        "train": arr[np.sort(perm[:a])],
        "valid": arr[np.sort(perm[a:b])],
        "test": arr[np.sort(perm[b:])],
    }


def _all_train(arr):
    return {"train": arr.copy(), "valid": arr[:0].copy(), "test": arr[:0].copy()}


def split_kg(kg: TwoViewKG, ratios=(0.8, 0.1, 0.1), seed: int = 0, mode: str = "kgc") -> SplitKG:
    """Random train/valid/test partition.

    ``kgc`` splits both triple sets and keeps every link in train; ``linking``
    splits the links and keeps every triple in train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    if mode == "kgc":
        inst = _split_array(kg.inst_triples, ratios, rng, "inst_triples")
        onto = _split_array(kg.onto_triples, ratios, rng, "onto_triples")
        links = _all_train(kg.cross_links)
    elif mode == "linking":
        inst = _all_train(kg.inst_triples)
        onto = _all_train(kg.onto_triples)
        links = _split_array(kg.cross_links, ratios, rng, "cross_links")
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return SplitKG(kg, inst, onto, links, ratios, seed, mode)


# ---------------------------------------------------------------------------
# negative sampling


@dataclass(frozen=True)
class NegativeSample:
    row: tuple
    corrupted_head: bool


class PositiveIndex:
    """Membership test over the full positive set of each view (int64 keys)."""

    def __init__(self, kg: TwoViewKG):
        self.n_e = kg.n_entities
        self.n_c = kg.n_concepts
        self.n_ri = max(len(kg.inst_relations), 1)
        self.n_ro = max(len(kg.onto_relations), 1)
        self.inst = np.unique(self.inst_keys(kg.inst_triples))
        self.onto = np.unique(self.onto_keys(kg.onto_triples))
        self.links = np.unique(self.links_keys(kg.cross_links))

    def inst_keys(self, t):
        t = _as_triples(t)
        return (t[:, 0] * self.n_ri + t[:, 1]) * self.n_e + t[:, 2]

    def onto_keys(self, t):
        t = _as_triples(t)
        return (t[:, 0] * self.n_ro + t[:, 1]) * self.n_c + t[:, 2]

    def links_keys(self, pairs):
        pairs = _as_links(pairs)
        return pairs[:, 0] * self.n_c + pairs[:, 1]

    def contains(self, kind: str, rows) -> np.ndarray:
        keys = getattr(self, f"{kind}_keys")(rows)
        table = getattr(self, kind)
        pos = np.searchsorted(table, keys)
        pos = np.minimum(pos, len(table) - 1)
        return table[pos] == keys if len(table) else np.zeros(len(keys), dtype=bool)


def corrupt_batch(kind: str, positives: np.ndarray, k: int, rng: np.random.Generator,
                  index: PositiveIndex, max_rounds: int = 100) -> np.ndarray:
    """Vectorised filtered corruption used by the trainer.

    ``kind`` is ``inst``, ``onto`` or ``links``. Returns ``len(positives) * k``
    rows ordered as ``positives`` tiled ``k`` times (sample j of positive i is
    row ``j * n + i``). Each row gets a fair coin for which side to replace.
    """
    pos = np.tile(positives, (k, 1))
    n = len(pos)
    if kind == "links":
        sizes = (index.n_e, index.n_c)
        cols = (0, 1)
    else:
        size = index.n_e if kind == "inst" else index.n_c
        sizes = (size, size)
        cols = (0, 2)
    side = rng.integers(0, 2, size=n)
    neg = pos.copy()
    todo = np.arange(n)
    for _ in range(max_rounds):
        s = side[todo]
        draw0 = rng.integers(0, sizes[0], size=len(todo))
        draw1 = rng.integers(0, sizes[1], size=len(todo))
        neg[todo] = pos[todo]
        neg[todo, cols[0]] = np.where(s == 0, draw0, pos[todo, cols[0]])
        neg[todo, cols[1]] = np.where(s == 1, draw1, pos[todo, cols[1]])
        bad = index.contains(kind, neg[todo])
        todo = todo[bad]
        if len(todo) == 0:
            return neg
    raise SamplingError(f"{kind}: {len(todo)} negatives still collide after {max_rounds} rounds")


def sample_negatives(positive, k: int, rng: np.random.Generator, universe: TwoViewKG,
                     view: str | None = None, distinct: bool = False,
                     index: PositiveIndex | None = None,
                     max_draws: int | None = None) -> list[NegativeSample]:
    """Draws ``k`` filtered corruptions of a single triple or link.

    ``view`` is ``inst``, ``onto`` or ``links``; it defaults to ``links`` for
    pairs and ``inst`` for triples. With ``distinct=True`` the samples are
    pairwise different. Raises :class:`SamplingError` once ``max_draws``
    (default ``100 * k``) raw draws are spent.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    positive = tuple(int(x) for x in positive)
    if view is None:
        view = "links" if len(positive) == 2 else "inst"
    if view == "links":
        sizes, cols = (universe.n_entities, universe.n_concepts), (0, 1)
    elif view in ("inst", "onto"):
        size = universe.n_entities if view == "inst" else universe.n_concepts
        sizes, cols = (size, size), (0, 2)
    else:
        raise ValueError(f"unknown view {view!r}")
    index = index or PositiveIndex(universe)
    if not index.contains(view, np.array([positive]))[0]:
        raise ValueError(f"positive {positive} is not in the universe")
    budget = max_draws if max_draws is not None else 100 * k
    out: list[NegativeSample] = []
    seen = set()
    draws = 0
    while len(out) < k:
        if draws >= budget:
            raise SamplingError(
                f"only {len(out)} of {k} valid negatives for {positive} after {draws} draws"
            )
        draws += 1
        side = int(rng.integers(0, 2))
        cand = list(positive)
        cand[cols[side]] = int(rng.integers(0, sizes[side]))
        cand = tuple(cand)
        if index.contains(view, np.array([cand]))[0]:
            continue
        if distinct and cand in seen:
            continue
        seen.add(cand)
        out.append(NegativeSample(cand, corrupted_head=(side == 0)))
    return out
