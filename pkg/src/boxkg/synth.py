"""Synthetic two-view KG with a known concept hierarchy.

Concepts form a tree (``roots`` top-level concepts, then ``branching[i]``
children per node at level ``i``). Entities are spread over the leaves and
linked to their leaf and every ancestor. The ontology view states
``(ancestor, subsumes, descendant)`` for each ancestor/descendant pair, the
orientation in which the box score rewards the descendant lying inside the
ancestor. Instance triples connect entities of the same leaf (``same_type``)
or of a fixed partner leaf per relation; a ``noise`` fraction gets a uniform
random tail instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .kgdata import TwoViewKG, Vocab, canonicalize

# Training overrides for the fixture. Small dimensions keep the L1 link
# distance out of the flat tail of the sigmoid and the product of per-side
# intersection ratios away from underflow; a small temperature keeps the
# smoothed intersection of nested boxes close to the inner box.
SYNTH_TRAIN_CONFIG = {
    "d_vec": 16,
    "d_box": 16,
    "beta": 0.02,
    "center_init": 0.1,
    "max_epochs": 200,
    "patience": 0,
}


@dataclass
class SynthKG:
    kg: TwoViewKG
    parent: dict  # concept id -> parent concept id (roots absent)
    leaf_of: np.ndarray  # entity id -> leaf concept id
    levels: list  # concept ids per level

    def gold_pairs(self) -> list[tuple[int, int]]:
        """Direct ``(sub, super)`` pairs."""
        return sorted((c, p) for c, p in self.parent.items())

    def ancestors(self, c: int) -> list[int]:
        out = []
        while c in self.parent:
            c = self.parent[c]
            out.append(c)
        return out

    def descendants(self, c: int) -> set[int]:
        kids = {k for k, p in self.parent.items() if p == c}
        out = set(kids)
        for k in kids:
            out |= self.descendants(k)
        return out


def make_synthetic_kg(roots=2, branching=(4, 5), n_entities=500, n_inst_triples=5000,
                      n_inst_relations=10, noise=0.05, seed=0) -> SynthKG:
    rng = np.random.default_rng(seed)
    concepts = Vocab()
    parent = {}
    levels = [[concepts.add(f"concept_L0_{i}") for i in range(roots)]]
    for depth, b in enumerate(branching, start=1):
        level = []
        for p in levels[-1]:
            for j in range(b):
                c = concepts.add(f"concept_L{depth}_{len(level)}")
                parent[c] = p
                level.append(c)
        levels.append(level)
    leaves = np.array(levels[-1])

    entities = Vocab(f"entity_{i}" for i in range(n_entities))
    leaf_of = leaves[np.arange(n_entities) % len(leaves)]
    members = {int(l): np.flatnonzero(leaf_of == l) for l in leaves}

    inst_rel = Vocab(["same_type"] + [f"related_{k}" for k in range(1, n_inst_relations)])
    partner = {k: dict(zip(leaves.tolist(), rng.permutation(leaves).tolist()))
               for k in range(1, n_inst_relations)}
    triples = set()
    max_possible = n_entities * (n_entities - 1) * n_inst_relations
    if n_inst_triples > max_possible // 4:
        raise ValueError("too many instance triples requested for this entity count")
    while len(triples) < n_inst_triples:
        h = int(rng.integers(n_entities))
        r = int(rng.integers(n_inst_relations))
        if rng.random() < noise:
            t = int(rng.integers(n_entities))
        else:
            target_leaf = int(leaf_of[h]) if r == 0 else partner[r][int(leaf_of[h])]
            t = int(rng.choice(members[target_leaf]))
        if t != h:
            triples.add((h, r, t))
    inst = sorted(triples)
    inst = [inst[i] for i in rng.permutation(len(inst))]

    onto_rel = Vocab(["subsumes"])
    onto = []
    for c in range(len(concepts)):
        a = c
        while a in parent:
            a = parent[a]
            onto.append((a, 0, c))

    links = []
    for e in range(n_entities):
        c = int(leaf_of[e])
        links.append((e, c))
        while c in parent:
            c = parent[c]
            links.append((e, c))

    kg, emap, cmap = canonicalize(TwoViewKG(entities, concepts, inst_rel, onto_rel, inst, onto, links))
    order = np.argsort([emap[e] for e in range(n_entities)])
    return SynthKG(
        kg,
        {cmap[c]: cmap[p] for c, p in parent.items()},
        np.array([cmap[int(c)] for c in leaf_of])[order],
        [[cmap[c] for c in level] for level in levels],
    )


def hierarchy_agreement(state, synth: SynthKG, seed: int = 0, intersection: str = "hard") -> dict:
    """Fraction of gold ``(sub, super)`` pairs the trained boxes order correctly.

    A pair holds when ``E[Vol(super)] > E[Vol(sub)]`` and
    ``P(super | sub) > P(super | other)``, with ``other`` drawn uniformly from
    the concepts outside ``super``'s subtree.
    """
    cfg = state.box_config(intersection)
    lo, hi = state.onto().corners()
    lv = geo.log_volume(lo, hi, cfg.beta, cfg.euler_gamma)
    rng = np.random.default_rng(seed)
    n_c = len(lo)

    def log_p(x, y):
        return geo.log_conditional_and_grad(lo[x], hi[x], lo[y], hi[y], cfg.beta,
                                            cfg.euler_gamma, intersection)[0]

    pairs = synth.gold_pairs()
    vol_ok = cond_ok = both = 0
    for sub, sup in pairs:
        outside = sorted(set(range(n_c)) - synth.descendants(sup) - {sup})
        other = int(rng.choice(outside))
        v = bool(lv[sup] > lv[sub])
        p = bool(log_p(sup, sub) > log_p(sup, other))
        vol_ok += v
        cond_ok += p
        both += v and p
    n = len(pairs)
    return {"both": both / n, "volume": vol_ok / n, "conditional": cond_ok / n, "pairs": n}

