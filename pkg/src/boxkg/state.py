"""Trainable state: parameter tables, optimizer moments and schedule position."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .cross_model import Bridge, CrossConfig
from .geometry import BoxConfig
from .inst_model import InstParams
from .onto_model import OntoParams

ONTO_TABLES = ("concept_center", "concept_pre_offset", "onto_rel_shift", "onto_rel_pre_scale",
               "proj_w1", "proj_b1", "proj_w2", "proj_b2")


@dataclass
class TrainState:
    config: TrainConfig
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    epoch: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    best_metric: float | None = None
    best_epoch: int = 0
    best_params: dict | None = None
    history: list = field(default_factory=list)
    vocab: dict | None = None

    # views share memory with ``params``; optimizer steps are visible through them

    def inst(self) -> InstParams:
        return InstParams(self.params["entity"], self.params["inst_rel"],
                          self.config.score_kind, self.config.norm)

    def onto(self) -> OntoParams:
        p = self.params
        proj = {k: p[k] for k in ("proj_w1", "proj_b1", "proj_w2", "proj_b2") if k in p} or None
        return OntoParams(p["concept_center"], p["concept_pre_offset"], p["onto_rel_shift"],
                          p["onto_rel_pre_scale"], proj, self.config.onto_mode)

    def bridge(self) -> Bridge | None:
        if "bridge_w" not in self.params:
            return None
        return Bridge(self.params["bridge_w"], self.params["bridge_b"])

    def box_config(self, intersection: str | None = None) -> BoxConfig:
        c = self.config
        return BoxConfig(c.d_box, c.beta, alpha=c.alpha, volume_clamp=c.volume_clamp,
                         intersection=intersection or c.intersection)

    def cross_config(self) -> CrossConfig:
        return CrossConfig(self.config.margin_cross, self.config.adaptive_alpha)

    def copy(self) -> "TrainState":
        return copy.deepcopy(self)

    @property
    def n_entities(self) -> int:
        return len(self.params["entity"])

    @property
    def n_concepts(self) -> int:
        return len(self.params["concept_center"])


def kg_vocab(kg) -> dict:
    return {
        "entities": list(kg.entities.names),
        "concepts": list(kg.concepts.names),
        "inst_relations": list(kg.inst_relations.names),
        "onto_relations": list(kg.onto_relations.names),
    }


def init_state(cfg: TrainConfig, kg, features=None, keep_vocab=True) -> TrainState:
    """Fresh parameters drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    inst = InstParams.init(kg.n_entities, max(len(kg.inst_relations), 1), cfg.d_vec, rng,
                           cfg.score_kind, cfg.norm)
    onto = OntoParams.init(
        kg.n_concepts, max(len(kg.onto_relations), 1), cfg.d_box, rng, cfg.onto_mode,
        text_width=features.width if features is not None else None,
        hidden=cfg.text_hidden or None, center_scale=cfg.center_init, init_offset=cfg.offset_init,
    )
    params = {}
    params.update(inst.tables())
    params.update(onto.tables())
    if cfg.d_vec != cfg.d_box:
        params.update(Bridge.init(cfg.d_vec, cfg.d_box, rng).tables())
    return TrainState(cfg, params, rng=rng, vocab=kg_vocab(kg) if keep_vocab else None)


def check_compatible(state: TrainState, kg) -> None:
    """Raises if the KG vocabulary sizes disagree with the parameter tables."""
    problems = []
    if state.n_entities != kg.n_entities:
        problems.append(f"entities {state.n_entities} != {kg.n_entities}")
    if state.n_concepts != kg.n_concepts:
        problems.append(f"concepts {state.n_concepts} != {kg.n_concepts}")
    if len(state.params["inst_rel"]) != max(len(kg.inst_relations), 1):
        problems.append("instance relation count differs")
    if len(state.params["onto_rel_shift"]) != max(len(kg.onto_relations), 1):
        problems.append("ontology relation count differs")
    if state.params["entity"].shape[1] != state.config.d_vec:
        problems.append("entity dimension differs from config")
    if state.params["concept_center"].shape[1] != state.config.d_box:
        problems.append("box dimension differs from config")
    if problems:
        raise ValueError("checkpoint does not match data: " + "; ".join(problems))
