"""Joint training with alternating per-view Adam updates."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import cross_model, inst_model, onto_model
from .kgdata import PositiveIndex, SplitKG, corrupt_batch
from .optim import adam_step
from .state import TrainState

logger = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "J_O", "J_I", "J_Cross", "val_metric"]


class TrainingError(FloatingPointError):
    pass


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[s:s + size] for s in range(0, n, size)]


def _view_losses(state: TrainState, features=None):
    """Closures computing ``(loss, grads)`` for each view on paired rows."""
    cfg = state.config
    box_cfg, cross_cfg = state.box_config(), state.cross_config()

    def onto(pos, neg):
        return onto_model.loss_onto(pos, neg, state.onto(), box_cfg, features, cfg.onto_loss, cfg.reduction)

    def inst(pos, neg):
        return inst_model.loss_inst(pos, neg, state.inst(), cfg.margin_kg, cfg.reduction)

    def cross(pos, neg):
        return cross_model.loss_cross(pos, neg, state.inst(), state.onto(), box_cfg, cross_cfg,
                                      state.bridge(), cfg.reduction)

    return {"onto": onto, "inst": inst, "links": cross}


def train_epoch(state: TrainState, data: SplitKG, features=None, index: PositiveIndex | None = None):
    """One epoch of the ontology / instance / cross alternating schedule.

    Each step does three Adam updates (ontology at ``lr``, instance at
    ``lambda1 * lr``, cross at ``lambda2 * lr``). The epoch runs as many steps
    as the largest view has batches; smaller views wrap around. Returns the
    mean per-view losses ``(J_O, J_I, J_Cross)``.
    """
    cfg = state.config
    index = index or PositiveIndex(data.kg)
    train = {"onto": data.onto["train"], "inst": data.inst["train"], "links": data.links["train"]}
    for k, rows in train.items():
        if len(rows) == 0:
            raise ValueError(f"empty training partition for {k}")
    negs = {"onto": cfg.neg_onto, "inst": cfg.neg_inst, "links": cfg.neg_cross}
    rates = {"onto": cfg.lr, "inst": cfg.lambda1 * cfg.lr, "links": cfg.lambda2 * cfg.lr}
    losses = _view_losses(state, features)
    rng = state.rng
    batches = {k: _batches(len(v), cfg.batch_size, rng) for k, v in train.items()}
    n_steps = max(len(b) for b in batches.values())
    totals = {k: 0.0 for k in train}
    for step in range(n_steps):
        for view in ("onto", "inst", "links"):
            bl = batches[view]
            pos_rows = train[view][bl[step % len(bl)]]
            neg = corrupt_batch(view, pos_rows, negs[view], rng, index)
            pos = np.tile(pos_rows, (negs[view], 1))
            loss, grads = losses[view](pos, neg)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite {view} loss at epoch {state.epoch + 1}, step {step}")
            adam_step(state.params, grads, state.m, state.v, state.steps, rates[view],
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            totals[view] += loss
    state.epoch += 1
    return tuple(totals[k] / n_steps for k in ("onto", "inst", "links"))


def total_objective(j_o, j_i, j_c, cfg) -> float:
    return j_o + cfg.lambda1 * j_i + cfg.lambda2 * j_c


def _resolve_metric(state: TrainState, data: SplitKG) -> str:
    name = state.config.early_stop_metric
    if name == "auto":
        name = "link" if data.mode == "linking" else "inst"
    if name == "none":
        return name
    part = {"inst": data.inst, "onto": data.onto, "link": data.links}[name]["valid"]
    return name if len(part) else "none"


def validation_metric(state: TrainState, data: SplitKG, name: str, features=None) -> float:
    from . import evaluation

    if name == "link":
        return evaluation.eval_linking(state, data, "valid").mrr
    view = "instance" if name == "inst" else "ontology"
    return evaluation.eval_kgc(state, data, view, "valid", features).mrr


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0
    best_metric: float | None = None


def _write_metrics(path, history):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in history:
            w.writerow([row["epoch"], repr(row["J_O"]), repr(row["J_I"]), repr(row["J_Cross"]),
                        "" if row["val_metric"] is None else repr(row["val_metric"])])


def fit(state: TrainState, data: SplitKG, features=None, metrics_path=None, checkpoint_dir=None,
        max_epochs: int | None = None, on_epoch=None) -> FitResult:
    """Trains until ``max_epochs`` (absolute epoch count) or early stopping.

    Resumes from ``state.epoch``. With early stopping enabled the parameters
    of the best validation epoch are restored before returning.
    """
    from .checkpoint import save_checkpoint

    cfg = state.config
    target = cfg.max_epochs if max_epochs is None else max_epochs
    index = PositiveIndex(data.kg)
    metric = _resolve_metric(state, data) if cfg.patience > 0 else "none"
    stopped = False
    while state.epoch < target:
        j = train_epoch(state, data, features, index)
        val = None
        improved = False
        if metric != "none" and state.epoch % cfg.eval_every == 0:
            val = validation_metric(state, data, metric, features)
            if state.best_metric is None or val > state.best_metric:
                state.best_metric, state.best_epoch = val, state.epoch
                state.best_params = {k: v.copy() for k, v in state.params.items()}
                improved = True
        row = {"epoch": state.epoch, "J_O": j[0], "J_I": j[1], "J_Cross": j[2], "val_metric": val}
        state.history.append(row)
        if improved and checkpoint_dir:
            save_checkpoint(state, os.path.join(checkpoint_dir, "best.ckpt"))
        logger.info("epoch %d  J_O %.5f  J_I %.5f  J_Cross %.5f  val %s", state.epoch, *j, val)
        if metrics_path:
            _write_metrics(metrics_path, state.history)
        if on_epoch is not None:
            on_epoch(state, row)
        if metric != "none" and state.epoch - state.best_epoch >= cfg.patience:
            stopped = True
            break
    if checkpoint_dir:
        save_checkpoint(state, os.path.join(checkpoint_dir, "final.ckpt"))
    if stopped and state.best_params is not None:
        for k, v in state.best_params.items():
            state.params[k][...] = v
    return FitResult(list(state.history), stopped, state.best_epoch, state.best_metric)


# ---------------------------------------------------------------------------
# gradient verification


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def compare_gradients(loss_and_grad, tables: dict, coords, step: float = 1e-5) -> list[float]:
    """Relative errors between analytic gradients and central differences.

    ``loss_and_grad()`` must read the (mutated in place) ``tables``;
    ``coords`` is a list of ``(table name, index tuple)``.
    """
    _, grads = loss_and_grad()
    errors = []
    for name, idx in coords:
        arr = tables[name]
        old = arr[idx]
        arr[idx] = old + step
        f_plus = loss_and_grad()[0]
        arr[idx] = old - step
        f_minus = loss_and_grad()[0]
        arr[idx] = old
        errors.append(relative_error(float(grads[name][idx]), (f_plus - f_minus) / (2 * step)))
    return errors


@dataclass
class GradCheckReport:
    max_error: dict
    n_coords: dict
    rejected: dict
    tol: float
    kink_warning: dict

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_error.values())

    def lines(self):
        for k in self.max_error:
            status = "PASS" if self.max_error[k] <= self.tol else "FAIL"
            warn = "  (kink rejection rate > 90%)" if self.kink_warning[k] else ""
            yield (f"{k:<6} max_rel_err={self.max_error[k]:.3e} coords={self.n_coords[k]} "
                   f"rejected={self.rejected[k]} {status}{warn}")


def check_gradients(state: TrainState, data: SplitKG, n_points: int = 50, step: float = 1e-5,
                    tol: float = 1e-4, features=None, pairs: int = 4, per_batch: int = 10,
                    kink_threshold: float = 1e-3, seed: int = 0, grad_hook=None,
                    max_attempts: int = 1000) -> GradCheckReport:
    """Compares analytic and central-difference gradients for all three losses.

    Batches of ``pairs`` positive/negative pairs are drawn; a batch whose
    nearest kink is closer than ``kink_threshold`` is rejected and redrawn.
    Coordinates are sampled from the rows the batch touches. ``grad_hook``
    (test hook) may rewrite analytic gradients: ``grad_hook(view, grads)``.
    """
    work = state.copy()
    rng = np.random.default_rng(seed)
    index = PositiveIndex(data.kg)
    losses = _view_losses(work, features)
    cfg = work.config
    box_cfg, cross_cfg = work.box_config(), work.cross_config()
    kinks = {
        "onto": lambda p, n: onto_model.kink_gap(p, n, work.onto(), box_cfg, features),
        "inst": lambda p, n: inst_model.kink_gap(p, n, work.inst(), cfg.margin_kg),
        "links": lambda p, n: cross_model.kink_gap(p, n, work.inst(), work.onto(), box_cfg,
                                                   cross_cfg, work.bridge()),
    }
    train = {"onto": data.onto["train"], "inst": data.inst["train"], "links": data.links["train"]}
    report = {"max_error": {}, "n_coords": {}, "rejected": {}, "kink_warning": {}}
    for view in ("onto", "inst", "links"):
        rows = train[view]
        errors, rejected, attempts = [], 0, 0
        while len(errors) < n_points and attempts < max_attempts:
            attempts += 1
            pos = rows[rng.integers(0, len(rows), size=pairs)]
            neg = corrupt_batch(view, pos, 1, rng, index)
            if kinks[view](pos, neg) < kink_threshold:
                rejected += 1
                continue

            def fn(pos=pos, neg=neg, view=view):
                loss, grads = losses[view](pos, neg)
                if grad_hook is not None:
                    grads = grad_hook(view, {k: g.copy() for k, g in grads.items()})
                return loss, grads

            _, grads = fn()
            candidates = []
            for name, g in grads.items():
                g2 = g.reshape(g.shape[0], -1)
                touched = np.flatnonzero(np.any(g2 != 0, axis=1))
                for r in touched:
                    candidates.extend((name, (int(r), j)) for j in range(g2.shape[1]))
            if not candidates:
                rejected += 1
                continue
            take = rng.choice(len(candidates), size=min(per_batch, len(candidates)), replace=False)
            coords = []
            for i in take:
                name, (r, j) = candidates[i]
                coords.append((name, np.unravel_index(r * work.params[name].reshape(
                    work.params[name].shape[0], -1).shape[1] + j, work.params[name].shape)))
            errors.extend(compare_gradients(fn, work.params, coords, step))
        report["max_error"][view] = max(errors) if errors else float("inf")
        report["n_coords"][view] = len(errors)
        report["rejected"][view] = rejected
        report["kink_warning"][view] = attempts > 0 and rejected / attempts > 0.9
    return GradCheckReport(tol=tol, **report)
