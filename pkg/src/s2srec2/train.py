"""Multi-task training, alpha selection, and stop-gated basket completion."""
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .data import build_examples, make_batches
from .model import S2SRec2, pad_baskets
from .numeric import Adam, Tape

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 500
    epochs: int = 30
    alpha: float = 0.6
    alpha_grid: tuple = (0.2, 0.4, 0.6, 0.8)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        for a in (self.alpha,) + self.alpha_grid:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha values must lie in [0, 1], got {a}")


@dataclass
class InferenceConfig:
    stop_threshold: float = 0.5
    max_rounds: int = 10
    exclude_basket_items: bool = True
    use_stop_head: bool = True
    trace: bool = False

    def __post_init__(self):
        if not 0.0 < self.stop_threshold < 1.0:
            raise ValueError("stop_threshold must lie strictly between 0 and 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class CompletionResult:
    predicted_ids: List[int] = field(default_factory=list)
    round_probs: List[float] = field(default_factory=list)
    rounds_used: int = 0
    terminated_by: Optional[str] = None  # stop | max_rounds | max_set_size | exhausted
    trace: List[list] = field(default_factory=list)


@dataclass
class TrainResult:
    model: object
    log: list


def _finite_or_raise(epoch, batch_no, parts):
    vals = {k: float(v.item()) for k, v in parts.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {batch_no}: {vals}")
    return vals


def train(model, train_recipes, config, val_recipes=None, on_epoch_end=None, eval_k=(3, 5)):
    """Fit ``model`` on drop-augmented examples from ``train_recipes``.

    ``train_recipes`` are encoded id tuples.  Augmentation is re-sampled every
    epoch from a generator seeded by ``config.seed``.  Returns the model and a
    list of per-epoch log dicts.
    """
    if not train_recipes:
        raise ValueError("empty training split")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.lr)
    history = []
    val_tasks = None
    if val_recipes:
        from .evaluation import build_eval_tasks

        val_tasks = build_eval_tasks(val_recipes, seed=config.seed + 1)
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        examples = build_examples(train_recipes, rng)
        sums = {"ce": 0.0, "bce": 0.0, "joint": 0.0}
        batches = make_batches(examples, config.batch_size, rng)
        for b, batch in enumerate(batches):
            opt.zero_grad()
            with Tape() as tape:
                joint, ce, bce = model.batch_loss(batch, config.alpha)
                tape.backward(joint)
            vals = _finite_or_raise(epoch, b, {"joint": joint, "ce": ce, "bce": bce})
            opt.step()
            for k in sums:
                sums[k] += vals[k]
        entry = {
            "epoch": epoch,
            "loss_ce": sums["ce"] / len(batches),
            "loss_bce": sums["bce"] / len(batches),
            "loss_joint": sums["joint"] / len(batches),
        }
        if val_tasks:
            from .evaluation import EvalConfig, evaluate_system, system_for

            report = evaluate_system(system_for(model), val_tasks, EvalConfig(k_values=eval_k))
            entry["val"] = report
        entry["wall_time"] = time.perf_counter() - started
        log.info("epoch %d joint=%.4f ce=%.4f bce=%.4f", epoch, entry["loss_joint"], entry["loss_ce"], entry["loss_bce"])
        history.append(entry)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, entry)
    return TrainResult(model, history)


def tune_alpha(train_recipes, val_recipes, model_config, train_config, grid=None, model_factory=None):
    """Train one model per alpha; pick the best validation F1@3, lower MSE@3 breaking ties.

    Returns ``(best_alpha, rows, models)`` where ``rows`` holds one dict per alpha.
    """
    from .evaluation import EvalConfig, build_eval_tasks, evaluate_system, system_for

    grid = tuple(train_config.alpha_grid if grid is None else grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    factory = model_factory or (lambda cfg: S2SRec2(cfg, seed=train_config.seed))
    tasks = build_eval_tasks(val_recipes, seed=train_config.seed + 1)
    rows, models = [], {}
    for alpha in grid:
        cfg = dataclasses.replace(model_config, alpha=alpha)
        tcfg = dataclasses.replace(train_config, alpha=alpha)
        model = train(factory(cfg), train_recipes, tcfg).model
        metrics = evaluate_system(system_for(model), tasks, EvalConfig(k_values=(3,)))
        rows.append({"alpha": alpha, "f1@3": metrics["3"]["f1"], "mse@3": metrics["3"]["mse"]})
        models[alpha] = model
    best = max(rows, key=lambda r: (r["f1@3"], -r["mse@3"]))
    return best["alpha"], rows, models


def _max_set_size(model):
    cfg = getattr(model, "config", None)
    return getattr(cfg, "max_set_size", None) or 10**9


def complete_baskets(model, baskets, config=None):
    """Run the stop-gated completion loop on many baskets at once.

    Each round scores every unfinished basket; a basket stops when its
    completeness probability exceeds the threshold, otherwise its best
    candidate (lowest id on ties) is appended and it goes round again.
    """
    config = config or InferenceConfig()
    states = []
    for b in baskets:
        b = [int(x) for x in b]
        if not b:
            raise ValueError("cannot complete an empty basket")
        states.append(b)
    results = [CompletionResult() for _ in states]
    limit = _max_set_size(model)
    active = list(range(len(states)))
    while active:
        live = []
        for i in active:
            r = results[i]
            if r.rounds_used >= config.max_rounds:
                r.terminated_by = "max_rounds"
            elif len(states[i]) >= limit:
                r.terminated_by = "max_set_size"
            else:
                live.append(i)
        if not live:
            break
        ids, mask = pad_baskets([states[i] for i in live])
        if config.exclude_basket_items:
            probs, p = model.infer(ids, mask, exclude_inputs=True)
        else:
            probs, p = model.infer(ids, mask, exclude_inputs=False, exclude=[results[i].predicted_ids for i in live])
        active = []
        for row, i in enumerate(live):
            r = results[i]
            r.round_probs.append(float(p[row]))
            if config.trace:
                top = np.argsort(-probs[row], kind="stable")[:5]
                r.trace.append([(int(c), float(probs[row, c])) for c in top])
            if config.use_stop_head and p[row] > config.stop_threshold:
                r.terminated_by = "stop"
                continue
            cand = int(np.argmax(probs[row]))
            if probs[row, cand] <= 0.0:
                r.terminated_by = "exhausted"
                continue
            r.predicted_ids.append(cand)
            r.rounds_used += 1
            states[i].append(cand)
            active.append(i)
    return results


def complete_basket(model, ids, config=None):
    return complete_baskets(model, [ids], config)[0]


def predict_topk_many(model, baskets, k, config=None):
    if k < 1:
        raise ValueError("k must be >= 1")
    config = config or InferenceConfig()
    capped = dataclasses.replace(config, max_rounds=min(config.max_rounds, k), trace=False)
    return [r.predicted_ids[:k] for r in complete_baskets(model, baskets, capped)]


def predict_topk(model, ids, k, config=None):
    """First ``k`` sequential predictions (fewer if the model stops early)."""
    return predict_topk_many(model, [ids], k, config)[0]
