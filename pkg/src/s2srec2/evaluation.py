"""Set-completion metrics, held-out task construction, systems and reports.

Every metric is computed on the first ``k`` predictions only.  Aggregates are
plain means over tasks, accumulated with ``math.fsum`` in task order.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import augment_recipe
from .model import PAD_ID
from .train import InferenceConfig, predict_topk_many

DEFAULT_K = (3, 5)


@dataclass(frozen=True)
class EvalTask:
    input_ids: tuple
    ground_truth: tuple


@dataclass
class EvalConfig:
    k_values: tuple = DEFAULT_K
    systems: tuple = ()
    seeds: tuple = (0,)

    def __post_init__(self):
        self.k_values = tuple(int(k) for k in self.k_values)
        if not self.k_values or min(self.k_values) < 1:
            raise ValueError("every k must be >= 1")


def metrics_at_k(predicted, ground_truth, k):
    """``(precision, recall, f1)`` of the first ``k`` predictions against a nonempty truth set."""
    truth = set(ground_truth)
    if not truth:
        raise ValueError("ground truth set is empty")
    top = list(predicted)[:k]
    hits = len(set(top) & truth)
    precision = hits / len(top) if top else 0.0
    recall = hits / len(truth)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def mse_at_k(predicted_lists, truth_lists, k):
    """Mean squared difference of set sizes, both capped at ``k``."""
    if len(predicted_lists) != len(truth_lists):
        raise ValueError(f"{len(predicted_lists)} predictions vs {len(truth_lists)} ground truths")
    if not predicted_lists:
        raise ValueError("no tasks to score")
    errs = [(min(len(p), k) - min(len(g), k)) ** 2 for p, g in zip(predicted_lists, truth_lists)]
    return math.fsum(errs) / len(errs)


def build_eval_tasks(recipes, seed, passes=2):
    """Held-out tasks from encoded recipes via the training drop procedure:
    input = recipe minus the dropped ingredients, ground truth = the dropped set."""
    rng = np.random.default_rng(seed)
    tasks = []
    for ids in recipes:
        for ex in augment_recipe(ids, rng, passes=passes):
            # one task per drop pass: its first emitted target opens it
            if ex.target_id is not None and ex.target_id == ex.missing_ids[0]:
                tasks.append(EvalTask(ex.input_ids, ex.missing_ids))
    return tasks


# --------------------------------------------------------------------------
# systems


class StopGatedSystem:
    """Sequential completion with the model's stop head (or fixed length if disabled)."""

    def __init__(self, model, name="s2srec2", config=None):
        self.model = model
        self.name = name
        self.config = config or InferenceConfig()

    def predict(self, tasks, k):
        return predict_topk_many(self.model, [t.input_ids for t in tasks], k, self.config)


def fixed_length_system(model, name="s2srec2_no_stop", config=None):
    """Ablation: ignore the stop head and always emit ``k`` sequential predictions."""
    import dataclasses

    cfg = dataclasses.replace(config or InferenceConfig(), use_stop_head=False)
    return StopGatedSystem(model, name, cfg)


class ThresholdSystem:
    """Multi-label ranking: all items above the model's threshold, best first."""

    def __init__(self, model, name="multilabel", threshold=None):
        self.model = model
        self.name = name
        self.threshold = threshold

    def predict(self, tasks, k):
        return self.model.rank([t.input_ids for t in tasks], self.threshold)


class OracleSystem:
    name = "oracle"

    def predict(self, tasks, k):
        return [list(t.ground_truth) for t in tasks]


class RandomSystem:
    """Uniform random ranking over candidates not already in the basket."""

    name = "random"

    def __init__(self, vocab_size, seed=0):
        self.vocab_size = vocab_size
        self.seed = seed

    def predict(self, tasks, k):
        rng = np.random.default_rng(self.seed)
        out = []
        for t in tasks:
            pool = np.setdiff1d(np.arange(1, self.vocab_size), np.asarray(t.input_ids, dtype=np.int64))
            out.append([int(x) for x in rng.choice(pool, size=min(k, pool.size), replace=False)])
        return out


def system_for(model, name=None):
    if hasattr(model, "scores"):
        return ThresholdSystem(model, name or "multilabel")
    return StopGatedSystem(model, name or "s2srec2")


# --------------------------------------------------------------------------
# scoring


def evaluate_system(system, tasks, config=None):
    """Per-k mean precision / recall / F1 and MSE of one system over ``tasks``.

    Returns ``{str(k): {"precision", "recall", "f1", "mse", "n"}}``.
    """
    config = config or EvalConfig()
    if not tasks:
        raise ValueError("no evaluation tasks (empty test split?)")
    k_max = max(config.k_values)
    preds = system.predict(tasks, k_max)
    truths = [t.ground_truth for t in tasks]
    out = {}
    for k in sorted(config.k_values):
        triples = [metrics_at_k(p, g, k) for p, g in zip(preds, truths)]
        n = len(triples)
        out[str(k)] = {
            "precision": math.fsum(t[0] for t in triples) / n,
            "recall": math.fsum(t[1] for t in triples) / n,
            "f1": math.fsum(t[2] for t in triples) / n,
            "mse": mse_at_k(preds, truths, k),
            "n": n,
        }
    return out


@dataclass
class EvalReport:
    systems: dict = field(default_factory=dict)
    n_tasks: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        ks = self.config.get("k_values", DEFAULT_K)
        cols = [f"{m}@{k}" for m in ("Precision", "Recall", "F1", "MSE") for k in ks]
        width = max([len(n) for n in self.systems] + [6]) + 2
        lines = ["".ljust(width) + "".join(c.rjust(13) for c in cols)]
        for name, per_k in self.systems.items():
            row = name.ljust(width)
            for m in ("precision", "recall", "f1", "mse"):
                for k in ks:
                    row += f"{per_k[str(k)][m]:13.4f}"
            lines.append(row)
        return "\n".join(lines)


def evaluate_systems(systems, tasks, config=None):
    config = config or EvalConfig()
    report = EvalReport(n_tasks=len(tasks), config={"k_values": list(config.k_values), "seeds": list(config.seeds)})
    for s in systems:
        report.systems[s.name] = evaluate_system(s, tasks, config)
    return report


def random_precision_expectation(tasks, vocab_size, k):
    """Exact expected precision@k of :class:`RandomSystem` on ``tasks``."""
    vals = []
    for t in tasks:
        pool = vocab_size - 1 - len(set(t.input_ids) - {PAD_ID})
        vals.append(len(t.ground_truth) / pool if min(k, pool) else 0.0)
    return float(np.mean(vals))
