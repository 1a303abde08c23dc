"""Corpus loading, filtering, vocabulary, drop augmentation and batching."""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import PAD_ID, Batch, pad_baskets

log = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
MIN_RECIPE_SIZE = 5
MAX_RECIPE_SIZE = 15
MIN_INGREDIENT_COUNT = 21  # ingredients seen 20 times or fewer are dropped
MAX_DROP = 3
DROP_PASSES = 2


class CorpusFormatError(ValueError):
    """Too many malformed corpus lines; ``problems`` holds ``(line_no, reason)`` pairs."""

    def __init__(self, path, problems, total):
        self.path = path
        self.problems = problems
        self.total = total
        detail = "; ".join(f"line {n}: {why}" for n, why in problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        super().__init__(f"{path}: {len(problems)} of {total} lines malformed: {detail}{more}")


def normalize_name(name):
    return " ".join(str(name).strip().lower().split())


@dataclass(frozen=True)
class RecipeRecord:
    id: str
    ingredients: frozenset

    @classmethod
    def from_names(cls, rid, names):
        ingredients = frozenset(n for n in (normalize_name(x) for x in names) if n)
        if not ingredients:
            raise ValueError("recipe has no ingredients")
        return cls(str(rid), ingredients)

    def to_json(self):
        return json.dumps({"id": self.id, "ingredients": sorted(self.ingredients)})


@dataclass(frozen=True)
class TrainingExample:
    input_ids: tuple
    target_id: Optional[int]
    completeness_label: int
    missing_ids: tuple = field(default=())

    def __post_init__(self):
        if (self.completeness_label == 1) != (self.target_id is None):
            raise ValueError("completeness_label=1 exactly when there is no target")
        if self.target_id is not None and self.target_id in self.input_ids:
            raise ValueError("target already present in the input set")


class Vocabulary:
    """Ingredient name <-> dense id map; id 0 is reserved for padding."""

    def __init__(self, names, counts=None):
        uniq = sorted(set(names) - {PAD_TOKEN})
        self.id_to_name = [PAD_TOKEN] + uniq
        self.name_to_id = {n: i for i, n in enumerate(self.id_to_name)}
        self.counts = dict(counts or {})

    @classmethod
    def from_records(cls, records):
        counts = ingredient_counts(records)
        return cls(counts.keys(), counts)

    def __len__(self):
        return len(self.id_to_name)

    def __contains__(self, name):
        return normalize_name(name) in self.name_to_id and normalize_name(name) != PAD_TOKEN

    def encode(self, names):
        out = []
        for n in names:
            key = normalize_name(n)
            if key == PAD_TOKEN or key not in self.name_to_id:
                raise KeyError(n)
            out.append(self.name_to_id[key])
        return out

    def encode_record(self, record):
        return tuple(sorted(self.encode(record.ingredients)))

    def decode(self, ids):
        return [self.id_to_name[i] for i in ids]

    def to_dict(self):
        return {"names": self.id_to_name[1:], "counts": {n: self.counts[n] for n in sorted(self.counts)}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d.get("counts"))


def ingredient_counts(records):
    c = Counter()
    for r in records:
        c.update(r.ingredients)
    return c


def load_corpus(path, max_malformed_fraction=0.01):
    """Read JSON-lines recipes.  Malformed lines are logged, and abort the
    load with :class:`CorpusFormatError` when they exceed the given fraction."""
    records, problems, total = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append((line_no, f"invalid JSON ({exc.msg})"))
                continue
            if not isinstance(obj, dict) or "id" not in obj or "ingredients" not in obj:
                problems.append((line_no, "missing 'id' or 'ingredients'"))
                continue
            names = obj["ingredients"]
            if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
                problems.append((line_no, "'ingredients' must be a list of strings"))
                continue
            try:
                records.append(RecipeRecord.from_names(obj["id"], names))
            except ValueError as exc:
                problems.append((line_no, str(exc)))
    if problems:
        if len(problems) > max_malformed_fraction * total:
            raise CorpusFormatError(path, problems, total)
        for n, why in problems:
            log.warning("%s line %d skipped: %s", path, n, why)
    return records


def write_corpus(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def filter_corpus(records, min_size=MIN_RECIPE_SIZE, max_size=MAX_RECIPE_SIZE, min_count=MIN_INGREDIENT_COUNT):
    """Alternate rare-ingredient removal and recipe-size filtering until nothing changes."""
    current = list(records)
    while True:
        counts = ingredient_counts(current)
        kept = []
        for r in current:
            ing = frozenset(i for i in r.ingredients if counts[i] >= min_count)
            if min_size <= len(ing) <= max_size:
                kept.append(r if ing == r.ingredients else RecipeRecord(r.id, ing))
        if kept == current:
            return kept
        current = kept


def split_corpus(records, seed, fractions=(0.8, 0.1, 0.1)):
    """Shuffle by seed and cut into disjoint train/val/test lists."""
    n = len(records)
    if n < 10:
        raise ValueError(f"need at least 10 recipes to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    pick = lambda idx: [records[i] for i in sorted(idx)]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def augment_recipe(ids, rng, passes=DROP_PASSES, max_drop=MAX_DROP):
    """One positive (the full set) plus, per pass, ``k ~ U{1..max_drop}`` dropped
    ingredients emitted as ``k`` negatives sharing the reduced input."""
    ids = tuple(sorted(ids))
    out = [TrainingExample(ids, None, 1)]
    for _ in range(passes):
        k = int(rng.integers(1, max_drop + 1))
        k = min(k, len(ids) - 1)
        if k < 1:
            continue
        drop_pos = rng.choice(len(ids), size=k, replace=False)
        dropped = tuple(sorted(ids[i] for i in drop_pos))
        kept = tuple(x for x in ids if x not in dropped)
        out.extend(TrainingExample(kept, t, 0, dropped) for t in dropped)
    return out


def build_examples(recipes, rng, passes=DROP_PASSES, max_drop=MAX_DROP):
    out = []
    for ids in recipes:
        out.extend(augment_recipe(ids, rng, passes, max_drop))
    return out


def collate(examples):
    ids, mask = pad_baskets([e.input_ids for e in examples])
    targets = np.array([PAD_ID if e.target_id is None else e.target_id for e in examples], dtype=np.int64)
    target_mask = np.array([e.target_id is not None for e in examples], dtype=bool)
    labels = np.array([e.completeness_label for e in examples], dtype=np.float64)
    return Batch(ids, mask, targets, target_mask, labels, tuple(e.missing_ids for e in examples))


def make_batches(examples, batch_size, rng=None):
    """Collate examples into padded batches, shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    return [collate([examples[i] for i in order[s : s + batch_size]]) for s in range(0, len(order), batch_size)]


def generate_synthetic_corpus(num_templates, recipes_per_template, vocab_size, seed, min_size=5, max_size=10):
    """Template-structured recipes for tests and desk-scale experiments.

    The vocabulary is split into one disjoint pool per template.  Each pool is
    cut into small components (2-4 ingredients that always appear together);
    a recipe is a union of whole components from a single pool with
    ``min_size..max_size`` ingredients.
    """
    if num_templates < 1 or recipes_per_template < 1:
        raise ValueError("num_templates and recipes_per_template must be positive")
    pool_size = vocab_size // num_templates
    if pool_size < max(min_size + 1, 4):
        raise ValueError(f"vocab_size={vocab_size} too small for {num_templates} templates")
    rng = np.random.default_rng(seed)
    names = [f"ingredient_{i:04d}" for i in range(vocab_size)]
    records = []
    for t in range(num_templates):
        pool = list(range(t * pool_size, (t + 1) * pool_size))
        pool = [pool[i] for i in rng.permutation(len(pool))]
        components, i = [], 0
        while i < len(pool):
            size = int(rng.integers(2, 5))
            if len(pool) - (i + size) == 1:
                size += 1
            components.append(pool[i : i + size])
            i += size
        for r in range(recipes_per_template):
            for _ in range(1000):
                target = int(rng.integers(min_size, max_size + 1))
                chosen = []
                for c in rng.permutation(len(components)):
                    if len(chosen) >= target:
                        break
                    chosen.extend(components[c])
                if min_size <= len(chosen) <= max_size:
                    break
            else:  # pragma: no cover - only for degenerate pool shapes
                raise ValueError("could not sample a recipe within the size bounds")
            records.append(RecipeRecord(f"t{t:03d}_r{r:05d}", frozenset(names[j] for j in chosen)))
    return records


def synthetic_vocabulary(vocab_size):
    """Vocabulary over every name the synthetic generator can emit (V = vocab_size + 1)."""
    return Vocabulary([f"ingredient_{i:04d}" for i in range(vocab_size)])


def load_pretrained_vectors(path, vocab, dim=768):
    """Table ``(len(vocab), dim)`` from a JSON-lines vector file; rows for names
    absent from the file are NaN so the model falls back to random init."""
    table = np.full((len(vocab), dim), np.nan)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            vec = np.asarray(obj["vector"], dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"{path} line {line_no}: expected {dim} values, got {vec.shape}")
            key = normalize_name(obj["name"])
            if key in vocab.name_to_id and key != PAD_TOKEN:
                table[vocab.name_to_id[key]] = vec
    return table
