"""Single-file JSON checkpoints with base64 little-endian float32 parameters."""
import base64
import json

import numpy as np

from .data import Vocabulary
from .model import ModelConfig, S2SRec2

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(arr):
    raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(raw).decode("ascii")}


def decode_array(entry):
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return arr.reshape(entry["shape"])


def round_to_storage(model):
    """Round every parameter to float32 so the in-memory model equals its checkpoint."""
    for p in model.parameters():
        p.data[...] = p.data.astype(np.float32).astype(np.float64)


def dumps(model, vocab, extra=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": "s2srec2",
        "model_config": model.config.to_dict(),
        "vocabulary": vocab.to_dict(),
        "params": {name: encode_array(p.data) for name, p in model.named_parameters()},
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save(path, model, vocab, extra=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model, vocab, extra))


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    if doc.get("model_kind") != "s2srec2":
        raise CheckpointError(f"unsupported model kind {doc.get('model_kind')!r}")
    config = ModelConfig(**doc["model_config"])
    model = S2SRec2(config)
    model.load_state_dict({k: decode_array(v) for k, v in doc["params"].items()})
    vocab = Vocabulary.from_dict(doc["vocabulary"])
    if len(vocab) != config.vocab_size:
        raise CheckpointError(f"vocabulary has {len(vocab)} entries but the model expects {config.vocab_size}")
    return model, vocab, doc


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
