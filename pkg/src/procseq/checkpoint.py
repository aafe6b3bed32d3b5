"""Self-describing model checkpoints.

Binary layout::

    b"DCWM" | version (uint32 LE) | header length (uint32 LE) | header JSON | payload

The header echoes the model config and carries the vocabulary, the time
scaling and a manifest of (name, shape, offset) entries into the payload of
little-endian float32 values. k-NN models have no weights; they are stored as
a JSON trie index file instead.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baselines import KnnModel, LMBaseline, TrieIndex
from .dcwmann import DCwMANN, DCwMANNConfig
from .eventlog import Scaling, Vocabulary

MAGIC = b"DCWM"
VERSION = 1
KNN_FORMAT = "procseq-knn"
_PAYLOAD_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    model: object
    vocab: Vocabulary
    scaling: Scaling
    header: dict


def _model_config(model) -> tuple[str, dict]:
    if isinstance(model, DCwMANN):
        return "mann", model.config.to_dict()
    if isinstance(model, LMBaseline):
        return model.kind, {"vocab_size": model.vocab_size, "hidden": model.hidden}
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(path: str | Path, model, vocab: Vocabulary, scaling: Scaling,
                    extra: dict | None = None) -> None:
    if isinstance(model, KnnModel):
        save_knn(path, model, vocab, scaling, extra)
        return
    kind, config = _model_config(model)
    manifest, chunks, offset = [], [], 0
    for name, value in model.state_dict().items():
        raw = np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE).tobytes()
        manifest.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "kind": kind,
        "config": config,
        "vocab": vocab.to_list(),
        "scaling": asdict(scaling),
        "manifest": manifest,
        "payload_bytes": offset,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:1] == b"{":
        return load_knn(path)
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = data[12 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest expects {header['payload_bytes']}")
    values = {}
    for entry in header["manifest"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * _PAYLOAD_DTYPE.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: entry {entry['name']!r} runs past the payload")
        arr = np.frombuffer(payload[entry["offset"]:end], dtype=_PAYLOAD_DTYPE)
        values[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    kind = header["kind"]
    if kind == "mann":
        model = DCwMANN(DCwMANNConfig(**header["config"]))
    elif kind in ("lstm", "gru"):
        model = LMBaseline(kind, header["config"]["vocab_size"], header["config"]["hidden"])
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    model.load_state_dict(values)
    return Checkpoint(kind, model, Vocabulary(header["vocab"]), Scaling(**header["scaling"]), header)


def save_knn(path: str | Path, model: KnnModel, vocab: Vocabulary, scaling: Scaling,
             extra: dict | None = None) -> None:
    doc = {
        "format": KNN_FORMAT,
        "version": VERSION,
        "kind": "knn",
        "config": {"k": model.k},
        "vocab": vocab.to_list(),
        "scaling": asdict(scaling),
        "index": model.index.to_dict(),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_knn(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt index file") from exc
    if doc.get("format") != KNN_FORMAT:
        raise CheckpointError(f"{path}: not a k-NN index file")
    if doc.get("version") != VERSION:
        raise CheckpointVersionError(f"{path}: index version {doc.get('version')}, this build reads {VERSION}")
    model = KnnModel(TrieIndex.from_dict(doc["index"]), doc["config"]["k"])
    header = {k: v for k, v in doc.items() if k != "index"}
    return Checkpoint("knn", model, Vocabulary(doc["vocab"]), Scaling(**doc["scaling"]), header)
