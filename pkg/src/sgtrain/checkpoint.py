"""Binary checkpoint format.

Layout::

    b"SGTCKPT1"                      8 bytes
    manifest length                  uint64, little endian
    manifest                         UTF-8 JSON
    payload                          float64 little endian, tensors back to back

Tensor offsets in the manifest are relative to the start of the payload.
"""

import json
import struct

import numpy as np

from .errors import FormatError, ParameterError
from .models import ModelSpec, build_model

MAGIC = b"SGTCKPT1"
FORMAT_VERSION = 1
TRAINING_MODES = ("traditional", "saliency_guided", "fine_tuned")


def save_checkpoint(model, path, mode=None, epochs=None, rng_state=None):
    mode = mode or model.meta.get("mode", "traditional")
    if mode not in TRAINING_MODES:
        raise ParameterError(f"unknown training mode tag {mode!r}")
    tensors, chunks, offset = [], [], 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "mode": mode,
        "epochs": int(epochs if epochs is not None else model.meta.get("epochs", 0)),
        "rng_state": rng_state if rng_state is not None else model.meta.get("rng_state"),
        "tensors": tensors,
        "payload_bytes": offset,
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError("file too short for a checkpoint header", offset=len(blob))
    if blob[:8] != MAGIC:
        raise FormatError(f"bad magic {blob[:8]!r}, expected {MAGIC!r}", offset=0)
    (mlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + mlen > len(blob):
        raise FormatError(f"manifest of {mlen} bytes runs past end of file", offset=16)
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", offset=16) from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {manifest.get('format_version')!r}", offset=16)
    base = 16 + mlen
    payload = blob[base:]
    if len(payload) != manifest["payload_bytes"]:
        raise FormatError(f"payload holds {len(payload)} bytes, manifest declares "
                          f"{manifest['payload_bytes']}", offset=base + min(len(payload), manifest["payload_bytes"]))
    spec = ModelSpec.from_dict(manifest["spec"])
    model = build_model(spec)
    listed = {t["name"]: t for t in manifest["tensors"]}
    if set(listed) != set(model.params):
        missing = sorted(set(model.params) ^ set(listed))
        raise FormatError(f"tensor names do not match the model spec: {missing}", offset=16)
    for name, p in model.params.items():
        entry = listed[name]
        if tuple(entry["shape"]) != p.shape:
            raise FormatError(f"tensor {name} has shape {entry['shape']}, spec builds {list(p.shape)}",
                              offset=base + entry["offset"])
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if entry["nbytes"] != p.size * 8 or stop > len(payload):
            raise FormatError(f"tensor {name} payload is truncated", offset=base + start)
        p.data = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(p.shape)
    model.meta = {"mode": manifest["mode"], "epochs": manifest["epochs"], "rng_state": manifest["rng_state"]}
    return model
