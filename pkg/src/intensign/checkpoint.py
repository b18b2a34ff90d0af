"""Shared checkpoint format for every trainable model.

A checkpoint is a directory:

    config.json         {"format_version", "model", "params", "extra"}
    tensors.bin         little-endian float32 blobs, back to back
    tensors.index.json  name -> {"shape", "offset", "dtype"}
    norm_stats.json     per-dimension mean/std (pose models only)

Round-tripping is bitwise: loading a checkpoint and generating again gives
identical outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupted, or incompatible checkpoint."""


def save_checkpoint(model, path) -> None:
    """Persist any model exposing _checkpoint_payload()."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = model._checkpoint_payload()
    tensors: dict[str, np.ndarray] = payload["tensors"]

    index = {}
    offset = 0
    with open(path / "tensors.bin", "wb") as fh:
        for name in sorted(tensors):
            blob = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
            index[name] = {"shape": list(tensors[name].shape), "offset": offset, "dtype": "<f4"}
            fh.write(blob)
            offset += len(blob)
    (path / "tensors.index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    config = {
        "format_version": FORMAT_VERSION,
        "model": type(model).__name__,
        "params": payload["params"],
        "extra": payload["extra"],
    }
    (path / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if payload.get("norm_stats") is not None:
        (path / "norm_stats.json").write_text(
            json.dumps(payload["norm_stats"], sort_keys=True) + "\n", encoding="utf-8")


def read_tensors(path: Path) -> dict[str, np.ndarray]:
    try:
        index = json.loads((path / "tensors.index.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable tensor index in {path}: {exc}") from exc
    blob = (path / "tensors.bin").read_bytes()
    tensors = {}
    for name, meta in index.items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        end = start + count * 4
        if end > len(blob):
            raise CheckpointError(f"tensors.bin truncated: {name} needs bytes up to {end}, "
                                  f"file has {len(blob)}")
        tensors[name] = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
    return tensors


def load_checkpoint(path):
    """Rebuild the saved model; refuses version or shape mismatches."""
    path = Path(path)
    config_file = path / "config.json"
    if not config_file.exists():
        raise CheckpointError(f"no config.json in {path}")
    config = json.loads(config_file.read_text(encoding="utf-8"))
    version = config.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} not supported (expected {FORMAT_VERSION})")

    from intensign.backtrans import BackTranslator
    from intensign.dynsel import DynamicSelectionGenerator
    from intensign.ptgen import ProgressiveTransformerGenerator
    from intensign.tagger import IntensityTagger

    registry = {cls.__name__: cls for cls in (
        ProgressiveTransformerGenerator, DynamicSelectionGenerator, BackTranslator,
        IntensityTagger)}
    name = config.get("model")
    if name not in registry:
        raise CheckpointError(f"unknown model class {name!r} in checkpoint")

    norm_stats = None
    stats_file = path / "norm_stats.json"
    if stats_file.exists():
        norm_stats = json.loads(stats_file.read_text(encoding="utf-8"))

    model = registry[name](**config["params"])
    try:
        model._restore(config["extra"], read_tensors(path), norm_stats)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model
