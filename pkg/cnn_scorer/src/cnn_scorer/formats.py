"""File formats shared with the labeling engine.

Everything this package knows about the outside world goes through three
files: an MCV1 volume container, a JSON header naming the label count and
hypothesis order, and JSON-lines records for ground truth in and scores
out. The layouts are re-implemented here from their byte-level contracts
so the package stands alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"MCV1"
CHANNELS = 3
RESOLUTION = 30


def read_volumes(path) -> tuple[int, np.ndarray]:
    """Read an MCV1 file into (resolution, (N, 3, R, R, R) float32 array).

    Voxels are stored x fastest, so the dense axes come out as (z, y, x).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatError("not an MCV1 file (bad magic)")
    if len(raw) < 16:
        raise FormatError("truncated MCV1 header")
    res, channels, count = struct.unpack("<III", raw[4:16])
    if channels != CHANNELS:
        raise FormatError(f"MCV1 must carry {CHANNELS} channels, found {channels}")
    expected = 16 + count * channels * res ** 3
    if len(raw) != expected:
        raise FormatError(f"MCV1 payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw[16:], dtype=np.uint8)
    if flat.size and flat.max() > 1:
        raise FormatError("MCV1 voxels must be 0 or 1")
    volumes = flat.reshape(count, channels, res, res, res).astype(np.float32)
    return res, volumes


def write_volumes(path, volumes: np.ndarray, resolution: int) -> None:
    """Inverse of read_volumes, mainly for building test fixtures."""
    volumes = np.asarray(volumes)
    if volumes.ndim != 5 or volumes.shape[1:] != (CHANNELS,) + (resolution,) * 3:
        raise FormatError(f"expected (N, {CHANNELS}, R, R, R) volumes, "
                          f"got {volumes.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", resolution, CHANNELS, volumes.shape[0]))
        fh.write(volumes.astype(np.uint8).tobytes())


def read_header(path) -> tuple[int, list[int]]:
    """Label count K and the hypothesis ids in volume order."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad header: {exc}")
    try:
        k = int(doc["K"])
        ids = [int(i) for i in doc["hyp_ids"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad header: {exc}")
    if k < 1:
        raise FormatError("header K must be >= 1")
    return k, ids


@dataclass(frozen=True)
class TruthRecord:
    hyp_id: int
    label: int
    confidence: float


def read_truth(path) -> list[TruthRecord]:
    """Ground-truth lines {"hyp_id", "label", "confidence"}."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                rec = TruthRecord(int(doc["hyp_id"]), int(doc["label"]),
                                  float(doc["confidence"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"truth line {line_no}: {exc}")
            if rec.label < 0:
                raise FormatError(f"truth line {line_no}: negative label")
            if not 0.0 <= rec.confidence <= 1.0:
                raise FormatError(f"truth line {line_no}: confidence outside [0, 1]")
            out.append(rec)
    return out


def write_scores(path, hyp_ids, probs: np.ndarray, confidence: np.ndarray) -> None:
    """Score lines {"hyp_id", "probs", "confidence"} in the engine's layout."""
    probs = np.asarray(probs, dtype=np.float64)
    confidence = np.asarray(confidence, dtype=np.float64)
    if len(hyp_ids) != probs.shape[0] or len(hyp_ids) != confidence.shape[0]:
        raise FormatError("score rows disagree with hypothesis ids")
    with open(path, "w", encoding="utf-8") as fh:
        for hid, row, conf in zip(hyp_ids, probs, confidence):
            fh.write(json.dumps({
                "hyp_id": int(hid),
                "probs": [float(v) for v in row],
                "confidence": float(conf),
            }, separators=(",", ":")))
            fh.write("\n")
