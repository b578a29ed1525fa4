"""Scenario-aware importance labels.

Object-level labels live in ``{1, 2, 3}`` (low, medium, high); patch-level
labels add ``0`` for background. Helpers here convert between the two, map
patch labels to normalised exponential weights, read and write the annotation
formats, provide a deterministic rule-based annotator for synthetic scenes,
and score predicted labels against a reference.
"""

from __future__ import annotations

import io
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .scene import PatchGrid, SceneObject, SceneSpec

log = logging.getLogger(__name__)

LEVELS = (0, 1, 2, 3)
CATEGORY_NAMES = {3: "high", 2: "medium", 1: "low", 0: "background"}


class AnnotationError(ValueError):
    """Annotation payload violates the ``{object_id: level}`` schema."""


class AnnotationTransportError(RuntimeError):
    """The remote annotator could not be reached or answered with an error."""


@dataclass(frozen=True)
class ObjectImportance:
    object_id: int
    level: int

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise AnnotationError(f"object {self.object_id}: level {self.level} not in {{1, 2, 3}}")


# ---------------------------------------------------------------------------
# object -> patch
# ---------------------------------------------------------------------------

def object_to_patch(objects: Sequence[SceneObject], labels: Iterable[ObjectImportance],
                    grid: PatchGrid) -> np.ndarray:
    """Per-patch level: max level over objects whose box overlaps the patch with positive area."""
    level_of = {lab.object_id: lab.level for lab in labels}
    out = np.zeros(grid.L, dtype=np.int64)
    ps = grid.patch_size
    for obj in objects:
        level = level_of.get(obj.object_id)
        if level is None:
            continue
        x1, y1, x2, y2 = obj.box
        if x1 < 0 or y1 < 0 or x2 > grid.width or y2 > grid.height:
            raise ValueError(f"object {obj.object_id} box {obj.box} outside "
                             f"{grid.width}x{grid.height} image")
        # patches whose half-open span meets (x1, x2) with positive length
        c0, c1 = int(np.floor(x1 / ps)), int(np.ceil(x2 / ps))
        r0, r1 = int(np.floor(y1 / ps)), int(np.ceil(y2 / ps))
        block = out.reshape(grid.rows, grid.cols)[r0:r1, c0:c1]
        np.maximum(block, level, out=block)
    return out


def importance_weights(levels: Sequence[int]) -> np.ndarray:
    """``w_i = 2**I_i / sum_j 2**I_j``."""
    levels = np.asarray(levels)
    if levels.size and (levels.min() < 0 or levels.max() > 3):
        raise ValueError(f"importance levels must lie in 0..3, got range [{levels.min()}, {levels.max()}]")
    # shift by the max so the largest power is 1: exact in binary floating point
    p = np.ldexp(1.0, (levels - levels.max()).astype(np.int64))
    return p / p.sum()


def uniform_object_levels(labels: Iterable[ObjectImportance]) -> list[ObjectImportance]:
    """Class-uniform importance: every detected object at the top level."""
    return [ObjectImportance(lab.object_id, 3) for lab in labels]


# ---------------------------------------------------------------------------
# annotation formats
# ---------------------------------------------------------------------------

def _strict_pairs(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise AnnotationError(f"duplicate object id {key}")
        seen[key] = value
    return seen


def parse_annotation(text: str) -> list[ObjectImportance]:
    """Parse ``{"<object_id>": <level>, ...}`` into validated records."""
    try:
        data = json.loads(text, object_pairs_hook=_strict_pairs)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"annotation is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise AnnotationError(f"annotation must be a JSON object, got {type(data).__name__}")
    out = []
    seen: set[int] = set()
    for key, value in data.items():
        try:
            oid = int(key)
        except (TypeError, ValueError):
            raise AnnotationError(f"object id {key!r} is not an integer") from None
        if oid in seen:
            raise AnnotationError(f"duplicate object id {oid}")
        seen.add(oid)
        if isinstance(value, bool) or not isinstance(value, int):
            raise AnnotationError(f"object {oid}: level {value!r} is not an integer")
        out.append(ObjectImportance(oid, value))
    return out


def serialize_annotation(labels: Iterable[ObjectImportance]) -> str:
    return json.dumps({str(lab.object_id): lab.level for lab in labels})


def write_patch_labels_csv(path: str | os.PathLike, levels: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(str(int(v)) for v in levels) + "\n")


def read_patch_labels_csv(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().replace("\n", ",")
    values = [int(t) for t in text.split(",") if t.strip()]
    arr = np.array(values, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 3):
        raise AnnotationError(f"{path}: patch levels must lie in 0..3")
    return arr


# ---------------------------------------------------------------------------
# rule annotator (synthetic scenes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RuleThresholds:
    near: float = 0.20   # fraction of image height
    mid: float = 0.30


def rule_annotate(objects: Sequence[SceneObject], spec: SceneSpec,
                  thresholds: RuleThresholds = RuleThresholds()) -> list[ObjectImportance]:
    """Deterministic stand-in for the multimodal annotator.

    Near objects are high regardless of lane; in-path objects are high when
    moderately close and medium otherwise; everything else is low.
    """
    near = thresholds.near * spec.height
    mid = thresholds.mid * spec.height
    out = []
    for obj in objects:
        if obj.ego_distance is None or obj.in_path is None:
            raise ValueError(f"object {obj.object_id} lacks synthetic geometry "
                             "(ego_distance/in_path); the rule annotator is synthetic-only")
        if obj.ego_distance < near:
            level = 3
        elif obj.in_path and obj.ego_distance < mid:
            level = 3
        elif obj.in_path:
            level = 2
        else:
            level = 1
        out.append(ObjectImportance(obj.object_id, level))
    return out


# ---------------------------------------------------------------------------
# remote annotator client
# ---------------------------------------------------------------------------

def fetch_remote_annotation(image: np.ndarray, detections: Sequence[SceneObject], endpoint: str,
                            timeout: float = 10.0, retries: int = 3,
                            backoff: float = 0.2,
                            session: requests.Session | None = None) -> list[ObjectImportance]:
    """POST the image and detections to ``endpoint`` and parse its label mapping.

    The request is ``multipart/form-data`` with parts ``image`` (binary PPM)
    and ``detections`` (JSON array of detection records). Connection failures
    and timeouts are retried ``retries`` times in total before raising
    :class:`AnnotationTransportError`; a malformed body raises
    :class:`AnnotationError` immediately.
    """
    buf = io.BytesIO()
    _ppm_bytes(buf, image)
    det_json = json.dumps([d.to_record() for d in detections])
    http = session or requests.Session()
    last: Exception | None = None
    for attempt in range(1, retries + 1):
        try:
            resp = http.post(
                endpoint,
                files={
                    "image": ("image.ppm", buf.getvalue(), "image/x-portable-pixmap"),
                    "detections": ("detections.json", det_json, "application/json"),
                },
                timeout=timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
            log.warning("annotator attempt %d/%d failed: %s", attempt, retries, exc)
            if attempt < retries:
                time.sleep(backoff * attempt)
            continue
        if resp.status_code != 200:
            raise AnnotationTransportError(f"annotator returned HTTP {resp.status_code}: {resp.text[:200]}")
        return parse_annotation(resp.text)
    raise AnnotationTransportError(f"annotator at {endpoint} unreachable after {retries} attempts: {last}")


def _ppm_bytes(fh, image: np.ndarray) -> None:
    h, w, _ = image.shape
    fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
    fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------

@dataclass
class AgreementTable:
    per_category: dict[str, float | None]   # None marks an empty reference category
    counts: dict[str, tuple[int, int]]       # (correct, total)
    overall: float
    granularity: str                         # "object" or "patch"

    def rows(self) -> list[tuple[str, str]]:
        out = []
        for level in (3, 2, 1, 0):
            name = CATEGORY_NAMES[level]
            acc = self.per_category[name]
            out.append((f"{name.capitalize()} Importance", "N/A" if acc is None else f"{100 * acc:.2f}"))
        out.append(("Overall", f"{100 * self.overall:.2f}"))
        return out

    def format(self) -> str:
        lines = [f"Category ({self.granularity}-level),Accuracy (%)"]
        lines += [f"{a},{b}" for a, b in self.rows()]
        return "\n".join(lines)


def agreement(pred: Mapping[int, int] | Sequence[int], ref: Mapping[int, int] | Sequence[int]) -> AgreementTable:
    """Per-category and overall accuracy of ``pred`` against reference ``ref``.

    Mappings (object id -> level) give object-level accuracy; equal-length
    sequences give patch-level accuracy. An object in ``ref`` but absent from
    ``pred`` counts as predicted background. Categories with no reference
    items are reported as ``None``.
    """
    if isinstance(ref, Mapping) != isinstance(pred, Mapping):
        raise ValueError("pred and ref must both be mappings (object-level) or both sequences (patch-level)")
    if isinstance(ref, Mapping):
        granularity = "object"
        if ref and pred and not set(ref) & set(pred):
            raise ValueError("pred and ref share no object ids")
        pairs = [(int(pred.get(k, 0)), int(v)) for k, v in ref.items()]
    else:
        granularity = "patch"
        if len(pred) != len(ref):
            raise ValueError(f"patch label lengths differ: {len(pred)} vs {len(ref)}")
        pairs = [(int(p), int(r)) for p, r in zip(pred, ref)]
    counts: dict[str, tuple[int, int]] = {}
    per: dict[str, float | None] = {}
    for level in (3, 2, 1, 0):
        sel = [p == r for p, r in pairs if r == level]
        name = CATEGORY_NAMES[level]
        counts[name] = (sum(sel), len(sel))
        per[name] = (sum(sel) / len(sel)) if sel else None
    total = len(pairs)
    correct = sum(p == r for p, r in pairs)
    overall = correct / total if total else float("nan")
    return AgreementTable(per, counts, overall, granularity)

