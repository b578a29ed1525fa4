"""CBR, importance-weighted PSNR (SAD), per-level PSNR and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .importance import importance_weights
from .scene import PatchGrid, patch_psnr, write_pgm

PSNR_CAP = 100.0
CSV_COLUMNS = ("image_id", "method", "snr_db", "cbr", "sad_db", "psnr_high", "psnr_med",
               "psnr_low", "psnr_bg", "psnr_nonbg")
_LEVEL_KEYS = {3: "psnr_high", 2: "psnr_med", 1: "psnr_low", 0: "psnr_bg"}

log = logging.getLogger(__name__)


def cbr(k: Sequence[int], h: int, w: int, extra_symbols: float = 0.0) -> float:
    """Channel bandwidth ratio ``(sum k + extra) / (3 h w)``."""
    if h <= 0 or w <= 0:
        raise ValueError(f"image dims must be positive, got {h}x{w}")
    total = float(np.sum(k)) + extra_symbols
    if total == 0:
        log.warning("cbr: no channel symbols allocated (degenerate stream)")
    return total / (3.0 * h * w)


def capped(psnr) -> np.ndarray:
    return np.minimum(np.asarray(psnr, dtype=np.float64), PSNR_CAP)


def psnr_per_patch(grid: PatchGrid, patches_hat: np.ndarray) -> np.ndarray:
    return capped([patch_psnr(a, b) for a, b in zip(grid.patches, patches_hat)])


def sad_from_psnr(psnr: Sequence[float], levels: Sequence[int]) -> float:
    """``sum_i w_i * min(PSNR_i, 100)``.

    Accumulated as ``sum 2^I_i PSNR_i / sum 2^I_i`` so integer-dB cases stay exact.
    """
    levels = np.asarray(levels)
    importance_weights(levels)  # validates the levels
    p = np.ldexp(1.0, levels.astype(np.int64))
    return float(np.sum(p * capped(psnr)) / np.sum(p))


def sad(grid: PatchGrid, patches_hat: np.ndarray, levels: Sequence[int]) -> float:
    """Importance-weighted average patch PSNR in dB."""
    if len(levels) != grid.L:
        raise ValueError(f"{len(levels)} labels for {grid.L} patches")
    return sad_from_psnr(psnr_per_patch(grid, patches_hat), levels)


@dataclass
class CategoryPsnr:
    by_level: dict[int, float | None]
    nonbackground: float | None


def category_psnr_from(psnr: Sequence[float], levels: Sequence[int]) -> CategoryPsnr:
    """Unweighted mean PSNR per level; ``None`` where a level has no patches.

    The non-background mean is over all patches with level 1..3 (patch mean).
    """
    psnr = capped(psnr)
    levels = np.asarray(levels)
    by = {}
    for lv in (3, 2, 1, 0):
        sel = psnr[levels == lv]
        by[lv] = float(sel.mean()) if sel.size else None
    nb = psnr[levels > 0]
    return CategoryPsnr(by, float(nb.mean()) if nb.size else None)


def category_psnr(grid: PatchGrid, patches_hat: np.ndarray, levels: Sequence[int]) -> CategoryPsnr:
    return category_psnr_from(psnr_per_patch(grid, patches_hat), levels)


@dataclass
class RunReport:
    image_id: str
    method: str
    snr_db: float
    cbr: float
    sad_db: float
    psnr_by_level: dict[int, float | None]
    mean_nonbackground_psnr: float | None
    k_heatmap: np.ndarray
    config_fingerprint: str = ""
    extras: dict = field(default_factory=dict)

    def row(self) -> dict[str, str]:
        def fmt(v):
            return "NA" if v is None else repr(float(v))
        out = {
            "image_id": self.image_id,
            "method": self.method,
            "snr_db": "inf" if np.isinf(self.snr_db) else repr(float(self.snr_db)),
            "cbr": fmt(self.cbr),
            "sad_db": fmt(self.sad_db),
            "psnr_nonbg": fmt(self.mean_nonbackground_psnr),
        }
        for lv, key in _LEVEL_KEYS.items():
            out[key] = fmt(self.psnr_by_level.get(lv))
        return {c: out[c] for c in CSV_COLUMNS}


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_report_csv(path: str | os.PathLike, reports: Iterable[RunReport]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for r in reports:
                writer.writerow(r.row())
    except OSError as exc:
        raise OSError(f"cannot write report CSV {path}: {exc}") from exc


def read_report_csv(path: str | os.PathLike) -> list[dict[str, object]]:
    """Rows with numeric fields parsed (``None`` for ``NA``)."""
    def num(v: str):
        return None if v == "NA" else float(v)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: (v if k in ("image_id", "method") else num(v)) for k, v in rec.items()})
    return rows


def k_heatmap_gray(k: np.ndarray, rows: int, cols: int, V: Sequence[int], patch_size: int = 1) -> np.ndarray:
    """Map ``k`` linearly from ``[min V, max V]`` onto 0..255 and upscale by ``patch_size``."""
    k = np.asarray(k, dtype=np.float64).reshape(rows, cols)
    lo, hi = float(min(V)), float(max(V))
    g = np.zeros_like(k) if hi == lo else (k - lo) / (hi - lo) * 255.0
    g = np.rint(np.clip(g, 0, 255)).astype(np.uint8)
    return g.repeat(patch_size, axis=0).repeat(patch_size, axis=1)


def emit_report(reports: Sequence[RunReport], csv_path: str | os.PathLike,
                heatmap_dir: str | os.PathLike | None = None, grid_shape: tuple[int, int] | None = None,
                V: Sequence[int] | None = None, patch_size: int = 1) -> list[Path]:
    """Write the CSV and (optionally) one PGM code-length heatmap per report."""
    written = [Path(csv_path)]
    write_report_csv(csv_path, reports)
    if heatmap_dir is not None:
        if grid_shape is None or V is None:
            raise ValueError("heatmaps need grid_shape and V")
        hd = Path(heatmap_dir)
        hd.mkdir(parents=True, exist_ok=True)
        for r in reports:
            snr = "inf" if np.isinf(r.snr_db) else f"{r.snr_db:g}"
            path = hd / f"{r.image_id}_{r.method}_snr{snr}.pgm"
            try:
                write_pgm(path, k_heatmap_gray(r.k_heatmap, *grid_shape, V, patch_size))
            except OSError as exc:
                raise OSError(f"cannot write heatmap {path}: {exc}") from exc
            written.append(path)
    return written
