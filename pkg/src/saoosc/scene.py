"""Images, raster-order patch grids, patch PSNR and a synthetic road-scene generator.

Images are ``uint8`` arrays of shape ``(h, w, 3)``. Networks see them as
float64 in ``[0, 1]``; the 255 peak only appears inside :func:`patch_psnr`.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .numkit import stream

MAX_PIXEL = 255.0
PSNR_INF = float("inf")


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int
    patches: np.ndarray  # (L, ps, ps, 3), raster order

    @property
    def L(self) -> int:
        return self.rows * self.cols

    @property
    def height(self) -> int:
        return self.rows * self.patch_size

    @property
    def width(self) -> int:
        return self.cols * self.patch_size

    def patch_box(self, i: int) -> tuple[int, int, int, int]:
        """Pixel rectangle ``(x1, y1, x2, y2)`` of raster patch ``i``."""
        r, c = divmod(i, self.cols)
        ps = self.patch_size
        return c * ps, r * ps, (c + 1) * ps, (r + 1) * ps


@dataclass
class SceneObject:
    box: tuple[float, float, float, float]
    class_tag: str
    ego_distance: float | None = None
    in_path: bool | None = None
    object_id: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box} for object {self.object_id}")

    def to_record(self) -> dict:
        x1, y1, x2, y2 = self.box
        rec = {
            "name": self.class_tag,
            "class": CLASS_IDS.get(self.class_tag, -1),
            "confidence": self.confidence,
            "box": {"x1": float(x1), "y1": float(y1), "x2": float(x2), "y2": float(y2)},
            "track_id": self.object_id,
        }
        if self.ego_distance is not None:
            rec["ego_distance"] = float(self.ego_distance)
        if self.in_path is not None:
            rec["in_path"] = bool(self.in_path)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "SceneObject":
        b = rec["box"]
        return cls(
            box=(b["x1"], b["y1"], b["x2"], b["y2"]),
            class_tag=rec.get("name", "object"),
            ego_distance=rec.get("ego_distance"),
            in_path=rec.get("in_path"),
            object_id=int(rec["track_id"]),
            confidence=float(rec.get("confidence", 1.0)),
        )


CLASS_IDS = {"person": 0, "car": 2, "truck": 7}


# ---------------------------------------------------------------------------
# tokenisation
# ---------------------------------------------------------------------------

def check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got shape {image.shape}")


def tokenize(image: np.ndarray, patch_size: int) -> PatchGrid:
    """Split ``image`` into non-overlapping ``patch_size`` squares, raster order."""
    check_image(image)
    h, w, _ = image.shape
    if patch_size <= 0:
        raise ValueError(f"patch_size must be positive, got {patch_size}")
    if h % patch_size:
        raise ValueError(f"image height {h} is not divisible by patch_size {patch_size}")
    if w % patch_size:
        raise ValueError(f"image width {w} is not divisible by patch_size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    patches = (image.reshape(rows, patch_size, cols, patch_size, 3)
               .transpose(0, 2, 1, 3, 4)
               .reshape(rows * cols, patch_size, patch_size, 3))
    return PatchGrid(patch_size, rows, cols, patches.copy())


def reassemble(grid: PatchGrid, patches: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`tokenize`; ``patches`` overrides ``grid.patches``."""
    p = grid.patches if patches is None else patches
    ps = grid.patch_size
    return (p.reshape(grid.rows, grid.cols, ps, ps, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(grid.rows * ps, grid.cols * ps, 3))


def patch_psnr(p: np.ndarray, p_hat: np.ndarray, max_value: float = MAX_PIXEL) -> float:
    """PSNR in dB between two equally shaped pixel blocks; ``inf`` if identical."""
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ValueError(f"patch shapes differ: {p.shape} vs {p_hat.shape}")
    if max_value <= 0:
        raise ValueError(f"MAX must be positive, got {max_value}")
    mse = np.mean((p - p_hat) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10.0 * np.log10(max_value ** 2 / mse))


def patch_psnrs(grid: PatchGrid, patches_hat: np.ndarray) -> np.ndarray:
    return np.array([patch_psnr(a, b) for a, b in zip(grid.patches, patches_hat)])


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Geometry of the synthetic driving scene.

    ``ego_fraction`` of the image height at the bottom is reserved for the
    hood of the ego car; no object box may enter it.
    """

    height: int = 48
    width: int = 48
    min_objects: int = 1
    max_objects: int = 4
    horizon: float = 0.40
    band_top: float = 0.12
    ego_fraction: float = 0.125
    in_path_prob: float = 0.5
    pedestrian_prob: float = 0.3
    max_retries: int = 50

    @property
    def ego_top(self) -> int:
        return self.height - int(round(self.ego_fraction * self.height))

    @property
    def horizon_row(self) -> int:
        return int(round(self.horizon * self.height))


def road_half_width(spec: SceneSpec, y: float) -> float:
    """Half-width of the road trapezoid at pixel row ``y``."""
    t = (y - spec.horizon_row) / max(spec.height - spec.horizon_row, 1)
    t = min(max(t, 0.0), 1.0)
    return spec.width * (0.04 + 0.44 * t)


def ego_point(spec: SceneSpec) -> tuple[float, float]:
    return spec.width / 2.0, float(spec.ego_top)


def _render_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    img = np.zeros((h, w, 3))
    hr = spec.horizon_row
    # sky: smooth vertical gradient
    t = np.linspace(0, 1, h)[:, None]
    sky = np.array([110, 160, 220]) * (1 - t) + np.array([190, 210, 235]) * t
    img[:] = sky[:, None, :]
    # building band: blocky facades with window grids and pixel noise
    top = int(round(spec.band_top * h))
    x = 0
    while x < w:
        bw = int(rng.integers(3, 9))
        by = int(rng.integers(top, max(top + 1, hr - 3)))
        base = rng.uniform(60, 200, size=3)
        img[by:hr, x:x + bw] = base
        win = rng.uniform(0, 1, size=(hr - by, min(bw, w - x))) < 0.35
        img[by:hr, x:x + bw][win] = base * 0.45
        x += bw
    band = slice(top, hr)
    img[band] += rng.normal(0, 18, size=img[band].shape)
    # ground: textured verge either side of a grey road trapezoid
    ys = np.arange(hr, h)
    verge = np.array([85, 120, 70]) + rng.normal(0, 22, size=(len(ys), w, 3))
    img[hr:] = verge
    xs = np.arange(w) + 0.5
    for y in ys:
        half = road_half_width(spec, y + 0.5)
        on_road = np.abs(xs - w / 2.0) <= half
        img[y, on_road] = np.array([105, 105, 110]) + rng.normal(0, 4, size=(on_road.sum(), 3))
        if (y // 3) % 2 == 0:
            img[y, int(w / 2) - 1:int(w / 2) + 1] = [230, 230, 200]
    # ego hood
    ego_top = spec.ego_top
    img[ego_top:] = np.array([35, 35, 45])
    return img


def _place(spec: SceneSpec, rng: np.random.Generator, oid: int) -> SceneObject | None:
    hr, ego_top, w = spec.horizon_row, spec.ego_top, spec.width
    person = rng.uniform() < spec.pedestrian_prob
    y2 = float(rng.integers(hr + 3, ego_top + 1))
    s = (y2 - hr) / (ego_top - hr)
    if person:
        bw = max(2.0, round(2 + 3 * s))
        bh = round(bw * 2.2)
    else:
        bw = max(3.0, round(3 + 15 * s))
        bh = max(2.0, round(bw * 0.7))
    half = road_half_width(spec, y2)
    want_path = rng.uniform() < spec.in_path_prob
    if want_path:
        cx = w / 2.0 + rng.uniform(-0.35, 0.35) * half
    else:
        side = rng.choice([-1.0, 1.0])
        cx = w / 2.0 + side * rng.uniform(0.6 * half + bw / 2, max(0.6 * half + bw / 2 + 1, w / 2.0))
    x1 = float(round(cx - bw / 2))
    x2 = x1 + bw
    y1 = y2 - bh
    if x1 < 0 or x2 > w or y1 < 0 or y2 > ego_top:
        return None
    cx = (x1 + x2) / 2.0
    ex, ey = ego_point(spec)
    dist = float(np.hypot(cx - ex, y2 - ey))
    in_path = bool(abs(cx - w / 2.0) <= 0.5 * road_half_width(spec, y2))
    return SceneObject((x1, y1, x2, y2), "person" if person else "car", dist, in_path, oid)


_PALETTE = np.array([[200, 30, 30], [30, 60, 200], [240, 200, 20], [240, 240, 240],
                     [20, 160, 60], [150, 40, 160], [250, 120, 0]], dtype=np.float64)


def _render_object(img: np.ndarray, obj: SceneObject, rng: np.random.Generator) -> None:
    x1, y1, x2, y2 = (int(v) for v in obj.box)
    color = _PALETTE[rng.integers(len(_PALETTE))]
    img[y1:y2, x1:x2] = color
    hgt = y2 - y1
    if obj.class_tag == "car" and hgt >= 3:
        img[y1:y1 + max(1, hgt // 3), x1 + 1:x2 - 1] = color * 0.5 + 60   # windscreen
        img[y2 - 1, x1:x2] = 20                                            # tyres/shadow
    elif obj.class_tag == "person":
        img[y1:y1 + max(1, hgt // 4), x1:x2] = [225, 180, 150]             # head


def generate_scene(seed: int, spec: SceneSpec = SceneSpec(),
                   n_objects: int | None = None) -> tuple[np.ndarray, list[SceneObject]]:
    """Render a deterministic synthetic road scene for ``seed``.

    Objects are drawn far-to-near so nearer objects occlude farther ones.
    Raises ``RuntimeError`` if an object cannot be placed within
    ``spec.max_retries`` attempts.
    """
    rng = stream(seed, "scene")
    if n_objects is None:
        n_objects = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    img = _render_background(spec, rng)
    objects: list[SceneObject] = []
    for oid in range(1, n_objects + 1):
        for _ in range(spec.max_retries):
            obj = _place(spec, rng, oid)
            if obj is not None:
                objects.append(obj)
                break
        else:
            raise RuntimeError(f"could not place object {oid} after {spec.max_retries} attempts")
    for obj in sorted(objects, key=lambda o: o.box[3]):
        _render_object(img, obj, rng)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), objects


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    check_image(image)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def write_pgm(path: str | os.PathLike, gray: np.ndarray) -> None:
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def _read_netpbm(path: str | os.PathLike, magic: bytes) -> tuple[np.ndarray, int, int]:
    blob = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated netpbm header")
        tokens.append(blob[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit netpbm is supported (maxval {maxval})")
    pos += 1
    return np.frombuffer(blob, dtype=np.uint8, offset=pos), h, w


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P6")
    return data[: h * w * 3].reshape(h, w, 3).copy()


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P5")
    return data[: h * w].reshape(h, w).copy()


def write_objects_jsonl(path: str | os.PathLike, objects: Iterable[SceneObject]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj.to_record(), sort_keys=True) + "\n")


def read_objects_jsonl(path: str | os.PathLike) -> list[SceneObject]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(SceneObject.from_record(json.loads(line)))
    return out


def spec_dict(spec: SceneSpec) -> dict:
    return asdict(spec)
