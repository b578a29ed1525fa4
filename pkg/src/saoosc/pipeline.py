"""Datasets, method variants, two-stage training, transmission and the benchmark."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numkit as nk
from .channel import ChannelConfig, awgn, normalize_power, normalize_power_batch, awgn_batch, \
    side_channel, side_channel_symbols
from .config import METHODS, ExperimentConfig
from .hv_codec import HvConfig, HvModel, hv_loss, inverse_vectorize, vectorize, weighted_distortion
from .importance import ObjectImportance, importance_weights, object_to_patch, rule_annotate, \
    parse_annotation
from .jscc_codec import JsccConfig, JsccModel, RateConfig, SymbolStream, c2, decode, encode, \
    quantize_rate
from .metrics import RunReport, category_psnr_from, cbr, emit_report, fingerprint, psnr_per_patch, \
    sad_from_psnr
from .scene import PatchGrid, SceneObject, generate_scene, read_objects_jsonl, read_ppm, \
    reassemble, tokenize

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


class MissingCheckpointError(FileNotFoundError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    ids: list[str]
    images: np.ndarray                    # (N, H, W, 3) uint8
    patches: np.ndarray                   # (N, L, 3 p^2) in [0, 1]
    levels: np.ndarray                    # (N, L) scenario-aware patch levels
    objects: list[list[SceneObject]]
    labels: list[list[ObjectImportance]]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def uniform_levels(self) -> np.ndarray:
        """Every labelled object at level 3: any patch an object touches becomes 3."""
        return np.where(self.levels > 0, 3, 0)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset([self.ids[i] for i in idx], self.images[idx], self.patches[idx],
                       self.levels[idx], [self.objects[i] for i in idx], [self.labels[i] for i in idx])


_SPLIT_OFFSET = {"train": 0, "test": 500_000}


def scene_seed(data_seed: int, split: str, i: int) -> int:
    return data_seed * 1_000_000 + _SPLIT_OFFSET[split] + i


def image_patches(image: np.ndarray, patch_size: int) -> tuple[PatchGrid, np.ndarray]:
    grid = tokenize(image, patch_size)
    return grid, grid.patches.reshape(grid.L, -1).astype(np.float64) / 255.0


def _assemble(ids, images, objects, labels, patch_size) -> Dataset:
    patches, levels = [], []
    for img, objs, labs in zip(images, objects, labels):
        grid, flat = image_patches(img, patch_size)
        patches.append(flat)
        levels.append(object_to_patch(objs, labs, grid))
    return Dataset(list(ids), np.stack(images), np.stack(patches), np.stack(levels),
                   list(objects), list(labels))


def synthetic_dataset(cfg: ExperimentConfig, split: str) -> Dataset:
    d = cfg.data
    n = d.n_train if split == "train" else d.n_test
    spec = d.scene_spec()
    ids, images, objects, labels = [], [], [], []
    for i in range(n):
        img, objs = generate_scene(scene_seed(d.seed, split, i), spec)
        ids.append(f"{split}{i:05d}")
        images.append(img)
        objects.append(objs)
        labels.append(rule_annotate(objs, spec))
    return _assemble(ids, images, objects, labels, d.patch_size)


def ppm_dataset(root: str | os.PathLike, patch_size: int) -> Dataset:
    """Load ``<id>.ppm`` + ``<id>.objects.jsonl`` + ``<id>.labels.json`` triples from ``root``."""
    root = Path(root)
    paths = sorted(root.glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm images in {root}")
    ids, images, objects, labels = [], [], [], []
    for p in paths:
        stem = p.name[:-4]
        obj_path, lab_path = root / f"{stem}.objects.jsonl", root / f"{stem}.labels.json"
        for q in (obj_path, lab_path):
            if not q.is_file():
                raise FileNotFoundError(f"{p.name}: missing companion file {q.name}")
        ids.append(stem)
        images.append(read_ppm(p))
        objects.append(read_objects_jsonl(obj_path))
        labels.append(parse_annotation(lab_path.read_text(encoding="utf-8")))
    return _assemble(ids, images, objects, labels, patch_size)


def load_dataset(cfg: ExperimentConfig, split: str) -> Dataset:
    if split not in _SPLIT_OFFSET:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if cfg.data.ppm_dir:
        return ppm_dataset(Path(cfg.data.ppm_dir) / split, cfg.data.patch_size)
    return synthetic_dataset(cfg, split)


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    name: str
    weighting: str          # "scenario" | "uniform_objects" | "flat": levels feeding weights and C2
    use_alpha: bool
    adaptive: bool          # False -> constant k

    def levels(self, data: Dataset) -> np.ndarray:
        if self.weighting == "scenario":
            return data.levels
        if self.weighting == "uniform_objects":
            return data.uniform_levels
        return np.zeros_like(data.levels)


METHOD_SPECS = {
    "sa_oosc": MethodSpec("sa_oosc", "scenario", True, True),
    "oosc_uniform": MethodSpec("oosc_uniform", "uniform_objects", True, True),
    "ntscc_entropy_only": MethodSpec("ntscc_entropy_only", "flat", False, True),
    "fixed_rate": MethodSpec("fixed_rate", "flat", False, False),
}


def method_spec(name: str) -> MethodSpec:
    try:
        return METHOD_SPECS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {METHODS}") from None


def batch_weights(levels: np.ndarray) -> np.ndarray:
    return np.stack([importance_weights(row) for row in levels])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def hv_checkpoint_path(directory: str | os.PathLike, method: str) -> Path:
    # methods with the same weighting share one pretrained HV network
    return Path(directory) / f"hv-{method_spec(method).weighting}.ckpt"


def system_checkpoint_path(directory: str | os.PathLike, method: str) -> Path:
    return Path(directory) / f"{method}.ckpt"


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _write_meta(path: Path, meta: dict) -> None:
    tmp = _meta_path(path).with_suffix(".tmp")
    tmp.write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, _meta_path(path))


def read_meta(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file() or not _meta_path(path).is_file():
        raise MissingCheckpointError(f"checkpoint {path} (or its {_meta_path(path).name}) not found")
    return json.loads(_meta_path(path).read_text(encoding="utf-8"))


def _hv_config_dict(cfg: HvConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def save_hv(path: Path, model: HvModel, meta: dict) -> None:
    nk.save_checkpoint(path, model.state_dict())
    _write_meta(path, {"stage": "hv", "hv_config": _hv_config_dict(model.cfg), **meta})


def load_hv(path: str | os.PathLike, cfg: HvConfig, weighting: str | None = None) -> HvModel:
    path = Path(path)
    meta = read_meta(path)
    if meta.get("stage") not in ("hv", "joint"):
        raise IncompatibleCheckpointError(f"{path}: not an HV or system checkpoint")
    if meta["hv_config"] != _hv_config_dict(cfg):
        raise IncompatibleCheckpointError(f"{path}: HV architecture differs from the configured one")
    if weighting is not None and meta.get("weighting") != weighting:
        raise IncompatibleCheckpointError(
            f"{path}: pretrained with {meta.get('weighting')!r} weighting, method needs {weighting!r}")
    model = HvModel(cfg, nk.stream(0, "hv_init"))
    arrays = nk.load_checkpoint(path)
    prefix = "hv." if meta["stage"] == "joint" else ""
    model.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    return model


@dataclass
class System:
    """A fully trained transmitter/receiver pair for one method."""
    method: MethodSpec
    hv: HvModel
    jscc: JsccModel
    rate: RateConfig
    fixed_k: int
    fingerprint: str = ""

    def allocate(self, e: np.ndarray, levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(k, continuous rate)``; ``levels`` are the method's own allocation levels."""
        alpha = self.rate.alpha if self.method.use_alpha else 0.0
        cont = self.rate.eta * e + c2(levels, alpha)
        if not self.method.adaptive:
            return np.full(e.shape, self.fixed_k, dtype=np.int64), cont
        return quantize_rate(cont, self.rate.V), cont


def save_system(path: Path, system: System, extra: dict | None = None) -> None:
    arrays = {f"hv.{k}": v for k, v in system.hv.state_dict().items()}
    arrays.update({f"jscc.{k}": v for k, v in system.jscc.state_dict().items()})
    nk.save_checkpoint(path, arrays)
    _write_meta(path, {
        "stage": "joint", "method": system.method.name, "weighting": system.method.weighting,
        "hv_config": _hv_config_dict(system.hv.cfg),
        "jscc_config": json.loads(json.dumps(dataclasses.asdict(system.jscc.cfg))),
        "eta": system.rate.eta, "alpha": system.rate.alpha, "V": list(system.rate.V),
        "fixed_k": system.fixed_k, "fingerprint": system.fingerprint, **(extra or {}),
    })


def load_system(path: str | os.PathLike, cfg: ExperimentConfig | None = None) -> System:
    path = Path(path)
    meta = read_meta(path)
    if meta.get("stage") != "joint":
        raise IncompatibleCheckpointError(f"{path}: not a trained system checkpoint")
    hv_cfg = HvConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["hv_config"].items()})
    jc = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["jscc_config"].items()}
    jscc_cfg = JsccConfig(**jc)
    if cfg is not None and (hv_cfg != cfg.hv_config() or jscc_cfg != cfg.jscc_config()):
        raise IncompatibleCheckpointError(f"{path}: architecture differs from the configured one")
    hv = load_hv(path, hv_cfg)
    jscc = JsccModel(jscc_cfg, nk.stream(0, "jscc_init"))
    arrays = nk.load_checkpoint(path)
    jscc.load_state_dict({k[5:]: v for k, v in arrays.items() if k.startswith("jscc.")})
    rate = RateConfig(eta=meta["eta"], alpha=meta["alpha"], V=tuple(meta["V"]))
    return System(method_spec(meta["method"]), hv, jscc, rate, int(meta["fixed_k"]), meta.get("fingerprint", ""))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def initial_loss(self) -> float:
        return self.rows[0]["eval_loss"]

    @property
    def final_loss(self) -> float:
        return self.rows[-1]["eval_loss"]

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "eval_loss"])
            for r in self.rows:
                tl = "NA" if r["train_loss"] is None else repr(r["train_loss"])
                w.writerow([r["epoch"], tl, repr(r["eval_loss"])])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def _eval_subset(n: int) -> np.ndarray:
    return np.arange(min(n, 64))


def _run_epochs(cfg: ExperimentConfig, stage: str, n: int, loss_fn: Callable, optim: nk.Adam,
                epochs: int, snapshot: Callable[[], None], progress: Callable | None) -> TrainLog:
    """Shared loop: fixed-noise eval loss before training and after every epoch.

    On a non-finite loss or gradient the last epoch-end snapshot is kept and
    :class:`TrainingDiverged` is raised.
    """
    seed = cfg.train.seed
    tl = TrainLog()
    ev = _eval_subset(n)

    def eval_loss() -> float:
        return float(loss_fn(ev, nk.stream(seed, stage, "eval_noise")).data)

    tl.rows.append({"epoch": 0, "train_loss": None, "eval_loss": eval_loss()})
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        order = nk.stream(seed, stage, "shuffle", epoch)
        for step, idx in enumerate(_batches(n, cfg.train.batch_size, order)):
            optim.zero_grad()
            loss = loss_fn(idx, nk.stream(seed, stage, "noise", epoch, step))
            value = float(loss.data)
            try:
                if not math.isfinite(value):
                    raise FloatingPointError(f"non-finite {stage} loss {value} at epoch {epoch} step {step}")
                loss.backward()
                optim.step()
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), None) from exc
            total += value * len(idx)
            count += len(idx)
        tl.rows.append({"epoch": epoch, "train_loss": total / count, "eval_loss": eval_loss()})
        snapshot()
        if progress:
            progress(stage, epoch, tl.rows[-1])
    return tl


def pretrain_hv(cfg: ExperimentConfig, method: str, data: Dataset, out_dir: str | os.PathLike,
                progress: Callable | None = None) -> tuple[HvModel, TrainLog]:
    """Stage 1: noiseless HV training with ``lambda (rate_x + rate_z) + D_SA``.

    Writes ``hv-<weighting>.ckpt`` and ``hv-<weighting>.loss.csv`` under ``out_dir``.
    """
    if len(data) == 0:
        raise ValueError("pretrain_hv needs a non-empty dataset")
    spec = method_spec(method)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = hv_checkpoint_path(out_dir, method)
    hv_cfg = cfg.hv_config()
    model = HvModel(hv_cfg, nk.stream(cfg.train.seed, "hv_init"))
    weights = batch_weights(spec.levels(data))
    patches = data.patches

    def loss_fn(idx, rng):
        state = vectorize(patches[idx], model, "train", rng)
        s_hat = inverse_vectorize(state.x_tilde, model, "train")
        return hv_loss(patches[idx], s_hat, state, hv_cfg.lambda_hv, weights[idx])

    meta = {"weighting": spec.weighting, "seed": cfg.train.seed, "fingerprint": fingerprint(cfg.to_dict())}
    good = {"state": model.state_dict()}
    save_hv(ckpt, model, meta)

    def snapshot():
        good["state"] = model.state_dict()
        save_hv(ckpt, model, meta)

    optim = nk.Adam(dict(model.named_parameters()), lr=cfg.train.lr)
    try:
        tl = _run_epochs(cfg, "hv", len(data), loss_fn, optim, cfg.train.pretrain_epochs, snapshot, progress)
    except TrainingDiverged as exc:
        model.load_state_dict(good["state"])
        save_hv(ckpt, model, meta)
        raise TrainingDiverged(f"{exc}; last good HV checkpoint kept at {ckpt}", ckpt) from exc
    tl.checkpoint = ckpt
    tl.write_csv(out_dir / f"hv-{spec.weighting}.loss.csv")
    return model, tl


def entropies(hv: HvModel, patches: np.ndarray, batch: int = 64) -> np.ndarray:
    """Inference-mode per-patch SA-entropy (bits), shape (N, L)."""
    out = [vectorize(patches[s:s + batch], hv, "infer").e.data for s in range(0, len(patches), batch)]
    return np.concatenate(out) if out else np.zeros((0, hv.cfg.L))


def mid_rate(V: Sequence[int]) -> float:
    return 0.5 * (min(V) + max(V))


def calibrate_eta_mean(e: np.ndarray, V: Sequence[int], target: float | None = None) -> float:
    """``eta`` putting the mean continuous rate at ``target`` (default: the middle of ``V``)."""
    m = float(np.mean(e))
    if not m > 0:
        raise ValueError(f"cannot calibrate eta: mean entropy {m} is not positive")
    return (mid_rate(V) if target is None else target) / m


def calibrate_eta_for_mean_k(e: np.ndarray, levels: np.ndarray, alpha: float, V: Sequence[int],
                             target: float, iters: int = 60) -> float:
    """Bisection on ``log eta`` so the mean quantised length is as close to ``target`` as possible."""
    def mean_k(eta):
        return float(np.mean(quantize_rate(eta * e + c2(levels, alpha), V)))

    lo, hi = math.log(1e-8), math.log(1e4)
    best = (math.inf, math.exp(hi))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mk = mean_k(math.exp(mid))
        best = min(best, (abs(mk - target), math.exp(mid)))
        if mk < target:
            lo = mid
        else:
            hi = mid
    return best[1]


def fixed_length(cfg: ExperimentConfig) -> int:
    """Constant per-patch length of the fixed-rate baseline, and the budget adaptive methods match."""
    if cfg.rate.target_cbr > 0:
        per_patch = cfg.rate.target_cbr * 3 * cfg.data.patch_size ** 2
        return int(quantize_rate(per_patch, cfg.jscc.V))
    return int(quantize_rate(mid_rate(cfg.jscc.V), cfg.jscc.V))


def _target_mean_k(cfg: ExperimentConfig) -> float:
    return cfg.rate.target_mean_k if cfg.rate.target_mean_k > 0 else float(fixed_length(cfg))


def _alpha(cfg: ExperimentConfig) -> float | None:
    return None if cfg.rate.alpha < 0 else cfg.rate.alpha


def joint_parameter_groups(hv: HvModel, jscc: JsccModel, lr_mult: float,
                           freeze_entropy_model: bool) -> tuple[dict, dict]:
    """Named tensors and per-name lr multipliers for the joint stage.

    Frozen entropy model: the factorized prior and the hyper-coder that
    produces the Gaussian parameters are left out of the optimiser.
    """
    named, scale = {}, {}
    for n, p in jscc.named_parameters():
        named[f"jscc.{n}"] = p
    for n, p in hv.named_parameters():
        if freeze_entropy_model and n.split(".")[0] in ("prior", "he1", "he2", "hd1", "hd2"):
            continue
        named[f"hv.{n}"] = p
        scale[f"hv.{n}"] = lr_mult
    return named, scale


def train_joint(cfg: ExperimentConfig, method: str, data: Dataset, hv_checkpoint: str | os.PathLike,
                out_dir: str | os.PathLike, progress: Callable | None = None) -> tuple[System, TrainLog]:
    """Stage 2: JSCC training with the channel in the loop at the training SNR.

    Loss ``lambda * sum(continuous rates) + D_SA(S, S_hat) + D_SA(S, S_hat_hv)``;
    the HV network is fine-tuned at ``hv_lr_mult`` times the base rate.
    """
    spec = method_spec(method)
    hv_path = Path(hv_checkpoint)
    if not hv_path.is_file():
        raise MissingCheckpointError(f"train_joint needs a pretrained HV checkpoint; {hv_path} not found")
    hv = load_hv(hv_path, cfg.hv_config(), spec.weighting)
    if len(data) == 0:
        raise ValueError("train_joint needs a non-empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = system_checkpoint_path(out_dir, method)
    seed = cfg.train.seed
    jscc = JsccModel(cfg.jscc_config(), nk.stream(seed, "jscc_init"))
    V = tuple(cfg.jscc.V)
    levels = spec.levels(data)
    weights = batch_weights(levels)
    calib = np.arange(min(len(data), cfg.train.calibration_images))
    e_cal = entropies(hv, data.patches[calib])
    if cfg.rate.eta > 0:
        eta = cfg.rate.eta
    elif cfg.rate.eta_start == "target":
        eta = calibrate_eta_mean(e_cal, V, _target_mean_k(cfg))
    else:
        eta = calibrate_eta_mean(e_cal, V)
    rate = RateConfig(eta=eta, alpha=_alpha(cfg), V=V)
    system = System(spec, hv, jscc, rate, fixed_length(cfg), fingerprint(cfg.to_dict()))
    lam = cfg.jscc.lambda_jscc
    snr = cfg.channel.train_snr_db
    patches = data.patches

    def loss_fn(idx, rng):
        s = patches[idx]
        state = vectorize(s, hv, "train", rng)
        alpha = rate.alpha if spec.use_alpha else 0.0
        cont = state.e * rate.eta + c2(levels[idx], alpha)
        k = system.allocate(state.e.data, levels[idx])[0]
        y = normalize_power_batch(encode(state.x, k, jscc), k)
        x_hat = decode(awgn_batch(y, k, snr, rng), k, jscc)
        s_hat = inverse_vectorize(x_hat, hv, "train")
        s_hv = inverse_vectorize(state.x_tilde, hv, "train")
        loss = weighted_distortion(s, s_hat, weights[idx]) + weighted_distortion(s, s_hv, weights[idx])
        if spec.adaptive:
            loss = loss + cont.sum(axis=-1).mean() * lam
        return loss

    named, scale = joint_parameter_groups(hv, jscc, cfg.train.hv_lr_mult, cfg.train.freeze_entropy_model)
    optim = nk.Adam(named, lr=cfg.train.lr, lr_scale=scale)
    good = {}

    def finalize_rate():
        # match the fixed-rate length budget so methods compare at equal CBR
        if spec.adaptive and cfg.rate.eta <= 0:
            e_now = entropies(hv, data.patches[calib])
            alpha = rate.alpha if spec.use_alpha else 0.0
            rate.eta = calibrate_eta_for_mean_k(e_now, levels[calib], alpha, V, _target_mean_k(cfg))

    def snapshot():
        good["hv"], good["jscc"] = hv.state_dict(), jscc.state_dict()
        eta_train = rate.eta
        finalize_rate()
        save_system(ckpt, system, {"eta_train": eta_train})
        rate.eta = eta_train

    try:
        tl = _run_epochs(cfg, "joint", len(data), loss_fn, optim, cfg.train.joint_epochs, snapshot, progress)
    except TrainingDiverged as exc:
        if good:
            hv.load_state_dict(good["hv"])
            jscc.load_state_dict(good["jscc"])
            snapshot()
        raise TrainingDiverged(f"{exc}; last good system checkpoint at {ckpt if good else None}",
                               ckpt if good else None) from exc
    eta_train = rate.eta
    finalize_rate()
    save_system(ckpt, system, {"eta_train": eta_train})
    tl.checkpoint = ckpt
    tl.write_csv(out_dir / f"{method}.loss.csv")
    return system, tl


def train_method(cfg: ExperimentConfig, method: str, train: Dataset, out_dir: str | os.PathLike,
                 progress: Callable | None = None, reuse_hv: bool = True) -> System:
    """Both stages; reuses an existing compatible HV checkpoint when ``reuse_hv``."""
    hv_path = hv_checkpoint_path(out_dir, method)
    fp = fingerprint(cfg.to_dict())
    if not (reuse_hv and hv_path.is_file() and read_meta(hv_path).get("fingerprint") == fp):
        pretrain_hv(cfg, method, train, out_dir, progress)
    system, _ = train_joint(cfg, method, train, hv_path, out_dir, progress)
    return system


# ---------------------------------------------------------------------------
# transmission
# ---------------------------------------------------------------------------

@dataclass
class Transmission:
    image_id: str
    reconstruction: np.ndarray            # (H, W, 3) uint8
    k: np.ndarray                         # (L,)
    received: SymbolStream
    report: RunReport


def allocation_levels(method: MethodSpec, levels: np.ndarray) -> np.ndarray:
    if method.weighting == "scenario":
        return levels
    if method.weighting == "uniform_objects":
        return np.where(levels > 0, 3, 0)
    return np.zeros_like(levels)


def transmit_batch(images: np.ndarray, levels: np.ndarray, system: System, snr_db: float,
                   seed: int = 0, image_ids: Sequence[str] | None = None,
                   channel: ChannelConfig | None = None) -> list[Transmission]:
    """Send a batch of images through the full chain and score them against ``levels``.

    Each image is power-normalised on its own and receives noise from its own
    stream ``(seed, "channel", image_id, snr)``, so results do not depend on
    batch composition.
    """
    images = np.asarray(images)
    levels = np.asarray(levels)
    n = len(images)
    image_ids = list(image_ids) if image_ids is not None else [f"img{i:05d}" for i in range(n)]
    hv, jscc = system.hv, system.jscc
    ps = hv.cfg.patch_size
    channel = channel or ChannelConfig(snr_db=snr_db, seed=seed)
    grids, flat = zip(*(image_patches(img, ps) for img in images))
    patches = np.stack(flat)
    if levels.shape != patches.shape[:2]:
        raise ValueError(f"levels {levels.shape} do not match {patches.shape[:2]} patches")
    state = vectorize(patches, hv, "infer")
    k = np.stack([system.allocate(state.e.data[b], allocation_levels(system.method, levels[b]))[0]
                  for b in range(n)])
    y = encode(state.x, k, jscc).data
    received, padded = [], np.zeros_like(y)
    kmax = jscc.cfg.k_max
    for b in range(n):
        tx = normalize_power(SymbolStream.from_padded(y[b], k[b]))
        rng = nk.stream(seed, "channel", image_ids[b], repr(float(snr_db)))
        rx = awgn(tx, channel, rng)
        k_rx, side = side_channel(rx.k, len(system.rate.V))
        received.append((rx, side))
        padded[b] = SymbolStream(rx.y, k_rx).to_padded(kmax)
    x_hat = decode(padded, k, jscc)
    s_hat = inverse_vectorize(x_hat, hv, "infer").data
    out = []
    for b in range(n):
        grid = grids[b]
        pix = np.clip(np.rint(s_hat[b] * 255.0), 0, 255).astype(np.uint8)
        pix = pix.reshape(grid.patches.shape)
        recon = reassemble(grid, pix)
        psnr = psnr_per_patch(grid, pix)
        cat = category_psnr_from(psnr, levels[b])
        rx, side = received[b]
        extra = side_channel_symbols(side, channel)
        report = RunReport(
            image_id=image_ids[b], method=system.method.name, snr_db=float(snr_db),
            cbr=cbr(k[b], grid.height, grid.width, extra), sad_db=sad_from_psnr(psnr, levels[b]),
            psnr_by_level=cat.by_level, mean_nonbackground_psnr=cat.nonbackground,
            k_heatmap=k[b].reshape(grid.rows, grid.cols), config_fingerprint=system.fingerprint,
            extras={"side_bits": side.bits})
        out.append(Transmission(image_ids[b], recon, k[b], rx, report))
    return out


def transmit(image: np.ndarray, levels: np.ndarray, system: System, snr_db: float, seed: int = 0,
             image_id: str = "image", channel: ChannelConfig | None = None) -> Transmission:
    """tokenize -> vectorize -> allocate -> encode -> normalise -> AWGN -> decode -> reassemble -> metrics."""
    return transmit_batch(np.asarray(image)[None], np.asarray(levels)[None], system, snr_db, seed,
                          [image_id], channel)[0]


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def load_systems(cfg: ExperimentConfig, checkpoint_dir: str | os.PathLike) -> dict[str, System]:
    systems = {}
    for m in cfg.experiment.methods:
        path = system_checkpoint_path(checkpoint_dir, m)
        if not path.is_file():
            raise MissingCheckpointError(f"no trained checkpoint for method {m!r} at {path}")
        systems[m] = load_system(path, cfg)
    return systems


def evaluate(systems: dict[str, System], test: Dataset, snrs: Sequence[float], seed: int,
             channel_template: ChannelConfig | None = None, batch: int = 50) -> list[RunReport]:
    """Reports ordered by (method, snr, image)."""
    reports = []
    for name, system in systems.items():
        for snr in snrs:
            ch = dataclasses.replace(channel_template or ChannelConfig(), snr_db=float(snr), seed=seed)
            for s in range(0, len(test), batch):
                sl = slice(s, s + batch)
                tx = transmit_batch(test.images[sl], test.levels[sl], system, snr, seed,
                                    test.ids[sl], ch)
                reports.extend(t.report for t in tx)
    return reports


def run_benchmark(cfg: ExperimentConfig, out_dir: str | os.PathLike,
                  checkpoint_dir: str | os.PathLike | None = None,
                  test: Dataset | None = None) -> Path:
    """Evaluate every configured method on the test split; write ``benchmark.csv`` and heatmaps."""
    out_dir = Path(out_dir)
    ckpt_dir = Path(checkpoint_dir or cfg.experiment.checkpoints or out_dir)
    systems = load_systems(cfg, ckpt_dir)
    test = test if test is not None else load_dataset(cfg, "test")
    t0 = time.perf_counter()
    ch = ChannelConfig(side_channel_counted_in_cbr=cfg.channel.side_channel_counted_in_cbr)
    reports = evaluate(systems, test, cfg.channel.snr_list, cfg.train.seed, ch)
    log.info("benchmark: %d reports in %.1fs", len(reports), time.perf_counter() - t0)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "benchmark.csv"
    emit_report(reports, csv_path, out_dir / "heatmaps" if cfg.experiment.heatmaps else None,
                (cfg.data.rows, cfg.data.cols), tuple(cfg.jscc.V), cfg.data.patch_size)
    return csv_path
