"""Training loop, evaluation metrics, checkpointing, and the ablation registry.

Training is SGD with momentum and a step-decay schedule under cross entropy.
Everything is deterministic given the config seed: initialisation, data order,
augmentation draws, and dropout. Gradients flow through the interaction unit,
the position encoder, and the backbone; detection generation contributes no
parameters at all, mirroring a frozen external detector.
"""
from __future__ import annotations

import io
import json
import time
import zipfile
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentSpec, augment_clip, center_eval_process
from .config import (ConfigError, ExperimentConfig, apply_overrides,
                     config_hash, from_dict, to_dict)
from .detections import FrameDetections, ROLES, Role, filter_detections
from .interaction import InteractionReasoningNetwork, build_model
from .synthdata import load_clip, load_manifest
from .backbone import roi_cell_mask
from .detections import rasterize_binary_map
from .imageops import crop_patch

# Domain alias: the schedule part of OptimizerConfig is the optimizer spec.
from .config import OptimizerConfig as OptimizerSpec  # noqa: F401


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    top1: float
    top5: float
    loss: float
    config_hash: str
    wall_time: float

    def __post_init__(self):
        if not (0.0 <= self.top1 <= self.top5 <= 1.0):
            raise ValueError(
                f"accuracies must satisfy 0 <= top1 <= top5 <= 1, got "
                f"{self.top1}, {self.top5}"
            )


def lr_at_epoch(spec, epoch: int) -> float:
    """Step-decay schedule: divide by the factor at each decay epoch."""
    drops = sum(1 for d in spec.decay_epochs if epoch >= d)
    return spec.lr / spec.decay_factor ** drops


# ---------------------------------------------------------------------------
# Sample preparation and batching
# ---------------------------------------------------------------------------

@dataclass
class ClipSample:
    frames: np.ndarray  # (T_in, H, W, 3) uint8
    detections: list  # list[FrameDetections]
    label: int
    clip_id: str


def check_dataset_compatible(manifest: dict, config: ExperimentConfig) -> None:
    if manifest["frames_per_clip"] != config.data.frames_per_clip:
        raise ConfigError(
            f"dataset has {manifest['frames_per_clip']} frames per clip but "
            f"config expects {config.data.frames_per_clip}")
    if manifest["frame_size"] != config.data.frame_size:
        raise ConfigError(
            f"dataset frame size {manifest['frame_size']} does not match "
            f"config {config.data.frame_size}")
    n_classes = len(manifest["classes"])
    if n_classes != config.data.num_classes:
        raise ConfigError(
            f"dataset has {n_classes} classes but config expects "
            f"{config.data.num_classes}")


def load_split(dataset_dir, split: str, manifest: Optional[dict] = None,
               limit: Optional[int] = None) -> list[ClipSample]:
    manifest = manifest or load_manifest(dataset_dir)
    entries = manifest["splits"][split]
    if limit is not None:
        per_class: dict[int, int] = {}
        kept = []
        quota = limit // len(manifest["classes"])
        for e in entries:
            if per_class.get(e["class_id"], 0) < quota:
                per_class[e["class_id"]] = per_class.get(e["class_id"], 0) + 1
                kept.append(e)
        entries = kept
    samples = []
    for e in entries:
        frames, dets = load_clip(dataset_dir, e["clip_id"])
        samples.append(ClipSample(frames=frames, detections=dets,
                                  label=e["class_id"], clip_id=e["clip_id"]))
    return samples


def traj_frame_indices(config: ExperimentConfig) -> np.ndarray:
    """Positions within the sampled feature volume that trajectories use."""
    t = config.data.trajectory_len
    if config.interaction.traj_mode == "middle":
        return np.array([t // 2])
    return np.arange(t)


def prepare_sample(sample: ClipSample, config: ExperimentConfig,
                   aug_spec: Optional[AugmentSpec] = None,
                   detections_override: Optional[list] = None) -> dict:
    """Turn one clip into the tensors the model consumes.

    Detections pass through confidence filtering, role deactivation, frame
    sampling, and the trajectory-mode policy before rasterisation. Everything
    returned here is constant with respect to the model parameters.
    """
    d, it = config.data, config.interaction
    frames = sample.frames.astype(np.float32) / 255.0
    dets = list(detections_override if detections_override is not None
                else sample.detections)
    if aug_spec is not None and aug_spec.mode != "none":
        frames, dets = augment_clip(frames, dets, aug_spec)
    else:
        frames, dets = center_eval_process(frames, dets, d.frame_size)

    active = {Role(code) for code in it.active_roles}
    filtered = []
    for f in dets:
        kept = filter_detections(
            [(r, b) for r, b in f.entries.items() if r in active],
            d.confidence_threshold, f.frame_index)
        filtered.append(kept)

    stride = d.frames_per_clip // d.trajectory_len
    sampled = [filtered[i * stride] for i in range(d.trajectory_len)]
    middle = sampled[d.trajectory_len // 2]
    if it.traj_mode == "middle":
        steps = [middle]
        frame_for_patch = [ (d.trajectory_len // 2) * stride ]
    elif it.traj_mode == "duplicate":
        steps = [FrameDetections(frame_index=f.frame_index, entries=dict(middle.entries))
                 for f in sampled]
        frame_for_patch = [i * stride for i in range(d.trajectory_len)]
    else:
        steps = sampled
        frame_for_patch = [i * stride for i in range(d.trajectory_len)]

    n_steps = len(steps)
    grid = d.grid_size
    vol_cells = d.frame_size // 8
    maps = np.zeros((4, n_steps, grid, grid), dtype=np.float32)
    presence = np.zeros((4, n_steps), dtype=np.float32)
    roi_masks = np.zeros((4, n_steps, vol_cells, vol_cells), dtype=np.float32)
    patches = (np.zeros((4, n_steps, it.mlp_patch_size, it.mlp_patch_size, 3),
                        dtype=np.float32)
               if it.detection_rep == "mlp" else None)

    for ri, role in enumerate(ROLES):
        for si, step in enumerate(steps):
            box = step.get(role)
            if box is None:
                continue
            if patches is not None:
                patch = crop_patch(frames[frame_for_patch[si]],
                                   box.x0, box.y0, box.x1, box.y1,
                                   it.mlp_patch_size)
                if patch is None:
                    continue  # degenerate crop counts as an absent detection
                patches[ri, si] = patch
            presence[ri, si] = 1.0
            maps[ri, si] = rasterize_binary_map(box, grid)
            mask = roi_cell_mask(box, vol_cells, vol_cells)
            roi_masks[ri, si] = mask / mask.sum()

    out = {
        "frames_u8": torch.from_numpy(
            np.ascontiguousarray((frames * 255.0).round().astype(np.uint8)
                                 .transpose(3, 0, 1, 2))),
        "maps": torch.from_numpy(maps),
        "presence": torch.from_numpy(presence),
        "roi_masks": torch.from_numpy(roi_masks),
        "label": sample.label,
    }
    if patches is not None:
        out["patches"] = torch.from_numpy(patches)
    return out


def collate(prepared: Sequence[dict], config: ExperimentConfig) -> dict:
    batch = {
        "clips": torch.stack([p["frames_u8"] for p in prepared]).float() / 255.0,
        "maps": torch.stack([p["maps"] for p in prepared]),
        "presence": torch.stack([p["presence"] for p in prepared]),
        "roi_masks": torch.stack([p["roi_masks"] for p in prepared]),
        "labels": torch.tensor([p["label"] for p in prepared], dtype=torch.long),
        "traj_frame_indices": torch.as_tensor(traj_frame_indices(config)),
    }
    if "patches" in prepared[0]:
        batch["patches"] = torch.stack([p["patches"] for p in prepared])
    return batch


def _augment_spec_for(config: ExperimentConfig, epoch: int, index: int
                      ) -> Optional[AugmentSpec]:
    aug = config.augment
    if aug.mode == "none":
        return None
    seed = ((config.seed * 1_000_003 + epoch) * 65_537 + index) % (2 ** 31)
    return AugmentSpec(mode=aug.mode, scale_range=(aug.scale_lo, aug.scale_hi),
                       target_size=aug.target_size, seed=seed)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def sgd_optimizer(model, spec) -> torch.optim.SGD:
    return torch.optim.SGD(model.parameters(), lr=spec.lr,
                           momentum=spec.momentum,
                           weight_decay=spec.weight_decay)


def _topk_correct(logits: torch.Tensor, labels: torch.Tensor, k: int) -> int:
    topk = logits.topk(k, dim=1).indices
    return int((topk == labels.unsqueeze(1)).any(dim=1).sum())


def train(model: InteractionReasoningNetwork,
          train_samples: Sequence[ClipSample],
          val_samples: Sequence[ClipSample],
          config: ExperimentConfig,
          out_dir=None,
          stop_at_val_top1: Optional[float] = None,
          log: Optional[Callable[[str], None]] = None,
          ) -> list[MetricsRecord]:
    """Run the full schedule; returns the metrics history (train + val rows).

    Deterministic given config.seed. Aborts with a diagnostic if the loss
    stops being finite.
    """
    opt_cfg = config.optimizer
    torch.manual_seed(config.seed)
    optimizer = sgd_optimizer(model, opt_cfg)
    order_rng = np.random.default_rng(config.seed)
    chash = config_hash(config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    static_train = config.augment.mode == "none"
    prepared_train = ([prepare_sample(s, config) for s in train_samples]
                      if static_train else None)
    prepared_val = [prepare_sample(s, config) for s in val_samples]

    k = min(5, config.data.num_classes)
    history: list[MetricsRecord] = []
    bs = opt_cfg.batch_size
    for epoch in range(opt_cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(opt_cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = order_rng.permutation(len(train_samples))
        loss_sum, n_seen, top1_hits, topk_hits = 0.0, 0, 0, 0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if static_train:
                prepared = [prepared_train[i] for i in idx]
            else:
                prepared = [
                    prepare_sample(train_samples[i], config,
                                   _augment_spec_for(config, epoch, int(i)))
                    for i in idx
                ]
            batch = collate(prepared, config)
            logits = model(batch)
            loss = F.cross_entropy(logits, batch["labels"])
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"step {start // bs} (lr={lr})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            n = len(idx)
            loss_sum += float(loss.detach()) * n
            n_seen += n
            with torch.no_grad():
                top1_hits += _topk_correct(logits, batch["labels"], 1)
                topk_hits += _topk_correct(logits, batch["labels"], k)
        train_rec = MetricsRecord(
            epoch=epoch, split="train", top1=top1_hits / n_seen,
            top5=topk_hits / n_seen, loss=loss_sum / n_seen,
            config_hash=chash, wall_time=time.perf_counter() - t0)
        val_rec = evaluate(model, prepared_val, config, split="val", epoch=epoch)
        history.extend([train_rec, val_rec])
        if out_dir is not None:
            append_metrics(out_dir / "metrics.jsonl", [train_rec, val_rec])
        if log is not None:
            log(f"epoch {epoch:3d} lr {lr:.2e} train {train_rec.top1:.3f} "
                f"val {val_rec.top1:.3f} loss {train_rec.loss:.4f}")
        if stop_at_val_top1 is not None and val_rec.top1 >= stop_at_val_top1:
            break
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.irn", model, config)
    return history


def evaluate(model, samples, config: ExperimentConfig, split: str = "val",
             epoch: int = -1) -> MetricsRecord:
    """Deterministic evaluation: dropout off, no augmentation randomness."""
    prepared = _as_prepared(samples, config)
    t0 = time.perf_counter()
    model.eval()
    k = min(5, config.data.num_classes)
    bs = config.optimizer.batch_size
    loss_sum, top1_hits, topk_hits = 0.0, 0, 0
    with torch.no_grad():
        for start in range(0, len(prepared), bs):
            batch = collate(prepared[start:start + bs], config)
            logits = model(batch)
            loss_sum += float(
                F.cross_entropy(logits, batch["labels"], reduction="sum"))
            top1_hits += _topk_correct(logits, batch["labels"], 1)
            topk_hits += _topk_correct(logits, batch["labels"], k)
    n = len(prepared)
    return MetricsRecord(epoch=epoch, split=split, top1=top1_hits / n,
                         top5=topk_hits / n, loss=loss_sum / n,
                         config_hash=config_hash(config),
                         wall_time=time.perf_counter() - t0)


def predict_logits(model, samples, config: ExperimentConfig,
                   pair_override=None,
                   detections_override: Optional[dict] = None) -> np.ndarray:
    """Per-sample logits in input order.

    ``detections_override`` maps clip_id to a replacement detection list (for
    noisy-evaluation studies); ``pair_override`` masks interaction pairs at
    inference time.
    """
    model.eval()
    outs = []
    bs = config.optimizer.batch_size
    with torch.no_grad():
        for start in range(0, len(samples), bs):
            chunk = samples[start:start + bs]
            prepared = [
                prepare_sample(
                    s, config,
                    detections_override=(detections_override or {}).get(s.clip_id))
                for s in chunk
            ]
            batch = collate(prepared, config)
            outs.append(model(batch, pair_override=pair_override).numpy())
    return np.concatenate(outs, axis=0)


def _as_prepared(samples, config) -> list[dict]:
    if samples and isinstance(samples[0], dict):
        return list(samples)
    return [prepare_sample(s, config) for s in samples]


# ---------------------------------------------------------------------------
# Metrics persistence
# ---------------------------------------------------------------------------

def append_metrics(path, records: Sequence[MetricsRecord]) -> None:
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(MetricsRecord(**json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, config: ExperimentConfig) -> None:
    """Single-file archive: version tag, config snapshot, named float64 arrays."""
    state = model.state_dict()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": to_dict(config),
        "params": [
            {"name": name, "shape": list(tensor.shape), "dtype": "<f8"}
            for name, tensor in state.items()
        ],
    }
    blob = io.BytesIO()
    for tensor in state.values():
        arr = tensor.detach().numpy().astype("<f8")
        blob.write(np.ascontiguousarray(arr).tobytes())
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True))
        zf.writestr("params.bin", blob.getvalue())


def load_checkpoint(path) -> tuple[InteractionReasoningNetwork, ExperimentConfig]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        raw = zf.read("params.bin")
    if manifest["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {manifest['format_version']}")
    config = from_dict(manifest["config"])
    model = build_model(config)
    state = model.state_dict()
    offset = 0
    loaded = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        target_dtype = state[entry["name"]].dtype
        loaded[entry["name"]] = torch.as_tensor(
            arr.reshape(shape).copy()).to(target_dtype)
    model.load_state_dict(loaded)
    return model, config


# ---------------------------------------------------------------------------
# Ablation registry: one row per published table row
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    table: str
    row: int
    label: str
    overrides: dict


_PAIR_MASKS = (
    "000000", "000111", "011111", "101111", "110111",
    "111000", "111011", "111101", "111110", "111111",
)
_PAIR_LABELS = (
    "no pairs", "right-hand pairs only", "drop HL-OL", "drop HL-OR",
    "drop HL-HR", "left-hand pairs only", "drop HR-OR", "drop HR-OL",
    "drop HR-HL", "all pairs",
)


def ablation_registry() -> tuple[AblationRow, ...]:
    rows: list[AblationRow] = []
    for i, (mask, label) in enumerate(zip(_PAIR_MASKS, _PAIR_LABELS), start=1):
        overrides = {} if mask == "111111" else {"interaction.pairs": mask}
        rows.append(AblationRow("interaction_components", i, label, overrides))
    right = {"interaction.pairs": "000111", "interaction.active_roles": "HR"}
    rows.extend([
        AblationRow("trajectory", 1, "middle frame, right hand",
                    {**right, "interaction.traj_mode": "middle"}),
        AblationRow("trajectory", 2, "duplicated middle, right hand",
                    {**right, "interaction.traj_mode": "duplicate"}),
        AblationRow("trajectory", 3, "trajectory, right hand", dict(right)),
        AblationRow("trajectory", 4, "trajectory, right hand + objects",
                    {"interaction.pairs": "000111",
                     "interaction.active_roles": "HR,OL,OR"}),
        AblationRow("trajectory", 5, "trajectory, both hands + objects", {}),
    ])
    rows.extend([
        AblationRow("spe", 1, "no position encoding",
                    {"interaction.spe_mode": "none"}),
        AblationRow("spe", 2, "concatenated position encoding",
                    {"interaction.spe_mode": "concat"}),
        AblationRow("spe", 3, "summed position encoding", {}),
    ])
    rows.extend([
        AblationRow("action_representation", 1, "interaction features only",
                    {"interaction.action_fusion": "none"}),
        AblationRow("action_representation", 2, "late-fusion concat",
                    {"interaction.action_fusion": "concat"}),
        AblationRow("action_representation", 3, "decoder", {}),
    ])
    rows.extend([
        AblationRow("detection_representation", 1, "MLP patch embedding",
                    {"interaction.detection_rep": "mlp"}),
        AblationRow("detection_representation", 2, "RoI pooled 3D features", {}),
    ])
    return tuple(rows)


def run_ablation_suite(base_config: ExperimentConfig,
                       train_samples: Sequence[ClipSample],
                       val_samples: Sequence[ClipSample],
                       out_dir,
                       rows: Optional[Sequence[AblationRow]] = None,
                       log: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Train and evaluate every registered row with the shared seed/budget.

    Rows whose resolved config hashes coincide share a single run. Per-row
    failures are recorded and the suite continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = list(rows if rows is not None else ablation_registry())
    cache: dict[str, MetricsRecord] = {}
    results = []
    for row in rows:
        entry = {"table": row.table, "row": row.row, "label": row.label}
        try:
            cfg = apply_overrides(base_config, row.overrides)
            chash = config_hash(cfg)
            entry["config_hash"] = chash
            if chash not in cache:
                run_dir = out_dir / "runs" / f"{row.table}_{row.row:02d}"
                model = build_model(cfg)
                history = train(model, train_samples, val_samples, cfg,
                                out_dir=run_dir, log=log)
                cache[chash] = [h for h in history if h.split == "val"][-1]
            final = cache[chash]
            entry.update(top1=final.top1, top5=final.top5, loss=final.loss)
        except Exception as exc:  # keep going; the report flags the hole
            entry["error"] = f"{type(exc).__name__}: {exc}"
        results.append(entry)
        if log is not None:
            log(f"[{row.table} row {row.row}] "
                + (f"top1={entry['top1']:.3f}" if "top1" in entry
                   else entry["error"]))
    with open(out_dir / "ablation_results.json", "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
    return results
