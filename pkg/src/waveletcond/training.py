"""Training loop, synthetic audio-correlated data, and the ablation runner.

Everything is seed-deterministic: the same config reproduces the same
dataset bytes, parameter trajectory, and report bytes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import (
    DivergenceError,
    NoiseSchedule,
    TrainConfig,
    audio_to_windows,
    forward_diffuse,
    init_model_params,
    linear_schedule,
    unet_forward,
)
from .tensor import AdamState, Tensor, adam_step, collect_grads, ew_mul, mean_pool_all, scale, sub

FROZEN_BACKBONE_TRAINABLE_PREFIXES = ("enc.", "msm.", "sfm.")

ABLATION_VARIANTS = (
    ("w/o MSM", False, True),
    ("w/o SFM", True, False),
    ("w/o both", False, False),
    ("full", True, True),
)

TABLE_COLUMNS = ("Diversity", "BAS", "LMD", "FVD")


@dataclass
class Clip:
    """One synthetic 2-second stand-in: toy latent frames plus a raw audio track."""

    frames: np.ndarray  # (f, c, h, w)
    audio: np.ndarray   # (f * samples_per_frame,)


def make_synthetic_dataset(n: int, f: int, h: int, w: int, seed: int,
                           samples_per_frame: int = 8,
                           amplitude: float = 1.0) -> list[Clip]:
    """Clips whose mouth band of rows oscillates with a per-clip sinusoid.

    The same sinusoid, sampled at `samples_per_frame` points per frame, is
    the clip's audio track, so frames and audio are exactly correlated.
    The mouth band spans rows [h/2, 3h/4); its per-frame offset is the mean
    audio sample within that frame, scaled by the per-clip amplitude.
    """
    if n < 1 or f < 1 or h < 4 or w < 4:
        raise ValueError(f"make_synthetic_dataset: bad sizes n={n} f={f} h={h} w={w}")
    rng = np.random.default_rng(seed)
    clips = []
    mouth = slice(h // 2, h // 2 + h // 4)
    for _ in range(n):
        coarse = rng.normal(0.0, 0.5, (max(1, h // 4), max(1, w // 4)))
        base = np.kron(coarse, np.ones((4, 4)))[:h, :w]
        amp = amplitude * rng.uniform(0.5, 1.0)
        cycles = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        k = np.arange(f * samples_per_frame)
        audio = amp * np.sin(2.0 * np.pi * cycles * k / k.size + phase)
        per_frame = audio.reshape(f, samples_per_frame).mean(axis=1)
        frames = np.broadcast_to(base, (f, 1, h, w)).copy()
        frames[:, 0, mouth, :] += per_frame[:, None, None]
        clips.append(Clip(frames=frames, audio=audio))
    return clips


@dataclass
class TrainItem:
    """One training draw: a clip with its sampled timestep and noise."""

    frames: np.ndarray
    audio: np.ndarray
    t: int
    eps: np.ndarray


def train_loss(batch: list[TrainItem], params: dict[str, Tensor],
               sched: NoiseSchedule, cfg: TrainConfig) -> Tensor:
    """Noise-prediction MSE averaged over batch items and elements.

    The first frame of each clip is its reference image.
    """
    if not batch:
        raise ValueError("train_loss: empty batch")
    total = None
    for item in batch:
        z_t = forward_diffuse(item.frames, item.t, item.eps, sched)
        eps_hat = unet_forward(Tensor(z_t), item.t, audio_to_windows(item.audio, cfg),
                               item.frames[0], params, cfg)
        diff = sub(Tensor(item.eps), eps_hat)
        mse = mean_pool_all(ew_mul(diff, diff))
        total = mse if total is None else total + mse
    return scale(total, 1.0 / len(batch))


def trainable_names(params: dict[str, Tensor], cfg: TrainConfig) -> list[str]:
    if not cfg.freeze_backbone:
        return list(params)
    return [k for k in params if k.startswith(FROZEN_BACKBONE_TRAINABLE_PREFIXES)]


def train(dataset: list[Clip], cfg: TrainConfig,
          params: dict[str, Tensor] | None = None,
          on_step=None) -> tuple[dict[str, Tensor], list[float]]:
    """Seeded Adam loop over single-clip batches; returns params and the loss curve.

    Aborts with DivergenceError if the loss goes non-finite.  With
    freeze_backbone set, only the audio encoder and the two conditioning
    modules receive updates.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    sched = linear_schedule(cfg.timesteps)
    if params is None:
        params = init_model_params(cfg)
    rng = np.random.default_rng(cfg.seed)
    train_keys = trainable_names(params, cfg)
    state = AdamState({k: params[k] for k in train_keys})
    losses: list[float] = []
    for step in range(cfg.steps):
        clip = dataset[int(rng.integers(0, len(dataset)))]
        t = int(rng.integers(1, cfg.timesteps + 1))
        eps = rng.standard_normal(clip.frames.shape)
        for p in params.values():
            p.zero_grad()
        loss = train_loss([TrainItem(clip.frames, clip.audio, t, eps)], params, sched, cfg)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"train: non-finite loss {value} at step {step}")
        losses.append(value)
        loss.backward()
        grads = collect_grads({k: params[k] for k in train_keys})
        updated = adam_step({k: params[k] for k in train_keys}, grads, state, lr=cfg.lr)
        params = dict(params, **updated)
        if on_step is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            on_step(step, value)
    return params, losses


def validation_loss(dataset: list[Clip], params: dict[str, Tensor], cfg: TrainConfig,
                    seed: int = 1234, draws_per_clip: int = 4) -> float:
    """Deterministic held-out loss: fixed (t, eps) draws per clip."""
    if not dataset:
        raise ValueError("validation_loss: empty dataset")
    sched = linear_schedule(cfg.timesteps)
    rng = np.random.default_rng(seed)
    items = []
    for clip in dataset:
        for _ in range(draws_per_clip):
            t = int(rng.integers(1, cfg.timesteps + 1))
            eps = rng.standard_normal(clip.frames.shape)
            items.append(TrainItem(clip.frames, clip.audio, t, eps))
    return train_loss(items, params, sched, cfg).item()


def split_train_val(dataset: list[Clip]) -> tuple[list[Clip], list[Clip]]:
    """Hold out the trailing fifth of the clips (at least one) for validation."""
    n_val = max(1, len(dataset) // 5)
    if n_val >= len(dataset):
        raise ValueError("split_train_val: dataset too small to hold out a validation clip")
    return dataset[:-n_val], dataset[-n_val:]


def ablate(cfg: TrainConfig, on_step=None) -> dict:
    """Train {w/o MSM, w/o SFM, w/o both, full} under one seed and report.

    Rows follow the ablation-table shape; metric columns that need
    pretrained scoring networks are rendered "n/a" at desk scale, and the
    deterministic validation loss carries the comparison.
    """
    dataset = make_synthetic_dataset(cfg.n_clips, cfg.frames, cfg.height, cfg.width,
                                     seed=cfg.seed, samples_per_frame=cfg.samples_per_frame,
                                     amplitude=cfg.amplitude)
    train_clips, val_clips = split_train_val(dataset)
    rows = []
    for label, use_msm, use_sfm in ABLATION_VARIANTS:
        variant = cfg.with_flags(use_msm, use_sfm)
        params, losses = train(train_clips, variant, on_step=None if on_step is None
                               else (lambda s, v, lab=label: on_step(lab, s, v)))
        window = min(50, max(1, len(losses) // 2))
        row = {"method": label}
        row.update({col: "n/a" for col in TABLE_COLUMNS})
        row["train_loss_first"] = float(np.mean(losses[:window]))
        row["train_loss_last"] = float(np.mean(losses[-window:]))
        row["val_loss"] = validation_loss(val_clips, params, variant)
        rows.append(row)
    return {
        "report": "module-ablation",
        "columns": ["method", *TABLE_COLUMNS, "train_loss_first", "train_loss_last", "val_loss"],
        "rows": rows,
        "config": config_to_dict(cfg),
    }


def report_to_json(report: dict) -> str:
    """Byte-deterministic rendering (sorted keys, shortest-roundtrip floats)."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


# -- plain key=value config files --------------------------------------------------


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def parse_config_text(text: str) -> TrainConfig:
    """Parse `key=value` lines; blank lines and #-comments allowed, unknown keys rejected."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val, lineno)
    return TrainConfig(**values)


def _parse_value(key: str, val: str, lineno: int):
    kind = _CONFIG_FIELDS[key]
    if kind in ("bool", bool):
        low = val.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config line {lineno}: bad boolean {val!r} for {key}")
    if kind in ("int", int):
        return int(val)
    return float(val)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())
