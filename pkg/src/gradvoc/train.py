"""Training loop: batch assembly, noise-level sampling, loss, optimization.

Each step draws a continuous noise level from the hierarchical prior (or a
uniform discrete index in compatibility mode), diffuses the clean segments in
closed form, and takes one adaptive-moment gradient step on the mean L1
distance between the drawn and predicted noise.

Determinism contract: the step-k randomness comes from a generator seeded
with (seed, k), so restoring a checkpoint reproduces the exact loss sequence
of an uninterrupted run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .diffusion import forward_diffuse
from .dsp import MelConfig, Waveform, mel_spectrogram
from .net import DenoiserModel, _config_from_meta, _config_meta
from .schedule import (
    NoiseSchedule,
    default_training_prior,
    sample_noise_level,
    schedule_from_text,
    schedule_to_text,
)
from .tensor import Tensor

__all__ = ["TrainConfig", "TrainState", "TrainError", "make_batch", "train_step",
           "evaluate_loss", "run_training", "save_state", "load_state"]

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    """Non-finite loss or inconsistent training configuration."""


@dataclass
class TrainConfig:
    training_prior: NoiseSchedule = field(default_factory=default_training_prior)
    batch_size: int = 4
    segment_samples: int = 7200
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0  # global gradient-norm clip
    max_steps: int = 1000
    seed: int = 0
    conditioning_mode: str = "continuous"  # or "discrete"
    discrete_schedule: NoiseSchedule | None = None
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.conditioning_mode not in ("continuous", "discrete"):
            raise TrainError(f"unknown conditioning mode {self.conditioning_mode!r}")
        if self.conditioning_mode == "discrete" and self.discrete_schedule is None:
            raise TrainError("discrete conditioning requires a schedule")


@dataclass
class TrainState:
    model: DenoiserModel
    config: TrainConfig
    step: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


def make_batch(
    dataset: list[Waveform],
    rng: np.random.Generator,
    batch_size: int,
    segment_samples: int,
    mel_cfg: MelConfig,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniformly crop mel-frame-aligned segments and their ground-truth mels.

    Utterances shorter than one segment are skipped with a warning.
    """
    if not dataset:
        raise TrainError("empty dataset")
    hop = mel_cfg.hop_length
    if segment_samples % hop != 0:
        raise TrainError(
            f"segment of {segment_samples} samples not divisible by hop {hop}"
        )
    usable = []
    for utt in dataset:
        if len(utt) < segment_samples:
            log.warning(
                "skipping %0.3fs utterance shorter than one %d-sample segment",
                utt.duration,
                segment_samples,
            )
            continue
        usable.append(utt)
    if not usable:
        raise TrainError("no utterance is at least one segment long")
    batch = []
    for _ in range(batch_size):
        utt = usable[int(rng.integers(len(usable)))]
        max_frame_offset = (len(utt) - segment_samples) // hop
        offset = hop * int(rng.integers(max_frame_offset + 1))
        y0 = utt.samples[offset : offset + segment_samples]
        mel = mel_spectrogram(Waveform(y0, utt.sample_rate), mel_cfg)
        batch.append((y0, mel.values))
    return batch


def _draw_noise_level(config: TrainConfig, rng: np.random.Generator) -> float:
    if config.conditioning_mode == "continuous":
        return sample_noise_level(config.training_prior, rng).sqrt_alpha_bar
    sched = config.discrete_schedule
    n = int(rng.integers(1, len(sched) + 1))
    return float(np.sqrt(sched.alpha_bars[n - 1]))


def _batch_loss(model: DenoiserModel, batch, config: TrainConfig, rng) -> Tensor:
    """Build the loss graph for one batch (mean L1 over samples and batch)."""
    per_item = []
    for idx, (y0, mel) in enumerate(batch):
        sqrt_abar = _draw_noise_level(config, rng)
        eps = rng.standard_normal(len(y0))
        point = forward_diffuse(y0, sqrt_abar, eps)
        pred = model.forward(point.y_noisy, mel, sqrt_abar)
        target = Tensor(eps.reshape(1, -1).astype(model.config.np_dtype))
        item_loss = T.mean_abs(T.sub(pred, target))
        if not np.isfinite(item_loss.data):
            raise TrainError(f"non-finite loss at batch index {idx}")
        per_item.append(item_loss)
    total = per_item[0]
    for item in per_item[1:]:
        total = T.add(total, item)
    return T.scale(total, 1.0 / len(per_item))


def train_step(
    state: TrainState, batch, rng: np.random.Generator
) -> tuple[TrainState, float]:
    """One optimization step; returns the updated state and the batch loss."""
    config = state.config
    model = state.model
    params = model.parameters()
    for p in params.values():
        p.zero_grad()

    loss = _batch_loss(model, batch, config, rng)
    loss.backward()

    # global-norm clip in float64, then adam update
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(sq)
    clip = min(1.0, config.clip_norm / norm) if norm > config.clip_norm else 1.0

    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad * clip
        m = state.adam_m.setdefault(name, np.zeros_like(p.data))
        v = state.adam_v.setdefault(name, np.zeros_like(p.data))
        m += (1 - b1) * (g - m)
        v += (1 - b2) * (g * g - v)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data = p.data - config.learning_rate * m_hat / (
            np.sqrt(v_hat) + config.adam_eps
        )
    return state, float(loss.data)


def evaluate_loss(
    model: DenoiserModel, batch, config: TrainConfig, seed: int = 12345
) -> float:
    """Loss on a fixed batch with fixed noise draws; no parameter update."""
    rng = np.random.default_rng(seed)
    return float(_batch_loss(model, batch, config, rng).data)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Generator for one training step, derived from (seed, step)."""
    return np.random.default_rng([seed, step])


def run_training(
    state: TrainState,
    dataset: list[Waveform],
    mel_cfg: MelConfig,
    loss_log_path=None,
    checkpoint_dir=None,
) -> TrainState:
    """Drive train_step up to config.max_steps, logging loss as CSV."""
    config = state.config
    spf = state.model.config.samples_per_frame
    if config.segment_samples % spf != 0:
        raise TrainError(
            f"segment_samples {config.segment_samples} not divisible by the "
            f"model's {spf} samples per mel frame"
        )
    if mel_cfg.hop_length != spf:
        raise TrainError(
            f"mel hop {mel_cfg.hop_length} != model samples-per-frame {spf}"
        )
    log_fh = open(loss_log_path, "a") if loss_log_path else None
    if log_fh and state.step == 0:
        log_fh.write("step,loss,wall_time_s\n")
    t0 = time.monotonic()
    try:
        while state.step < config.max_steps:
            rng = step_rng(config.seed, state.step + 1)
            batch = make_batch(
                dataset, rng, config.batch_size, config.segment_samples, mel_cfg
            )
            state, loss = train_step(state, batch, rng)
            if log_fh:
                log_fh.write(f"{state.step},{loss!r},{time.monotonic() - t0:.3f}\n")
                log_fh.flush()
            if (
                checkpoint_dir
                and config.checkpoint_every
                and state.step % config.checkpoint_every == 0
            ):
                save_state(Path(checkpoint_dir) / f"step{state.step:07d}.ckpt", state)
    finally:
        if log_fh:
            log_fh.close()
    return state


# -- state persistence ---------------------------------------------------------


def save_state(path, state: TrainState, mel_cfg: MelConfig | None = None) -> None:
    tensors = {f"param/{k}": v.data for k, v in state.model.parameters().items()}
    tensors.update({f"adam_m/{k}": v for k, v in state.adam_m.items()})
    tensors.update({f"adam_v/{k}": v for k, v in state.adam_v.items()})
    config = state.config
    meta = {
        "step": state.step,
        "model_config": _config_meta(state.model.config),
        "conditioning_mode": config.conditioning_mode,
        "training_prior": schedule_to_text(config.training_prior),
        "train": {
            "batch_size": config.batch_size,
            "segment_samples": config.segment_samples,
            "learning_rate": config.learning_rate,
            "adam_beta1": config.adam_beta1,
            "adam_beta2": config.adam_beta2,
            "adam_eps": config.adam_eps,
            "clip_norm": config.clip_norm,
            "max_steps": config.max_steps,
            "seed": config.seed,
            "checkpoint_every": config.checkpoint_every,
        },
    }
    if config.discrete_schedule is not None:
        meta["discrete_schedule"] = schedule_to_text(config.discrete_schedule)
    if mel_cfg is not None:
        meta["mel_config"] = mel_cfg.__dict__
    save_tensors(path, tensors, meta=meta)


def load_state(path) -> tuple[TrainState, MelConfig | None]:
    arrays, meta = load_tensors(path)
    model = DenoiserModel(_config_from_meta(meta["model_config"]), seed=0)
    params = model.parameters()
    dtype = model.config.np_dtype
    adam_m, adam_v = {}, {}
    for key, value in arrays.items():
        kind, _, name = key.partition("/")
        if kind == "param":
            params[name].data = value.astype(dtype)
        elif kind == "adam_m":
            adam_m[name] = value.astype(dtype)
        elif kind == "adam_v":
            adam_v[name] = value.astype(dtype)
    discrete = meta.get("discrete_schedule")
    config = TrainConfig(
        training_prior=schedule_from_text(meta["training_prior"]),
        conditioning_mode=meta["conditioning_mode"],
        discrete_schedule=schedule_from_text(discrete) if discrete else None,
        **meta["train"],
    )
    state = TrainState(
        model=model, config=config, step=int(meta["step"]), adam_m=adam_m, adam_v=adam_v
    )
    mel_cfg = MelConfig(**meta["mel_config"]) if "mel_config" in meta else None
    return state, mel_cfg
