"""Desk-scale denoising-diffusion harness.

A tiny encoder-decoder UNet predicts the noise added to clips of raw toy
latents.  Audio conditioning enters through cross-attention at the
bottleneck; the conditioned audio embedding comes from the spectral module
(bypassable), and the bottleneck features pass through the self-adaptive
filter (bypassable).  Both switches only gate forward paths: parameter
construction is identical for every ablation variant under one seed.

Latent layout is (frames, channels, axis2, axis3); the spectral module
chunks along axis 2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .msm import (
    AttentionParams,
    AudioEmbedding,
    MsmParams,
    audio_attention,
    frame_tokens,
    init_attention_params,
    init_msm_params,
    msm_forward,
)
from .sfm import SfmParams, init_sfm_params, sfm_forward
from .tensor import (
    Tensor,
    add_channel_bias,
    as_tensor,
    concat,
    conv3x3,
    linear,
    nearest_upsample2,
    permute,
    relu,
    reshape,
    transpose2d,
    tslice,
)


class DivergenceError(RuntimeError):
    """Raised when training or sampling produces a non-finite value."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached cumulative products."""

    timesteps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray


def linear_schedule(timesteps: int = 50, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    if timesteps < 1:
        raise ValueError(f"linear_schedule: timesteps must be >= 1, got {timesteps}")
    betas = np.linspace(beta_start, beta_end, timesteps)
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("linear_schedule: betas must lie strictly in (0, 1)")
    alphas = 1.0 - betas
    return NoiseSchedule(timesteps=timesteps, betas=betas, alphas=alphas,
                         alpha_bars=np.cumprod(alphas))


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noising step: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps, t in [1, T]."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if not 1 <= t <= sched.timesteps:
        raise ValueError(f"forward_diffuse: t={t} outside [1, {sched.timesteps}]")
    if z0.shape != eps.shape:
        raise ValueError(f"forward_diffuse: shape mismatch {z0.shape} vs {eps.shape}")
    abar = sched.alpha_bars[t - 1]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


@dataclass
class TrainConfig:
    """Sizes, training knobs, and the two ablation switches for the toy harness."""

    frames: int = 16
    height: int = 16
    width: int = 16
    channels: int = 1
    base_channels: int = 8
    h_msm: int = 16
    d_audio: int = 8
    samples_per_frame: int = 8
    timesteps: int = 50
    lr: float = 1e-3
    steps: int = 500
    seed: int = 42
    n_clips: int = 64
    amplitude: float = 1.0
    use_msm: bool = True
    use_sfm: bool = True
    freeze_backbone: bool = False
    log_every: int = 10

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"TrainConfig: frames must be >= 1, got {self.frames}")
        if self.lr <= 0:
            raise ValueError(f"TrainConfig: lr must be positive, got {self.lr}")
        if self.height % 4 or self.width % 4:
            raise ValueError(
                f"TrainConfig: height/width must be divisible by 4, got {self.height}x{self.width}")
        if self.samples_per_frame % 2:
            raise ValueError("TrainConfig: samples_per_frame must be even")
        if self.d_audio % 2:
            raise ValueError("TrainConfig: d_audio must be even")
        if self.timesteps < 1:
            raise ValueError("TrainConfig: timesteps must be >= 1")

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)

    @property
    def audio_window(self) -> int:
        # two windows per frame: even token count for the wavelet transform
        return self.samples_per_frame // 2

    @property
    def audio_length(self) -> int:
        return 2 * self.frames

    def with_flags(self, use_msm: bool, use_sfm: bool) -> "TrainConfig":
        return replace(self, use_msm=use_msm, use_sfm=use_sfm)


def audio_to_windows(samples: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Slice a raw sample track into the (window, columns) matrix the encoder eats."""
    expected = cfg.frames * cfg.samples_per_frame
    samples = np.asarray(samples)
    if samples.shape != (expected,):
        raise ValueError(f"audio_to_windows: expected {expected} samples, got {samples.shape}")
    return samples.reshape(cfg.audio_length, cfg.audio_window).T


def init_model_params(cfg: TrainConfig, seed: int | None = None) -> dict[str, Tensor]:
    """All trainable tensors in a fixed creation order (ablation flags never alter it)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    base = cfg.base_channels
    mid = 2 * base
    f, c = cfg.frames, cfg.channels
    bott = (f, mid, cfg.height // 2, cfg.width // 2)

    def conv_w(c_out, c_in):
        std = np.sqrt(2.0 / (c_in * 9))
        return Tensor(rng.standard_normal((c_out, c_in, 3, 3)) * std, requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    params: dict[str, Tensor] = {}
    params["enc.w"] = Tensor(
        rng.standard_normal((cfg.audio_window, cfg.d_audio)) / np.sqrt(cfg.audio_window),
        requires_grad=True)
    params["enc.b"] = zeros(cfg.d_audio)
    params["unet.in_w"] = conv_w(base, 2 * c)
    params["unet.in_b"] = zeros(base)
    params["unet.temb"] = Tensor(rng.standard_normal((cfg.timesteps, base)) * 0.1,
                                 requires_grad=True)
    params["unet.down_w"] = conv_w(mid, base)
    params["unet.down_b"] = zeros(mid)
    params["unet.mid1_w"] = conv_w(mid, mid)
    params["unet.mid1_b"] = zeros(mid)
    params.update(init_attention_params(mid, cfg.d_audio, rng).named("att"))
    params["unet.mid2_w"] = conv_w(mid, mid)
    params["unet.mid2_b"] = zeros(mid)
    params["unet.up_w"] = conv_w(base, mid + base)
    params["unet.up_b"] = zeros(base)
    params["unet.out_w"] = zeros((c, base, 3, 3))
    params["unet.out_b"] = zeros(c)
    params.update(init_msm_params(cfg.latent_shape, hidden=cfg.h_msm).named("msm"))
    params.update(init_sfm_params(bott).named("sfm"))
    for name, p in params.items():
        p.name = name
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())


def encode_audio(audio_windows: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """Toy audio encoder: shared affine map per window column -> (d_audio, l)."""
    cols = Tensor(np.asarray(audio_windows).T)  # (l, window)
    return transpose2d(linear(cols, params["enc.w"], params["enc.b"]))


def unet_forward(z_t: Tensor, t: int, audio_windows: np.ndarray, ref_frame: np.ndarray,
                 params: dict[str, Tensor], cfg: TrainConfig) -> Tensor:
    """Predict the noise in z_t; output shape equals input shape.

    use_msm=False feeds the raw audio embedding to the attention block;
    use_sfm=False passes bottleneck features through untouched.
    """
    z_t = as_tensor(z_t)
    if z_t.shape != cfg.latent_shape:
        raise ValueError(f"unet_forward: latent shape {z_t.shape} != {cfg.latent_shape}")
    if not 1 <= t <= cfg.timesteps:
        raise ValueError(f"unet_forward: t={t} outside [1, {cfg.timesteps}]")
    ref_frame = np.asarray(ref_frame)
    if ref_frame.shape != cfg.latent_shape[1:]:
        raise ValueError(
            f"unet_forward: reference frame shape {ref_frame.shape} != {cfg.latent_shape[1:]}")

    embedding = encode_audio(audio_windows, params)
    if cfg.use_msm:
        audio = AudioEmbedding(embedding, frames=cfg.frames)
        conditioned = msm_forward(audio, z_t, MsmParams.from_named(params))
    else:
        conditioned = embedding
    tokens = frame_tokens(conditioned, cfg.frames)

    ref = Tensor(np.broadcast_to(ref_frame, cfg.latent_shape).copy())
    x = concat([z_t, ref], axis=1)

    h1 = conv3x3(x, params["unet.in_w"])
    h1 = add_channel_bias(h1, params["unet.in_b"])
    h1 = add_channel_bias(h1, tslice(params["unet.temb"], t - 1))
    h1 = relu(h1)

    h2 = relu(add_channel_bias(conv3x3(h1, params["unet.down_w"], stride=2),
                               params["unet.down_b"]))
    m = relu(add_channel_bias(conv3x3(h2, params["unet.mid1_w"]), params["unet.mid1_b"]))

    f, cmid, hb, wb = m.shape
    vid_tokens = reshape(permute(m, (0, 2, 3, 1)), (f * hb * wb, cmid))
    vid_tokens = audio_attention(vid_tokens, tokens, AttentionParams.from_named(params))
    m = permute(reshape(vid_tokens, (f, hb, wb, cmid)), (0, 3, 1, 2))

    m = relu(add_channel_bias(conv3x3(m, params["unet.mid2_w"]), params["unet.mid2_b"]))
    if cfg.use_sfm:
        m = sfm_forward(m, SfmParams.from_named(params))

    up = concat([nearest_upsample2(m), h1], axis=1)
    d = relu(add_channel_bias(conv3x3(up, params["unet.up_w"]), params["unet.up_b"]))
    return add_channel_bias(conv3x3(d, params["unet.out_w"]), params["unet.out_b"])


def sample(params: dict[str, Tensor], audio_windows: np.ndarray, ref_frame: np.ndarray,
           sched: NoiseSchedule, cfg: TrainConfig, seed: int) -> np.ndarray:
    """Ancestral sampling from pure noise down to the z0 estimate.

    Deterministic given the seed; raises DivergenceError (with the step
    index) if any intermediate goes non-finite.
    """
    if sched.timesteps != cfg.timesteps:
        raise ValueError(
            f"sample: schedule has {sched.timesteps} steps but config expects {cfg.timesteps}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(cfg.latent_shape)
    for t in range(sched.timesteps, 0, -1):
        eps_hat = unet_forward(Tensor(z), t, audio_windows, ref_frame, params, cfg).data
        beta = sched.betas[t - 1]
        alpha = sched.alphas[t - 1]
        abar = sched.alpha_bars[t - 1]
        mean = (z - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            abar_prev = sched.alpha_bars[t - 2]
            var = beta * (1.0 - abar_prev) / (1.0 - abar)
            z = mean + np.sqrt(var) * rng.standard_normal(cfg.latent_shape)
        else:
            z = mean
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"sample: non-finite latent at step t={t}")
    return z
