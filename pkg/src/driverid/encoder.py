"""Behavior-embedding network: dilated-causal TCN plus Haar wavelet branch.

A window of C channels by L frames runs through a stack of residual blocks
of causal dilated convolutions (dilation doubling per level); the hidden
vector at the last frame goes through a linear layer to the TCN part of the
embedding.  In parallel, the window's one-level Haar approximation and
detail vectors each pass through their own linear layer.  The three parts
concatenate to the final embedding: [tcn | approx | detail], 62 dimensions
at the default configuration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nm
from . import wavelet
from .errors import ConfigurationError, ShapeMismatchError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 31
    kernel_size: int = 16
    levels: int = 6
    hidden_channels: int = 32
    tcn_embedding: int = 32
    wavelet_embedding_per_branch: int = 15
    dropout_p: float = 0.1
    window_length: int = 1000

    @property
    def receptive_field(self) -> int:
        # two convs per block, dilations 2^0 .. 2^(levels-1)
        return 1 + 2 * (self.kernel_size - 1) * (2 ** self.levels - 1)

    @property
    def embedding_size(self) -> int:
        return self.tcn_embedding + 2 * self.wavelet_embedding_per_branch

    @property
    def wavelet_input_size(self) -> int:
        return self.in_channels * self.window_length // 2

    def validate(self) -> "EncoderConfig":
        for name in ("in_channels", "kernel_size", "levels", "hidden_channels",
                     "tcn_embedding", "wavelet_embedding_per_branch", "window_length"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.window_length % 2 != 0:
            raise ConfigurationError(f"window_length must be even, got {self.window_length}")
        if self.receptive_field < self.window_length:
            raise ConfigurationError(
                f"receptive field {self.receptive_field} does not cover the "
                f"window length {self.window_length}; add levels or widen the kernel")
        return self


@dataclass
class BlockParams:
    w1: nm.Tensor
    b1: nm.Tensor
    w2: nm.Tensor
    b2: nm.Tensor
    res_w: nm.Tensor | None = None
    res_b: nm.Tensor | None = None


@dataclass
class EncoderParams:
    blocks: list[BlockParams]
    out_w: nm.Tensor
    out_b: nm.Tensor
    approx_w: nm.Tensor
    approx_b: nm.Tensor
    detail_w: nm.Tensor
    detail_b: nm.Tensor

    def named_parameters(self) -> list[tuple[str, nm.Tensor]]:
        out = []
        for i, blk in enumerate(self.blocks):
            out += [(f"blocks.{i}.w1", blk.w1), (f"blocks.{i}.b1", blk.b1),
                    (f"blocks.{i}.w2", blk.w2), (f"blocks.{i}.b2", blk.b2)]
            if blk.res_w is not None:
                out += [(f"blocks.{i}.res_w", blk.res_w), (f"blocks.{i}.res_b", blk.res_b)]
        out += [("out_w", self.out_w), ("out_b", self.out_b),
                ("approx_w", self.approx_w), ("approx_b", self.approx_b),
                ("detail_w", self.detail_w), ("detail_b", self.detail_b)]
        return out

    def parameters(self) -> list[nm.Tensor]:
        return [t for _, t in self.named_parameters()]


def build_encoder(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """He-style fan-in initialization; deterministic for a given seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    def conv_w(c_out, c_in, k):
        std = np.sqrt(2.0 / (c_in * k))
        return nm.tensor(rng.standard_normal((c_out, c_in, k)) * std, requires_grad=True)

    def lin_w(n_in, n_out):
        std = np.sqrt(2.0 / n_in)
        return nm.tensor(rng.standard_normal((n_in, n_out)) * std, requires_grad=True)

    def zeros(*shape):
        return nm.tensor(np.zeros(shape), requires_grad=True)

    blocks = []
    c_in = cfg.in_channels
    for _ in range(cfg.levels):
        blk = BlockParams(
            w1=conv_w(cfg.hidden_channels, c_in, cfg.kernel_size),
            b1=zeros(cfg.hidden_channels),
            w2=conv_w(cfg.hidden_channels, cfg.hidden_channels, cfg.kernel_size),
            b2=zeros(cfg.hidden_channels),
        )
        if c_in != cfg.hidden_channels:
            blk.res_w = conv_w(cfg.hidden_channels, c_in, 1)
            blk.res_b = zeros(cfg.hidden_channels)
        blocks.append(blk)
        c_in = cfg.hidden_channels

    wav_in = cfg.wavelet_input_size
    return EncoderParams(
        blocks=blocks,
        out_w=lin_w(cfg.hidden_channels, cfg.tcn_embedding),
        out_b=zeros(cfg.tcn_embedding),
        approx_w=lin_w(wav_in, cfg.wavelet_embedding_per_branch),
        approx_b=zeros(cfg.wavelet_embedding_per_branch),
        detail_w=lin_w(wav_in, cfg.wavelet_embedding_per_branch),
        detail_b=zeros(cfg.wavelet_embedding_per_branch),
    )


def residual_block(blk: BlockParams, x: nm.Tensor, dilation: int,
                   dropout_p: float = 0.0, training: bool = False,
                   rng: nm.CounterRng | None = None) -> nm.Tensor:
    """relu(residual(x) + conv2(relu(conv1(x)))), dropout after each relu."""
    h = nm.relu(nm.conv1d_causal(x, blk.w1, blk.b1, dilation))
    if training and dropout_p > 0.0:
        h = nm.dropout(h, dropout_p, training, rng)
    h = nm.conv1d_causal(h, blk.w2, blk.b2, dilation)
    res = x if blk.res_w is None else nm.conv1d_causal(x, blk.res_w, blk.res_b, 1)
    out = nm.relu(nm.add(res, h))
    if training and dropout_p > 0.0:
        out = nm.dropout(out, dropout_p, training, rng)
    return out


def forward_batch(params: EncoderParams, cfg: EncoderConfig, frames: np.ndarray,
                  training: bool = False, rng: nm.CounterRng | None = None) -> nm.Tensor:
    """Embed a [B, C, L] batch; differentiable when run under an active tape."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1] != cfg.in_channels \
            or frames.shape[2] != cfg.window_length:
        raise ShapeMismatchError(
            f"expected [B, {cfg.in_channels}, {cfg.window_length}] frames, "
            f"got {frames.shape}")
    if training and cfg.dropout_p > 0.0 and rng is None:
        raise ConfigurationError("training-mode forward needs a dropout rng")

    h = nm.tensor(frames)
    for lvl, blk in enumerate(params.blocks):
        h = residual_block(blk, h, 2 ** lvl, cfg.dropout_p, training, rng)
    tcn = nm.linear(nm.last_frame(h), params.out_w, params.out_b)

    approx, detail = wavelet.batch_wavelet_features(frames)
    wav_a = nm.linear(nm.tensor(approx), params.approx_w, params.approx_b)
    wav_d = nm.linear(nm.tensor(detail), params.detail_w, params.detail_b)
    return nm.concat_features([tcn, wav_a, wav_d])


def embed(params: EncoderParams, cfg: EncoderConfig, frames: np.ndarray) -> np.ndarray:
    """Eval-mode embedding of one [C, L] window; returns a plain vector."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeMismatchError(f"expected a [C, L] window, got {frames.shape}")
    return forward_batch(params, cfg, frames[None], training=False).data[0]


def embed_batch(params: EncoderParams, cfg: EncoderConfig, frames: np.ndarray,
                chunk: int = 64) -> np.ndarray:
    """Eval-mode embeddings for a [B, C, L] stack, computed in chunks."""
    frames = np.asarray(frames, dtype=np.float64)
    rows = []
    for lo in range(0, frames.shape[0], chunk):
        rows.append(forward_batch(params, cfg, frames[lo:lo + chunk], training=False).data)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, cfg.embedding_size))


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(path, cfg: EncoderConfig, params: EncoderParams) -> None:
    arrays = {name: t.data for name, t in params.named_parameters()}
    np.savez(path,
             __version__=np.array(CHECKPOINT_VERSION),
             __config__=np.array(json.dumps(asdict(cfg), sort_keys=True)),
             **arrays)


def load_checkpoint(path, expected: EncoderConfig | None = None
                    ) -> tuple[EncoderConfig, EncoderParams]:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        cfg = EncoderConfig(**json.loads(str(z["__config__"])))
        if expected is not None and expected != cfg:
            raise ConfigurationError(
                f"checkpoint config {cfg} does not match expected {expected}")
        params = build_encoder(cfg, seed=0)
        stored = {k: z[k] for k in z.files if not k.startswith("__")}
    names = [name for name, _ in params.named_parameters()]
    if set(names) != set(stored):
        missing = set(names) ^ set(stored)
        raise ConfigurationError(f"checkpoint parameter set mismatch: {sorted(missing)}")
    for name, t in params.named_parameters():
        if stored[name].shape != t.data.shape:
            raise ConfigurationError(
                f"checkpoint array {name} has shape {stored[name].shape}, "
                f"config implies {t.data.shape}")
        t.data = stored[name].astype(np.float64)
    return cfg, params


def with_channels(cfg: EncoderConfig, in_channels: int) -> EncoderConfig:
    """Config rebuilt for a reduced channel count (feature ablations)."""
    return replace(cfg, in_channels=in_channels).validate()
