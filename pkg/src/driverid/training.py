"""Triplet-loss optimization of the encoder, plus a cross-entropy ablation mode.

Each training example is a triplet (anchor, positive, negative): the positive
comes from the anchor's driver, the negative from a different driver.  The
hinge max(0, D_ap^2 - D_an^2 + margin) on squared embedding distances pulls
same-driver windows together and pushes different drivers at least ``margin``
apart.  Optimization is Adam with a multiplicative per-epoch learning-rate
decay.  In cross-entropy mode a linear head over the embedding replaces the
triplet objective and is discarded afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .encoder import EncoderConfig, EncoderParams, build_encoder, forward_batch
from .errors import ConfigurationError, DataError, ShapeMismatchError, TrainingDivergedError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4e-4
    decay: float = 0.975
    margin: float = 1.0
    batch_size: int = 32
    epochs: int = 2
    seed: int = 0
    mode: str = "triplet"  # "triplet" | "cross_entropy"
    mining: str = "random"  # "random" | "semi_hard"

    def validate(self) -> "TrainConfig":
        if self.margin <= 0:
            raise ConfigurationError(f"margin must be positive, got {self.margin}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.mode not in ("triplet", "cross_entropy"):
            raise ConfigurationError(f"unknown training mode {self.mode!r}")
        if self.mining not in ("random", "semi_hard"):
            raise ConfigurationError(f"unknown mining strategy {self.mining!r}")
        return self


@dataclass(frozen=True)
class Triplet:
    anchor: object
    positive: object
    negative: object


def triplet_loss(e_r: nm.Tensor, e_p: nm.Tensor, e_n: nm.Tensor,
                 margin: float) -> nm.Tensor:
    """max(0, |e_r-e_p|^2 - |e_r-e_n|^2 + margin) for three equal-length vectors."""
    if not (e_r.data.shape == e_p.data.shape == e_n.data.shape):
        raise ShapeMismatchError(
            f"triplet_loss: shapes {e_r.data.shape}, {e_p.data.shape}, {e_n.data.shape}")
    d_rp = nm.squared_l2_distance(e_r, e_p)
    d_rn = nm.squared_l2_distance(e_r, e_n)
    return nm.relu(nm.add_scalar(nm.sub(d_rp, d_rn), margin))


def batched_triplet_loss(e_r: nm.Tensor, e_p: nm.Tensor, e_n: nm.Tensor,
                         margin: float) -> nm.Tensor:
    """Mean hinge over the rows of three [B, D] embedding blocks."""
    d_rp = nm.squared_l2_distance_rows(e_r, e_p)
    d_rn = nm.squared_l2_distance_rows(e_r, e_n)
    return nm.mean_all(nm.relu(nm.add_scalar(nm.sub(d_rp, d_rn), margin)))


def sample_triplets(windows: Sequence, batch_size: int,
                    rng: np.random.Generator) -> list[Triplet]:
    """Uniform anchors; positive from the anchor's driver (another window);
    negative from any other driver's windows."""
    by_driver: dict = {}
    for w in windows:
        by_driver.setdefault(w.driver, []).append(w)
    if len(by_driver) < 2:
        raise DataError(f"triplet sampling needs at least 2 drivers, got {len(by_driver)}")
    for driver, ws in by_driver.items():
        if len(ws) < 2:
            raise DataError(
                f"driver {driver!r} has only {len(ws)} window(s); need at least 2")
    triplets = []
    n = len(windows)
    for _ in range(batch_size):
        anchor = windows[rng.integers(n)]
        same = by_driver[anchor.driver]
        while True:
            positive = same[rng.integers(len(same))]
            if positive is not anchor:
                break
        while True:
            negative = windows[rng.integers(n)]
            if negative.driver != anchor.driver:
                break
        triplets.append(Triplet(anchor, positive, negative))
    return triplets


class AdamState:
    """First/second moment buffers aligned with a fixed parameter list."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: Sequence[nm.Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0


def adam_step(params: Sequence[nm.Tensor], grads: Sequence[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainResult:
    params: EncoderParams
    history: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    head: tuple[np.ndarray, np.ndarray] | None = None


def _stack(windows: Sequence) -> np.ndarray:
    return np.ascontiguousarray(np.stack([w.frames for w in windows]))


def train(train_windows: Sequence, enc_cfg: EncoderConfig,
          cfg: TrainConfig) -> TrainResult:
    """Optimize encoder parameters on one split of windows.

    An epoch runs round(N / batch_size) batches so each window is expected
    once as an anchor.  The learning rate is multiplied by ``decay`` after
    every epoch.  Raises TrainingDivergedError on a non-finite loss.
    """
    enc_cfg.validate()
    cfg.validate()
    params = build_encoder(enc_cfg, cfg.seed)
    result = TrainResult(params=params)
    if cfg.epochs == 0:
        return result

    rng = np.random.default_rng(cfg.seed)
    drop_rng = nm.CounterRng(cfg.seed)
    opt_params = params.parameters()

    head_w = head_b = None
    drivers = sorted({w.driver for w in train_windows})
    if cfg.mode == "cross_entropy":
        k = len(drivers)
        if k < 2:
            raise DataError("cross-entropy mode needs at least 2 drivers")
        std = np.sqrt(2.0 / enc_cfg.embedding_size)
        head_w = nm.tensor(rng.standard_normal((enc_cfg.embedding_size, k)) * std,
                           requires_grad=True)
        head_b = nm.tensor(np.zeros(k), requires_grad=True)
        opt_params = opt_params + [head_w, head_b]
        label_of = {d: i for i, d in enumerate(drivers)}

    state = AdamState(opt_params)
    n = len(train_windows)
    n_batches = max(1, round(n / cfg.batch_size))

    for epoch in range(cfg.epochs):
        # recomputed (not accumulated) so the rate is exactly lr0 * decay^k
        lr = cfg.learning_rate * cfg.decay ** epoch
        result.learning_rates.append(lr)
        batch_losses = []
        for batch_idx in range(n_batches):
            if cfg.mode == "triplet":
                triplets = sample_triplets(train_windows, cfg.batch_size, rng)
                if cfg.mining == "semi_hard":
                    triplets = _mine_semi_hard(
                        triplets, train_windows, params, enc_cfg, cfg, rng)
            else:
                idx = rng.integers(n, size=cfg.batch_size)
                batch = [train_windows[i] for i in idx]
            with nm.Tape():
                if cfg.mode == "triplet":
                    e_a = forward_batch(params, enc_cfg,
                                        _stack([t.anchor for t in triplets]),
                                        training=True, rng=drop_rng)
                    e_p = forward_batch(params, enc_cfg,
                                        _stack([t.positive for t in triplets]),
                                        training=True, rng=drop_rng)
                    e_n = forward_batch(params, enc_cfg,
                                        _stack([t.negative for t in triplets]),
                                        training=True, rng=drop_rng)
                    loss = batched_triplet_loss(e_a, e_p, e_n, cfg.margin)
                else:
                    embs = forward_batch(params, enc_cfg, _stack(batch),
                                         training=True, rng=drop_rng)
                    logits = nm.linear(embs, head_w, head_b)
                    labels = np.array([label_of[w.driver] for w in batch])
                    loss = nm.softmax_cross_entropy(logits, labels)

                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {batch_idx}, lr {lr:.3e}")
                nm.backward(loss)
            grads = [p.grad for p in opt_params]
            adam_step(opt_params, grads, state, lr)
            for p in opt_params:
                p.grad = None
            batch_losses.append(loss_value)
        result.history.append(float(np.mean(batch_losses)))

    if head_w is not None:
        result.head = (head_w.data, head_b.data)
    return result


def _mine_semi_hard(triplets, train_windows, params, enc_cfg, cfg, rng,
                    pool: int = 4):
    """Replace each random negative with a semi-hard one from a sampled pool:
    prefer the closest negative farther than the positive, else the closest."""
    from .encoder import embed_batch

    anchors = [t.anchor for t in triplets]
    e_a = embed_batch(params, enc_cfg, _stack(anchors))
    e_pos = embed_batch(params, enc_cfg, _stack([t.positive for t in triplets]))
    d_ap = np.sum((e_a - e_pos) ** 2, axis=1)

    n = len(train_windows)
    new = []
    for i, t in enumerate(triplets):
        cands = []
        while len(cands) < pool:
            w = train_windows[rng.integers(n)]
            if w.driver != t.anchor.driver:
                cands.append(w)
        e_c = embed_batch(params, enc_cfg, _stack(cands))
        d_an = np.sum((e_c - e_a[i][None, :]) ** 2, axis=1)
        beyond = np.nonzero(d_an > d_ap[i])[0]
        pick = beyond[np.argmin(d_an[beyond])] if beyond.size else int(np.argmin(d_an))
        new.append(Triplet(t.anchor, t.positive, cands[int(pick)]))
    return new
