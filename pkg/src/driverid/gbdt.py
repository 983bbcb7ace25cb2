"""Multiclass gradient-boosted decision trees over embedding features.

Histogram-based splits (equal-frequency bins computed on the training data),
leaf-wise growth bounded by a leaf budget and a depth cap, one regression
tree per class per boosting round on the softmax gradient/hessian, Newton
leaf values shrunk by the learning rate.  Row bagging is drawn once per
round, feature subsampling once per tree, both from the model seed, so a
fit is a pure function of (data, config).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, InvalidParameterError

MODEL_FORMAT_VERSION = 1

#: Sentinel returned by restricted prediction when certainty is below threshold.
UNCERTAIN = -1


@dataclass(frozen=True)
class GbdtConfig:
    num_leaves: int = 31
    num_trees: int = 100
    max_depth: int = 12
    feature_fraction: float = 0.8
    bagging_fraction: float = 0.9
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    lambda_l2: float = 1.0
    num_bins: int = 64
    seed: int = 0

    def validate(self) -> "GbdtConfig":
        if self.num_leaves < 2:
            raise ConfigurationError(f"num_leaves must be >= 2, got {self.num_leaves}")
        if self.max_depth < 1:
            raise ConfigurationError(f"max_depth must be >= 1, got {self.max_depth}")
        for name in ("feature_fraction", "bagging_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1], got {v}")
        if self.num_trees < 0 or self.num_bins < 2 or self.min_samples_leaf < 1:
            raise ConfigurationError("num_trees >= 0, num_bins >= 2, min_samples_leaf >= 1 required")
        if self.lambda_l2 < 0 or self.learning_rate <= 0:
            raise ConfigurationError("lambda_l2 >= 0 and learning_rate > 0 required")
        return self


def softmax(raw: np.ndarray) -> np.ndarray:
    z = raw - raw.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_hess(raw_scores: np.ndarray, label: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class gradient p - 1{k==label} and hessian p(1-p) of multi-logloss."""
    p = softmax(np.asarray(raw_scores, dtype=np.float64))
    g = p.copy()
    g[label] -= 1.0
    return g, p * (1.0 - p)


@dataclass
class RegressionTree:
    """Flat node arrays; feature < 0 marks a leaf.  Routing: x < threshold -> left."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int32)
        rows = np.arange(x.shape[0])
        while True:
            feat = self.feature[node]
            interior = feat >= 0
            if not interior.any():
                return self.value[node]
            go_left = np.zeros(x.shape[0], dtype=bool)
            idx = rows[interior]
            go_left[idx] = x[idx, feat[interior]] < self.threshold[node[interior]]
            node = np.where(interior, np.where(go_left, self.left[node], self.right[node]), node)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def max_depth_reached(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int32)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if len(depth) else 0


@dataclass
class GbdtModel:
    config: GbdtConfig
    n_classes: int
    boundaries: list[np.ndarray]
    trees: list[list[RegressionTree]]  # [round][class]
    init_scores: np.ndarray
    train_logloss: list[float] = field(default_factory=list)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        raw = np.tile(self.init_scores, (x.shape[0], 1))
        for per_class in self.trees:
            for k, tree in enumerate(per_class):
                raw[:, k] += tree.predict(x)
        return raw

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.predict_raw(x))


class _Leaf:
    __slots__ = ("node", "rows", "depth", "hist_g", "hist_h", "hist_c",
                 "gain", "split_feat", "split_bin")

    def __init__(self, node, rows, depth, hist_g, hist_h, hist_c):
        self.node = node
        self.rows = rows
        self.depth = depth
        self.hist_g = hist_g
        self.hist_h = hist_h
        self.hist_c = hist_c
        self.gain = -np.inf
        self.split_feat = -1
        self.split_bin = -1


def _histograms(codes_sub, rows, g, h, nb):
    n_feat = codes_sub.shape[1]
    flat = (codes_sub[rows] + np.arange(n_feat) * nb).ravel()
    size = n_feat * nb
    hg = np.bincount(flat, weights=np.repeat(g[rows], n_feat), minlength=size)
    hh = np.bincount(flat, weights=np.repeat(h[rows], n_feat), minlength=size)
    hc = np.bincount(flat, minlength=size)
    return (hg.reshape(n_feat, nb), hh.reshape(n_feat, nb),
            hc.reshape(n_feat, nb).astype(np.int64))


def _best_split(leaf: _Leaf, n_bounds, lam, min_leaf):
    """Fill the leaf's best split from its histograms; gain stays -inf if none."""
    gl = np.cumsum(leaf.hist_g, axis=1)
    hl = np.cumsum(leaf.hist_h, axis=1)
    cl = np.cumsum(leaf.hist_c, axis=1)
    gt = gl[:, -1:]
    ht = hl[:, -1:]
    ct = cl[:, -1:]
    gr = gt - gl
    hr = ht - hl
    cr = ct - cl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - gt ** 2 / (ht + lam))
    nb = leaf.hist_g.shape[1]
    valid = (cl >= min_leaf) & (cr >= min_leaf)
    valid &= np.arange(nb)[None, :] < (n_bounds[:, None])
    gain = np.where(valid, gain, -np.inf)
    best = int(np.argmax(gain))
    f, b = divmod(best, nb)
    if np.isfinite(gain[f, b]) and gain[f, b] > 0.0:
        leaf.gain = float(gain[f, b])
        leaf.split_feat = f
        leaf.split_bin = b


def _grow_tree(codes_sub, feats, boundaries, rows, g, h, cfg: GbdtConfig):
    """Leaf-wise growth: always split the leaf with the largest gain."""
    nb = cfg.num_bins
    lam = cfg.lambda_l2
    n_bounds = np.array([len(boundaries[j]) for j in feats])

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    hg, hh, hc = _histograms(codes_sub, rows, g, h, nb)
    root = _Leaf(0, rows, 0, hg, hh, hc)
    if root.depth < cfg.max_depth:
        _best_split(root, n_bounds, lam, cfg.min_samples_leaf)
    leaves = [root]

    while len(leaves) < cfg.num_leaves:
        pick = None
        for leaf in leaves:
            if leaf.split_feat >= 0 and (pick is None or leaf.gain > pick.gain):
                pick = leaf
        if pick is None:
            break
        f, b = pick.split_feat, pick.split_bin
        go_left = codes_sub[pick.rows, f] <= b
        rows_l = pick.rows[go_left]
        rows_r = pick.rows[~go_left]

        node_l = len(feature)
        node_r = node_l + 1
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        feature[pick.node] = int(feats[f])
        threshold[pick.node] = float(boundaries[feats[f]][b])
        left[pick.node] = node_l
        right[pick.node] = node_r

        # smaller child gets a fresh histogram, sibling by subtraction
        if len(rows_l) <= len(rows_r):
            hg_l, hh_l, hc_l = _histograms(codes_sub, rows_l, g, h, nb)
            hg_r, hh_r, hc_r = pick.hist_g - hg_l, pick.hist_h - hh_l, pick.hist_c - hc_l
        else:
            hg_r, hh_r, hc_r = _histograms(codes_sub, rows_r, g, h, nb)
            hg_l, hh_l, hc_l = pick.hist_g - hg_r, pick.hist_h - hh_r, pick.hist_c - hc_r

        child_l = _Leaf(node_l, rows_l, pick.depth + 1, hg_l, hh_l, hc_l)
        child_r = _Leaf(node_r, rows_r, pick.depth + 1, hg_r, hh_r, hc_r)
        for child in (child_l, child_r):
            if child.depth < cfg.max_depth and len(child.rows) >= 2 * cfg.min_samples_leaf:
                _best_split(child, n_bounds, lam, cfg.min_samples_leaf)
        leaves[leaves.index(pick)] = child_l
        leaves.append(child_r)

    for leaf in leaves:
        g_sum = float(g[leaf.rows].sum())
        h_sum = float(h[leaf.rows].sum())
        denom = h_sum + lam
        value[leaf.node] = (-g_sum / denom * cfg.learning_rate) if denom > 0 else 0.0

    return RegressionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )


def _equal_frequency_boundaries(col: np.ndarray, num_bins: int) -> np.ndarray:
    qs = np.quantile(col, np.arange(1, num_bins) / num_bins)
    return np.unique(qs)


def fit(x: np.ndarray, y: np.ndarray, cfg: GbdtConfig,
        n_classes: int | None = None) -> GbdtModel:
    """Boost cfg.num_trees rounds of K regression trees on (x, y)."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"X {x.shape} and y {y.shape} are inconsistent")
    if not np.isfinite(x).all():
        raise DataError("X contains non-finite features")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.min() < 0 or y.max() >= k:
        raise DataError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    n = x.shape[0]
    if n < k:
        raise DataError(f"need at least as many samples ({n}) as classes ({k})")

    n_features = x.shape[1]
    boundaries = [_equal_frequency_boundaries(x[:, j], cfg.num_bins)
                  for j in range(n_features)]
    codes = np.empty((n, n_features), dtype=np.int32)
    for j in range(n_features):
        codes[:, j] = np.searchsorted(boundaries[j], x[:, j], side="right")

    rng = np.random.default_rng(cfg.seed)
    raw = np.zeros((n, k))
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    model = GbdtModel(config=cfg, n_classes=k, boundaries=boundaries,
                      trees=[], init_scores=np.zeros(k))
    n_bag = max(1, int(round(cfg.bagging_fraction * n)))
    n_feat_sub = max(1, int(round(cfg.feature_fraction * n_features)))

    for _ in range(cfg.num_trees):
        p = softmax(raw)
        grad = p - onehot
        hess = p * (1.0 - p)
        if cfg.bagging_fraction < 1.0:
            bag = np.sort(rng.choice(n, size=n_bag, replace=False))
        else:
            bag = np.arange(n)
        per_class = []
        for cls in range(k):
            if cfg.feature_fraction < 1.0:
                feats = np.sort(rng.choice(n_features, size=n_feat_sub, replace=False))
            else:
                feats = np.arange(n_features)
            tree = _grow_tree(codes[:, feats], feats, boundaries, bag,
                              grad[:, cls], hess[:, cls], cfg)
            raw[:, cls] += tree.predict(x)
            per_class.append(tree)
        model.trees.append(per_class)
        p = softmax(raw)
        model.train_logloss.append(
            float(-np.log(np.clip(p[np.arange(n), y], 1e-300, None)).mean()))

    return model


def predict_proba(model: GbdtModel, x: np.ndarray) -> np.ndarray:
    return model.predict_proba(np.asarray(x, dtype=np.float64))


def restricted_argmax(prob_row: np.ndarray, candidates, threshold: float) -> int:
    """Argmax over a candidate subset, or UNCERTAIN when the subset's total
    probability falls below the threshold.  Ties go to the smallest label."""
    cands = np.sort(np.asarray(list(candidates), dtype=np.int64))
    if cands.size == 0:
        raise InvalidParameterError("candidate set must be nonempty")
    sub = prob_row[cands]
    if sub.sum() < threshold:
        return UNCERTAIN
    return int(cands[int(np.argmax(sub))])


def predict_restricted(model: GbdtModel, x: np.ndarray, candidates,
                       threshold: float = 0.0) -> int:
    """Restricted prediction for one sample (see :func:`restricted_argmax`)."""
    cands = list(candidates)
    if any(c < 0 or c >= model.n_classes for c in cands):
        raise InvalidParameterError(
            f"candidates {sorted(cands)} outside [0, {model.n_classes})")
    probs = model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0]
    return restricted_argmax(probs, cands, threshold)


# -- persistence --------------------------------------------------------------

def save_model(model: GbdtModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "n_classes": model.n_classes,
        "init_scores": model.init_scores.tolist(),
        "boundaries": [b.tolist() for b in model.boundaries],
        "train_logloss": model.train_logloss,
        "trees": [[{
            "feature": t.feature.tolist(),
            "threshold": t.threshold.tolist(),
            "left": t.left.tolist(),
            "right": t.right.tolist(),
            "value": t.value.tolist(),
        } for t in per_class] for per_class in model.trees],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> GbdtModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported model format version {doc.get('format_version')}")
    trees = [[RegressionTree(
        feature=np.array(t["feature"], dtype=np.int32),
        threshold=np.array(t["threshold"], dtype=np.float64),
        left=np.array(t["left"], dtype=np.int32),
        right=np.array(t["right"], dtype=np.int32),
        value=np.array(t["value"], dtype=np.float64),
    ) for t in per_class] for per_class in doc["trees"]]
    return GbdtModel(
        config=GbdtConfig(**doc["config"]),
        n_classes=int(doc["n_classes"]),
        boundaries=[np.array(b, dtype=np.float64) for b in doc["boundaries"]],
        trees=trees,
        init_scores=np.array(doc["init_scores"], dtype=np.float64),
        train_logloss=list(doc["train_logloss"]),
    )
