r"""
Gradient-boosted decision stumps on logistic loss.

Thresholds are quantile bin edges of the training data. Each round fits one
weak learner to the gradient/hessian of the logistic loss with Newton leaf
values. max_depth=1 gives classic stumps; max_depth=2 chooses the root split
by full two-level lookahead, which lets the ensemble express interactions
such as XOR that a sum of one-feature stumps cannot.

A learner is stored as three (feature, threshold) tests and four leaves:

             x[f0] <= t0
            /           \
     x[f1] <= t1     x[f2] <= t2
       /     \         /     \
     LL      LR      RL      RR

An unused test has threshold +inf so every row goes left.
"""

import numpy as np
from scipy.special import expit

from models.bundle import (ModelBundle, ModelError, Task, accuracy,
                           binary_confidence, check_binary_labels)

LEAF_L2 = 1.0


def _leaf_score(G, H):
    return G * G / (H + LEAF_L2)


def _leaf_value(G, H):
    return -G / (H + LEAF_L2)


def _quantile_edges(x, n_bins):
    qs = np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[edges < x.max()]


def _split_gains(G, H, valid):
    """
    Gains of every split along the last (bin) axis. Split k sends bins <= k
    left. Returns shape (..., B-1), -inf where the split does not exist.
    """
    GL = np.cumsum(G, axis=-1)[..., :-1]
    HL = np.cumsum(H, axis=-1)[..., :-1]
    GT = G.sum(axis=-1, keepdims=True)
    HT = H.sum(axis=-1, keepdims=True)
    gains = _leaf_score(GL, HL) + _leaf_score(GT - GL, HT - HL)
    return np.where(valid, gains, -np.inf)


class _Binned(object):
    def __init__(self, X, n_bins):
        self.n, self.d = X.shape
        self.edges = [_quantile_edges(X[:, j], n_bins) for j in range(self.d)]
        self.B = max(1 + max(len(e) for e in self.edges), 2)
        self.bins = np.column_stack([np.searchsorted(e, X[:, j], side="left")
                                     for j, e in enumerate(self.edges)]).astype(np.int64)
        k = np.arange(self.B - 1)
        self.valid = np.array([k < len(e) for e in self.edges])   # (d, B-1)

    def histograms(self, g, h, rows=None):
        bins = self.bins if rows is None else self.bins[rows]
        if rows is not None:
            g, h = g[rows], h[rows]
        idx = (bins + np.arange(self.d) * self.B).ravel()
        shape = (self.d, self.B)
        G = np.bincount(idx, weights=np.repeat(g, self.d), minlength=self.d * self.B)
        H = np.bincount(idx, weights=np.repeat(h, self.d), minlength=self.d * self.B)
        return G.reshape(shape), H.reshape(shape)

    def joint_histograms(self, g, h):
        """
        J[j, j2, b, b2] = sum over rows with bin_j == b and bin_j2 == b2.
        """
        d, B = self.d, self.B
        JG = np.empty((d, d, B, B))
        JH = np.empty((d, d, B, B))
        offsets = np.arange(d) * B * B
        gw, hw = np.repeat(g, d), np.repeat(h, d)
        for j in range(d):
            idx = (self.bins[:, j:j + 1] * B + self.bins + offsets).ravel()
            JG[j] = np.bincount(idx, weights=gw, minlength=d * B * B).reshape(d, B, B)
            JH[j] = np.bincount(idx, weights=hw, minlength=d * B * B).reshape(d, B, B)
        return JG, JH

    def threshold(self, j, k):
        return float(self.edges[j][k])


def _best_single_split(binned, g, h, rows):
    """
    (feature, bin) of the best split of `rows`, or None if no split beats
    keeping them in one leaf.
    """
    if rows.sum() < 2:
        return None
    G, H = binned.histograms(g, h, rows)
    gains = _split_gains(G, H, binned.valid)
    if gains.size == 0 or not np.isfinite(gains.max()):
        return None
    j, k = np.unravel_index(np.argmax(gains), gains.shape)
    if gains[j, k] <= _leaf_score(G[0].sum(), H[0].sum()):
        return None
    return int(j), int(k)


def _best_root_lookahead(binned, g, h):
    JG, JH = binned.joint_histograms(g, h)
    valid_child = binned.valid[None, :, None, :]               # (1, d, 1, B-1)

    # CL[j, j2, k, b2]: histogram over j2's bins of rows with bin_j <= k
    CLG, CLH = np.cumsum(JG, axis=2), np.cumsum(JH, axis=2)
    TG, TH = JG.sum(axis=2, keepdims=True), JH.sum(axis=2, keepdims=True)
    CRG, CRH = TG - CLG, TH - CLH

    def best_child(CG, CH):
        keep = _leaf_score(CG[:, 0].sum(axis=-1), CH[:, 0].sum(axis=-1))   # (d, B)
        split = _split_gains(CG, CH, valid_child).max(axis=(1, 3))       # (d, B)
        return np.maximum(keep, split)

    scores = best_child(CLG, CLH) + best_child(CRG, CRH)
    scores = np.where(binned.valid, scores[:, :-1], -np.inf)
    if not np.isfinite(scores.max()):
        return None
    j, k = np.unravel_index(np.argmax(scores), scores.shape)
    return int(j), int(k)


def _fit_learner(binned, g, h, max_depth):
    features = np.zeros(3, dtype=np.int64)
    thresholds = np.full(3, np.inf)
    everyone = np.ones(binned.n, dtype=bool)

    if max_depth >= 2:
        root = _best_root_lookahead(binned, g, h)
    else:
        root = _best_single_split(binned, g, h, everyone)
    if root is None:
        value = _leaf_value(g.sum(), h.sum())
        return features, thresholds, np.full(4, value)

    features[0], thresholds[0] = root[0], binned.threshold(*root)
    left = binned.bins[:, root[0]] <= root[1]
    leaves = np.empty(4)
    for side, rows in ((0, left), (1, ~left)):
        split = _best_single_split(binned, g, h, rows) if max_depth >= 2 else None
        if split is None:
            value = _leaf_value(g[rows].sum(), h[rows].sum())
            leaves[2 * side:2 * side + 2] = value
            continue
        features[1 + side], thresholds[1 + side] = split[0], binned.threshold(*split)
        goes_left = binned.bins[:, split[0]] <= split[1]
        for leaf, mask in ((0, rows & goes_left), (1, rows & ~goes_left)):
            leaves[2 * side + leaf] = _leaf_value(g[mask].sum(), h[mask].sum())
    return features, thresholds, leaves


def _learner_outputs(X, features, thresholds, leaves):
    """
    Output of every learner on every row, shape (n, R).
    """
    root = X[:, features[:, 0]] <= thresholds[:, 0]
    left = X[:, features[:, 1]] <= thresholds[:, 1]
    right = X[:, features[:, 2]] <= thresholds[:, 2]
    return np.where(root,
                    np.where(left, leaves[:, 0], leaves[:, 1]),
                    np.where(right, leaves[:, 2], leaves[:, 3]))


def fit_stumps(X, y, n_rounds=50, max_depth=2, learning_rate=0.3, n_bins=32):
    check_binary_labels(y)
    if n_rounds < 1:
        raise ModelError("n_rounds must be >= 1")
    if max_depth not in (1, 2):
        raise ModelError("max_depth must be 1 or 2")

    prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    init = np.log(prior / (1 - prior))
    binned = _Binned(X, n_bins)
    raw = np.full(X.shape[0], init)

    features, thresholds, leaves = [], [], []
    for _ in range(n_rounds):
        p = expit(raw)
        g, h = p - y, p * (1 - p)
        f, t, v = _fit_learner(binned, g, h, max_depth)
        features.append(f)
        thresholds.append(t)
        leaves.append(v)
        raw += learning_rate * _learner_outputs(X, f[None], t[None], v[None])[:, 0]

    return {"init": np.array([init]),
            "learning_rate": np.array([learning_rate]),
            "features": np.array(features),
            "thresholds": np.array(thresholds),
            "leaves": np.array(leaves)}


def positive_probability(model, X):
    X = model.check_features(X)
    w = model.payload
    outputs = _learner_outputs(X, w["features"], w["thresholds"], w["leaves"])
    return expit(w["init"][0] + w["learning_rate"][0] * outputs.sum(axis=1))


def predict_stumps(model, X):
    return (positive_probability(model, X) > 0.5).astype(np.float64)


def confidence_stumps(model, X):
    return binary_confidence(positive_probability(model, X))


def builtin_stump_ensemble(n_rounds=50, max_depth=2, learning_rate=0.3, n_bins=32):
    if n_rounds < 1:
        raise ModelError("n_rounds must be >= 1")
    params = dict(n_rounds=n_rounds, max_depth=max_depth,
                  learning_rate=learning_rate, n_bins=n_bins)

    def train(X, y):
        return fit_stumps(X, y, **params)

    return ModelBundle(name="stump_ensemble",
                       task=Task.CLASSIFICATION,
                       train=train,
                       predict=predict_stumps,
                       confidence=confidence_stumps,
                       score=accuracy,
                       rank_score=positive_probability,
                       params=params)
