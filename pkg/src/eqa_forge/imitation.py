"""Inflection-weighted behavior cloning.

Expert action streams are dominated by repeats, so a plain
cross-entropy clone can score well while missing every transition
between actions. Steps where the action changes (plus the first step of
each trajectory) are inflections; weighting them by the inverse
inflection frequency N/n_I rebalances the loss. Both policy kinds ship
with fully analytic gradients: a reactive affine head over a sliding
feature window and a gated recurrence trained by backprop through time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import N_ACTIONS
from .tensor_store import load_tensors, save_tensors


@dataclass(frozen=True)
class InflectionStats:
    """Inflection census of an action dataset."""

    total_steps: int
    inflection_count: int

    @property
    def ratio(self) -> float:
        return self.total_steps / self.inflection_count


def inflection_mask(actions) -> np.ndarray:
    """True where the action differs from its predecessor; t=0 counts."""
    n = len(actions)
    if n == 0:
        raise ValueError("empty action sequence")
    mask = np.ones(n, bool)
    for t in range(1, n):
        mask[t] = actions[t] != actions[t - 1]
    return mask


def inflection_weights(actions, ratio: float) -> np.ndarray:
    """Per-step loss weights: ratio at inflections, 1 elsewhere."""
    if ratio < 1.0:
        raise ValueError("ratio must be >= 1")
    return np.where(inflection_mask(actions), float(ratio), 1.0)


def inflection_ratio(action_sequences) -> InflectionStats:
    seqs = list(action_sequences)
    if not seqs:
        raise ValueError("need at least one trajectory")
    total = 0
    count = 0
    for seq in seqs:
        mask = inflection_mask(seq)
        total += len(mask)
        count += int(mask.sum())
    return InflectionStats(total, count)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> np.ndarray:
    """Per-step CE of integer labels under row-wise softmax."""
    lg = np.asarray(logits, np.float64)
    labels = np.asarray(labels, np.int64)
    return -_log_softmax(lg)[np.arange(len(labels)), labels]


def iw_loss(logit_sequences, label_sequences, weight_sequences):
    """Weighted mean CE over a batch, normalized by the total weight.

    Returns (loss, per-sequence CE arrays). With all weights equal the
    loss reduces to the plain mean cross-entropy.
    """
    if not (len(logit_sequences) == len(label_sequences) == len(weight_sequences)):
        raise ValueError("sequence count mismatch")
    num = 0.0
    den = 0.0
    terms = []
    for lg, labels, w in zip(logit_sequences, label_sequences, weight_sequences):
        lg = np.asarray(lg, np.float64)
        w = np.asarray(w, np.float64)
        if not (len(lg) == len(labels) == len(w)):
            raise ValueError("per-sequence length mismatch")
        if (w <= 0).any():
            raise ValueError("weights must be positive")
        ce = cross_entropy(lg, labels)
        terms.append(ce)
        num += float(w @ ce)
        den += float(w.sum())
    if den == 0.0:
        raise ValueError("empty batch")
    return num / den, terms


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "reactive"  # or "memory"
    feature_dim: int = 21
    n_actions: int = N_ACTIONS
    hidden_dim: int = 64  # memory only
    layers: int = 1  # memory recurrence depth; 2 gives the stacked variant
    window: int = 5  # reactive only: most recent frames in the input

    def __post_init__(self):
        if self.kind not in ("reactive", "memory"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if min(self.feature_dim, self.n_actions, self.hidden_dim, self.window) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")


@dataclass
class Policy:
    config: PolicyConfig
    params: dict[str, np.ndarray]


def init_policy(config: PolicyConfig, seed: int = 0) -> Policy:
    """Seeded Gaussian init scaled by 1/sqrt(fan_in); biases zero."""
    rng = np.random.default_rng(seed)
    c = config
    params: dict[str, np.ndarray] = {}

    def dense(name, rows, cols):
        params[name] = rng.normal(0.0, 1.0 / math.sqrt(cols), (rows, cols))

    if c.kind == "reactive":
        dense("W", c.n_actions, c.window * c.feature_dim)
        params["b"] = np.zeros(c.n_actions)
    else:
        for layer in range(c.layers):
            in_dim = c.feature_dim if layer == 0 else c.hidden_dim
            for gate in ("z", "r", "h"):
                dense(f"l{layer}.W{gate}", c.hidden_dim, in_dim)
                dense(f"l{layer}.U{gate}", c.hidden_dim, c.hidden_dim)
                params[f"l{layer}.b{gate}"] = np.zeros(c.hidden_dim)
        dense("out.W", c.n_actions, c.hidden_dim)
        params["out.b"] = np.zeros(c.n_actions)
    return Policy(c, params)


def _window_stack(features: np.ndarray, window: int) -> np.ndarray:
    """(T, D) -> (T, window*D): rows t-window+1..t, zero-padded before t=0."""
    n, d = features.shape
    padded = np.vstack([np.zeros((window - 1, d)), features])
    return np.hstack([padded[k : k + n] for k in range(window)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _memory_forward(params, config, features, h0):
    """Gated recurrence over the sequence; returns logits, final state, caches."""
    c = config
    h = [np.zeros(c.hidden_dim) if h0 is None else h0[i].copy() for i in range(c.layers)]
    caches = [[] for _ in range(c.layers)]
    logits = np.empty((len(features), c.n_actions))
    for t in range(len(features)):
        x = features[t]
        for layer in range(c.layers):
            p = f"l{layer}."
            prev = h[layer]
            z = _sigmoid(params[p + "Wz"] @ x + params[p + "Uz"] @ prev + params[p + "bz"])
            r = _sigmoid(params[p + "Wr"] @ x + params[p + "Ur"] @ prev + params[p + "br"])
            cand = np.tanh(params[p + "Wh"] @ x + params[p + "Uh"] @ (r * prev) + params[p + "bh"])
            h[layer] = (1.0 - z) * prev + z * cand
            caches[layer].append((x, prev, z, r, cand))
            x = h[layer]
        logits[t] = params["out.W"] @ h[-1] + params["out.b"]
    return logits, h, caches


def policy_forward(policy: Policy, features, state=None):
    """Logits for a feature sequence.

    Returns (logits (T, n_actions), final recurrent state or None).
    The reactive head sees the window zero-padded at sequence start.
    """
    c = policy.config
    features = np.asarray(features, np.float64)
    if features.ndim != 2 or features.shape[1] != c.feature_dim:
        raise ValueError(f"expected (T, {c.feature_dim}) features, got {features.shape}")
    if c.kind == "reactive":
        logits = _window_stack(features, c.window) @ policy.params["W"].T + policy.params["b"]
        return logits, None
    logits, h, _ = _memory_forward(policy.params, c, features, state)
    return logits, h


def _memory_backward(params, config, caches, dlogits, grads):
    c = config
    top = c.layers - 1
    hidden = [
        [caches[layer][t][1] for t in range(1, len(dlogits))] + [None]
        for layer in range(c.layers)
    ]
    # h_t of layer L is h_prev of step t+1; recover the last one forward
    for layer in range(c.layers):
        x, prev, z, r, cand = caches[layer][-1]
        hidden[layer][-1] = (1.0 - z) * prev + z * cand
    carry = [np.zeros(c.hidden_dim) for _ in range(c.layers)]
    for t in reversed(range(len(dlogits))):
        grads["out.W"] += np.outer(dlogits[t], hidden[top][t])
        grads["out.b"] += dlogits[t]
        dabove = params["out.W"].T @ dlogits[t]
        for layer in reversed(range(c.layers)):
            p = f"l{layer}."
            x, prev, z, r, cand = caches[layer][t]
            dh = carry[layer] + dabove
            dcand = dh * z * (1.0 - cand * cand)
            dzpre = dh * (cand - prev) * z * (1.0 - z)
            dprev = dh * (1.0 - z)
            grads[p + "Wh"] += np.outer(dcand, x)
            grads[p + "Uh"] += np.outer(dcand, r * prev)
            grads[p + "bh"] += dcand
            drh = params[p + "Uh"].T @ dcand
            dprev += drh * r
            drpre = drh * prev * r * (1.0 - r)
            grads[p + "Wr"] += np.outer(drpre, x)
            grads[p + "Ur"] += np.outer(drpre, prev)
            grads[p + "br"] += drpre
            dprev += params[p + "Ur"].T @ drpre
            grads[p + "Wz"] += np.outer(dzpre, x)
            grads[p + "Uz"] += np.outer(dzpre, prev)
            grads[p + "bz"] += dzpre
            dprev += params[p + "Uz"].T @ dzpre
            carry[layer] = dprev
            dabove = (
                params[p + "Wh"].T @ dcand
                + params[p + "Wr"].T @ drpre
                + params[p + "Wz"].T @ dzpre
            )


def policy_gradient(policy: Policy, batch, weight_sequences):
    """Exact gradient of iw_loss over the batch.

    batch is [(features (T, D), labels (T,)), ...] aligned with
    weight_sequences. Returns (grads, loss, per-sequence logits).
    """
    if not batch:
        raise ValueError("empty batch")
    if len(batch) != len(weight_sequences):
        raise ValueError("sequence count mismatch")
    c = policy.config
    grads = {k: np.zeros_like(v) for k, v in policy.params.items()}
    total_w = sum(float(np.sum(w)) for w in weight_sequences)
    loss_num = 0.0
    logits_list = []
    for (features, labels), w in zip(batch, weight_sequences):
        features = np.asarray(features, np.float64)
        labels = np.asarray(labels, np.int64)
        w = np.asarray(w, np.float64)
        if c.kind == "reactive":
            stacked = _window_stack(features, c.window)
            logits = stacked @ policy.params["W"].T + policy.params["b"]
            caches = None
        else:
            logits, _, caches = _memory_forward(policy.params, c, features, None)
        logits_list.append(logits)
        ce = cross_entropy(logits, labels)
        loss_num += float(w @ ce)
        soft = np.exp(_log_softmax(logits))
        soft[np.arange(len(labels)), labels] -= 1.0
        dlogits = soft * (w / total_w)[:, None]
        if c.kind == "reactive":
            grads["W"] += dlogits.T @ stacked
            grads["b"] += dlogits.sum(axis=0)
        else:
            _memory_backward(policy.params, c, caches, dlogits, grads)
    return grads, loss_num / total_w, logits_list


class Adam:
    """Adam with bias correction; moment state keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for key, g in grads.items():
            m = self._m.setdefault(key, np.zeros_like(g))
            v = self._v.setdefault(key, np.zeros_like(g))
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            m_hat = m / (1.0 - b1**self._t)
            v_hat = v / (1.0 - b2**self._t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# supplement defaults: reactive heads train an order of magnitude hotter
_DEFAULT_LR = {"reactive": 1e-3, "memory": 2e-4}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float | None = None  # None picks the per-kind default
    seed: int = 0
    weighted: bool = True
    ratio: float | None = None  # None measures N/n_I on the training set

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainResult:
    policy: Policy
    curves: list[dict]
    stats: InflectionStats


def _metrics(logits_list, seqs, weight_list, prefix: str) -> dict:
    labels = [y for _, y in seqs]
    iw = iw_loss(logits_list, labels, weight_list)[0]
    plain = iw_loss(logits_list, labels, [np.ones(len(y)) for y in labels])[0]
    hits = 0
    steps = 0
    inf_hits = 0
    inf_steps = 0
    for logits, y in zip(logits_list, labels):
        pred = logits.argmax(axis=1)
        ok = pred == y
        mask = inflection_mask(y)
        hits += int(ok.sum())
        steps += len(y)
        inf_hits += int(ok[mask].sum())
        inf_steps += int(mask.sum())
    return {
        f"{prefix}_iw_loss": iw,
        f"{prefix}_loss": plain,
        f"{prefix}_accuracy": hits / steps,
        f"{prefix}_inflection_recall": inf_hits / inf_steps,
    }


def _weights_for(seqs, ratio: float | None) -> list[np.ndarray]:
    if ratio is None:
        return [np.ones(len(y)) for _, y in seqs]
    return [inflection_weights(y, ratio) for _, y in seqs]


def evaluate_policy(policy: Policy, seqs, ratio: float | None = None, prefix: str = "val") -> dict:
    """Forward-only metrics for a sequence set; ratio sets the IW weights."""
    logits_list = [policy_forward(policy, x)[0] for x, _ in seqs]
    return _metrics(logits_list, seqs, _weights_for(seqs, ratio), prefix)


def train(
    train_set,
    policy_config: PolicyConfig | None = None,
    train_config: TrainConfig | None = None,
    val_set=None,
) -> TrainResult:
    """Full-batch Adam on the inflection-weighted clone loss.

    Deterministic given configs and data. Curve rows log metrics of the
    parameters entering each epoch plus one final row after the last
    update; validation weights reuse the training-set ratio so losses
    are comparable.
    """
    if not train_set:
        raise ValueError("empty training set")
    pc = policy_config or PolicyConfig()
    tc = train_config or TrainConfig()
    stats = inflection_ratio([y for _, y in train_set])
    ratio = stats.ratio if tc.ratio is None else tc.ratio
    weight_ratio = ratio if tc.weighted else None
    weights = _weights_for(train_set, weight_ratio)
    policy = init_policy(pc, tc.seed)
    adam = Adam(_DEFAULT_LR[pc.kind] if tc.lr is None else tc.lr)
    curves = []
    for epoch in range(tc.epochs):
        grads, loss, logits_list = policy_gradient(policy, train_set, weights)
        if not math.isfinite(loss):
            raise RuntimeError(f"training diverged at epoch {epoch}: loss={loss!r}")
        row = {"epoch": epoch}
        row.update(_metrics(logits_list, train_set, weights, "train"))
        if val_set:
            row.update(evaluate_policy(policy, val_set, weight_ratio))
        curves.append(row)
        adam.step(policy.params, grads)
    row = {"epoch": tc.epochs}
    row.update(evaluate_policy(policy, train_set, weight_ratio, "train"))
    if val_set:
        row.update(evaluate_policy(policy, val_set, weight_ratio))
    curves.append(row)
    return TrainResult(policy, curves, stats)


def save_curves(curves, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curves[0].keys()))
        writer.writeheader()
        writer.writerows(curves)


_KIND_CODES = {"reactive": 0, "memory": 1}


def save_policy(policy: Policy, path) -> None:
    """Checkpoint: parameter tensors plus a packed config record.

    The container stores float32, so a round trip quantizes the f64
    training parameters; load_policy upcasts back to f64 for inference.
    """
    c = policy.config
    meta = np.array(
        [_KIND_CODES[c.kind], c.feature_dim, c.n_actions, c.hidden_dim, c.layers, c.window],
        np.int64,
    )
    save_tensors(path, {**policy.params, "meta.config": meta})


def load_policy(path) -> Policy:
    tensors = load_tensors(path)
    meta = tensors.pop("meta.config")
    tensors = {k: v.astype(np.float64) for k, v in tensors.items()}
    kinds = {v: k for k, v in _KIND_CODES.items()}
    config = PolicyConfig(
        kind=kinds[int(meta[0])],
        feature_dim=int(meta[1]),
        n_actions=int(meta[2]),
        hidden_dim=int(meta[3]),
        layers=int(meta[4]),
        window=int(meta[5]),
    )
    return Policy(config, tensors)


def repeat_previous_accuracy(label_sequences, first_action: int = 0) -> float:
    """Accuracy of echoing the previous action (first_action at t=0).

    Equals 1 - n_I/N plus the fraction of first steps whose label is
    first_action; calibrates how degenerate a clone can be while still
    scoring high.
    """
    hits = 0
    total = 0
    for y in label_sequences:
        y = np.asarray(y, np.int64)
        hits += int(y[0] == first_action) + int((y[1:] == y[:-1]).sum())
        total += len(y)
    if total == 0:
        raise ValueError("need at least one step")
    return hits / total
