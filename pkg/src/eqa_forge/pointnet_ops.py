"""Forward-only set-abstraction encoder over rendered point clouds.

Numpy implementation of the classic multi-scale grouping pipeline:
farthest point sampling picks centroids, ball queries gather local
neighborhoods at several radii, a small per-point MLP runs inside each
ball, and max pooling collapses the ball to one feature. Three local
stages plus a global stage produce a 1024-d cloud vector; a learned
per-bin sparsity embedding (32-d) is appended for a 1056-d observation
embedding.

No training happens here: parameters are plain ``dict[str, ndarray]``
initialized by ``init_encoder_params`` and stored via tensor_store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .pc_render import Observation


def farthest_point_sample(positions: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min sampling; deterministic.

    The seed point is the lexicographically smallest coordinate triple,
    ties at equal min-distance go to the lowest index. If k exceeds the
    point count, indices cycle (pad-by-repeat).
    """
    positions = np.asarray(positions, np.float64)
    n = len(positions)
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    if k < 1:
        raise ValueError("k must be >= 1")
    start = int(np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))[0])
    idx = _kernels.fps(positions, min(k, n), start)
    if k > n:
        reps = np.tile(idx, (k // n) + 1)
        idx = reps[:k]
    return idx


def ball_query(
    positions: np.ndarray, centroids: np.ndarray, radius: float, max_k: int
) -> np.ndarray:
    """Up to max_k in-radius neighbor indices per centroid, nearest first,
    padded with -1; an empty ball falls back to the single nearest point."""
    if radius <= 0 or max_k < 1:
        raise ValueError("radius must be positive and max_k >= 1")
    return _kernels.ball_query(
        np.asarray(positions, np.float64), np.asarray(centroids, np.float64), radius, max_k
    )


@dataclass(frozen=True)
class SAStage:
    n_points: int
    radii: tuple[float, ...]
    max_k: int
    mlps: tuple[tuple[int, ...], ...]  # one per radius


@dataclass(frozen=True)
class EncoderConfig:
    stages: tuple[SAStage, ...] = (
        SAStage(1024, (0.05, 0.1), 32, ((32, 32, 64), (32, 64, 128))),
        SAStage(256, (0.1, 0.2, 0.4), 32, ((64, 128, 128), (128, 128, 256), (128, 128, 256, 256))),
        SAStage(64, (0.4, 0.8), 32, ((128, 128, 128, 256, 256), (128, 128, 256, 256, 256, 512))),
    )
    global_mlp: tuple[int, ...] = (256, 512, 1024)
    in_features: int = 3  # RGB
    sparsity_bins: int = 5
    sparsity_dim: int = 32

    @property
    def embedding_dim(self) -> int:
        return self.global_mlp[-1] + self.sparsity_dim


def _mlp_dims(config: EncoderConfig):
    """(name, fan_in, fan_out) triples for every affine layer, in order."""
    dims = []
    f = config.in_features
    for si, stage in enumerate(config.stages):
        outs = 0
        for ri, mlp in enumerate(stage.mlps):
            fan = 3 + f
            for li, width in enumerate(mlp):
                dims.append((f"sa{si + 1}.r{ri}.l{li}", fan, width))
                fan = width
            outs += mlp[-1]
        f = outs
    fan = 3 + f
    for li, width in enumerate(config.global_mlp):
        dims.append((f"global.l{li}", fan, width))
        fan = width
    return dims


def init_encoder_params(config: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases, small-normal sparsity table."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xE14C]))
    params: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in _mlp_dims(config):
        std = np.sqrt(2.0 / fan_in)
        params[f"{name}.W"] = rng.normal(0.0, std, (fan_out, fan_in)).astype(np.float32)
        params[f"{name}.b"] = np.zeros(fan_out, np.float32)
    params["sparsity.table"] = rng.normal(
        0.0, 0.02, (config.sparsity_bins, config.sparsity_dim)
    ).astype(np.float32)
    return params


def _run_mlp(x: np.ndarray, params, prefix: str, widths) -> np.ndarray:
    """Affine + ReLU for every layer; x has features on the last axis."""
    for li in range(len(widths)):
        w = params[f"{prefix}.l{li}.W"]
        b = params[f"{prefix}.l{li}.b"]
        x = np.maximum(x @ w.T + b, 0.0)
    return x


def set_abstraction(
    positions: np.ndarray,
    features: np.ndarray | None,
    stage: SAStage,
    params,
    prefix: str,
) -> tuple[np.ndarray, np.ndarray]:
    """One multi-scale grouping stage: (positions, features) -> coarser pair.

    Ball neighborhoods are translated to their centroid, concatenated
    with point features, passed through the scale MLP and max-pooled.
    Padding slots (-1) repeat the first neighbor so pooling ignores them.
    """
    positions = np.asarray(positions, np.float64)
    idx = farthest_point_sample(positions, stage.n_points)
    centroids = positions[idx]
    scale_outs = []
    for ri, radius in enumerate(stage.radii):
        nbr = ball_query(positions, centroids, radius, stage.max_k)
        pad = nbr < 0
        nbr = np.where(pad, nbr[:, :1], nbr)  # slot 0 is always valid
        grouped = positions[nbr] - centroids[:, None, :]
        if features is not None:
            grouped = np.concatenate([grouped, features[nbr]], axis=2)
        out = _run_mlp(grouped.astype(np.float32), params, f"{prefix}.r{ri}", stage.mlps[ri])
        scale_outs.append(out.max(axis=1))
    return centroids, np.concatenate(scale_outs, axis=1)


def global_abstraction(
    positions: np.ndarray, features: np.ndarray | None, widths, params, prefix: str = "global"
) -> np.ndarray:
    """Collapse the whole cloud to one vector: center on the centroid
    mean, run the MLP per point, max-pool over points."""
    positions = np.asarray(positions, np.float64)
    rel = positions - positions.mean(axis=0, keepdims=True)
    x = rel if features is None else np.concatenate([rel, features], axis=1)
    out = _run_mlp(x.astype(np.float32), params, prefix, widths)
    return out.max(axis=0)


def feature_propagate(
    coarse_positions: np.ndarray,
    coarse_features: np.ndarray,
    fine_positions: np.ndarray,
    eps: float = 1e-8,
) -> np.ndarray:
    """Inverse-distance 3-NN interpolation from coarse to fine points.

    A fine point within eps of a coarse point copies that coarse feature
    outright (avoids the 1/d singularity).
    """
    coarse_positions = np.asarray(coarse_positions, np.float64)
    fine_positions = np.asarray(fine_positions, np.float64)
    d = np.linalg.norm(
        fine_positions[:, None, :] - coarse_positions[None, :, :], axis=2
    )
    k = min(3, len(coarse_positions))
    nn = np.argsort(d, axis=1)[:, :k]
    nd = np.take_along_axis(d, nn, axis=1)
    out = np.empty((len(fine_positions), coarse_features.shape[1]), np.float32)
    exact = nd[:, 0] < eps
    w = 1.0 / np.maximum(nd, eps)
    w /= w.sum(axis=1, keepdims=True)
    out[:] = np.einsum("fk,fkc->fc", w, coarse_features[nn].astype(np.float64)).astype(
        np.float32
    )
    out[exact] = coarse_features[nn[exact, 0]]
    return out


def encode_observation(
    obs: Observation, params: dict[str, np.ndarray], config: EncoderConfig | None = None
) -> np.ndarray:
    """Observation -> (1056,) float32 embedding.

    Positions are camera-frame (view invariance comes from the camera,
    not the encoder), features are RGB scaled to [0, 1]. An empty
    observation contributes a zero cloud vector; the sparsity embedding
    is always appended.
    """
    config = config or EncoderConfig()
    table = params["sparsity.table"]
    if obs.count == 0:
        vec = np.zeros(config.global_mlp[-1], np.float32)
    else:
        pos = obs.cam_positions.astype(np.float64)
        feats = (obs.cloud.colors.astype(np.float32) / 255.0)[:, : config.in_features]
        for si, stage in enumerate(config.stages):
            pos, feats = set_abstraction(pos, feats, stage, params, f"sa{si + 1}")
        vec = global_abstraction(pos, feats, config.global_mlp, params)
    return np.concatenate([vec, table[obs.sparsity_bin]]).astype(np.float32)
