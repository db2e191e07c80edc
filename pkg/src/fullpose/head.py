"""Toy trainable detection head with a ground-aware orientation branch.

Per-center feature vectors pass through a lightweight terrain
segmentation MLP (sigmoid slope score) and a shared trunk feeding one
single-layer branch per box attribute: class logits, yaw bin logits, yaw
residual, raw tilt pair, log dimensions, and center offset.  Decoding
gates roll/pitch on the slope score, so any center scored flat comes out
with exactly zero tilt regardless of the raw branch values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec, nn
from .geom import EulerXYZ, FullPoseBox, PointCloud


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    """Widths of the head MLPs plus the target codec configuration."""

    feature_dim: int = 256
    shared_widths: tuple[int, ...] = (512, 256)
    seg_hidden: tuple[int, ...] = (128,)
    class_count: int = 2
    codec: codec.CodecConfig = field(default_factory=codec.CodecConfig)

    def __post_init__(self):
        if self.feature_dim < 1 or self.class_count < 2:
            raise ValueError("feature_dim must be >= 1 and class_count >= 2")
        if any(wd < 1 for wd in self.shared_widths + self.seg_hidden):
            raise ValueError("all widths must be positive")


# parameter groups in serialization / flattening order
_GROUPS = ("seg", "shared", "cls", "yaw_bin", "yaw_res", "tilt", "dims", "offset")


@dataclass
class HeadParams:
    seg: nn.MlpParams
    shared: nn.MlpParams
    cls: nn.MlpParams
    yaw_bin: nn.MlpParams
    yaw_res: nn.MlpParams
    tilt: nn.MlpParams
    dims: nn.MlpParams
    offset: nn.MlpParams


@dataclass
class HeadOutput:
    """Raw per-center predictions (one row per coarse center)."""

    class_logits: np.ndarray   # (n, class_count)
    s_g: np.ndarray            # (n,) slope probability
    yaw_bin_logits: np.ndarray  # (n, n_yaw_bins)
    yaw_residual: np.ndarray   # (n,)
    tilt: np.ndarray           # (n, 2) raw normalized (x, y)
    log_dims: np.ndarray       # (n, 3)
    center_offset: np.ndarray  # (n, 3)

    def __len__(self) -> int:
        return self.class_logits.shape[0]


def init_head(cfg: HeadConfig, rng: np.random.Generator) -> HeadParams:
    """Random head parameters; each attribute branch is one dense layer."""
    trunk_out = cfg.shared_widths[-1]
    return HeadParams(
        seg=nn.init_mlp((cfg.feature_dim, *cfg.seg_hidden, 1), rng),
        shared=nn.init_mlp(
            (cfg.feature_dim, *cfg.shared_widths), rng, output_activation="relu"
        ),
        cls=nn.init_mlp((trunk_out, cfg.class_count), rng),
        yaw_bin=nn.init_mlp((trunk_out, cfg.codec.n_yaw_bins), rng),
        yaw_res=nn.init_mlp((trunk_out, 1), rng),
        tilt=nn.init_mlp((trunk_out, 2), rng),
        dims=nn.init_mlp((trunk_out, 3), rng),
        offset=nn.init_mlp((trunk_out, 3), rng),
    )


def _forward_cached(params: HeadParams, features: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    seg_z, seg_cache = nn.mlp_forward(params.seg, features)
    trunk, shared_cache = nn.mlp_forward(params.shared, features)
    caches = {"seg": seg_cache, "shared": shared_cache}
    branch_out = {}
    for name in _GROUPS[2:]:
        branch_out[name], caches[name] = nn.mlp_forward(getattr(params, name), trunk)
    out = HeadOutput(
        class_logits=branch_out["cls"],
        s_g=nn.sigmoid(seg_z[:, 0]),
        yaw_bin_logits=branch_out["yaw_bin"],
        yaw_residual=branch_out["yaw_res"][:, 0],
        tilt=branch_out["tilt"],
        log_dims=branch_out["dims"],
        center_offset=branch_out["offset"],
    )
    return out, caches


def head_forward(params: HeadParams, features: np.ndarray) -> HeadOutput:
    """Run the head on (n, feature_dim) features; purely functional."""
    out, _ = _forward_cached(params, features)
    return out


def _decode_tilt_signed(raw: float, threshold: float, cfg: codec.CodecConfig) -> float:
    # sign follows the raw prediction; an exactly-zero raw output decodes
    # to zero tilt rather than the +threshold branch point
    if cfg.strict_eq3:
        return codec.decode_tilt(raw, threshold, strict_eq3=True)
    if raw == 0.0:
        return 0.0
    return codec.decode_tilt(raw, threshold)


def head_decode(out: HeadOutput, centers, cfg: HeadConfig) -> list[FullPoseBox]:
    """Turn raw outputs into scored full-pose boxes, one per center."""
    pts = centers.points if isinstance(centers, PointCloud) else np.asarray(centers, dtype=np.float64)
    ccfg = cfg.codec
    boxes = []
    for i in range(len(out)):
        logits = out.class_logits[i]
        shifted = np.exp(logits - logits.max())
        probs = shifted / shifted.sum()
        cls_id = int(np.argmax(logits))
        yaw = codec.decode_yaw(
            codec.YawCode(int(np.argmax(out.yaw_bin_logits[i])), float(out.yaw_residual[i])),
            ccfg,
        )
        s_g = float(out.s_g[i])
        theta_x = codec.gate_tilt(s_g, _decode_tilt_signed(float(out.tilt[i, 0]), ccfg.t_theta_x, ccfg))
        theta_y = codec.gate_tilt(s_g, _decode_tilt_signed(float(out.tilt[i, 1]), ccfg.t_theta_y, ccfg))
        boxes.append(
            FullPoseBox(
                center=codec.decode_center_offset(pts[i], out.center_offset[i]),
                dims=codec.decode_dims(out.log_dims[i]),
                euler=EulerXYZ(theta_x, theta_y, yaw),
                class_id=cls_id,
                score=float(probs[cls_id]),
            )
        )
    return boxes


def head_loss(params: HeadParams, features: np.ndarray, targets,
              weights: dict | None = None):
    """Composite box loss plus gradients for every head parameter.

    Returns ``(loss, grads, breakdown)`` where ``grads`` maps parameter
    group name to per-layer (dW, db) pairs in forward order.
    """
    out, caches = _forward_cached(params, features)
    loss, bd = nn.composite_box_loss(out, targets, weights)

    branch_douts = {
        "cls": bd.dclass_logits,
        "yaw_bin": bd.dyaw_bin_logits,
        "yaw_res": bd.dyaw_residual[:, None],
        "tilt": bd.dtilt,
        "dims": bd.dlog_dims,
        "offset": bd.dcenter_offset,
    }
    grads = {}
    dtrunk = np.zeros_like(caches["shared"][-1][2])
    for name, dout in branch_douts.items():
        dx, grads[name] = nn.mlp_backward(getattr(params, name), caches[name], dout)
        dtrunk += dx
    _, grads["shared"] = nn.mlp_backward(params.shared, caches["shared"], dtrunk)

    dseg_z = (bd.ds_g * out.s_g * (1.0 - out.s_g))[:, None]
    _, grads["seg"] = nn.mlp_backward(params.seg, caches["seg"], dseg_z)
    return loss, grads, bd


def head_param_list(params: HeadParams) -> list[np.ndarray]:
    """Flat references to every weight/bias array, in a fixed order."""
    arrays = []
    for name in _GROUPS:
        for layer in getattr(params, name).layers:
            arrays.append(layer.weights)
            arrays.append(layer.bias)
    return arrays


def head_grad_list(params: HeadParams, grads: dict) -> list[np.ndarray]:
    """Gradients from :func:`head_loss` flattened to match head_param_list."""
    arrays = []
    for name in _GROUPS:
        for dw, db in grads[name]:
            arrays.append(dw)
            arrays.append(db)
    return arrays


def save_head(params: HeadParams, path) -> None:
    nn.save_mlps([getattr(params, name) for name in _GROUPS], path)


def load_head(path) -> HeadParams:
    mlps = nn.load_mlps(path)
    if len(mlps) != len(_GROUPS):
        raise ValueError(f"expected {len(_GROUPS)} parameter groups, got {len(mlps)}")
    return HeadParams(**dict(zip(_GROUPS, mlps)))


def train_toy(dataset, cfg: HeadConfig, epochs: int, seed: int,
              lr: float = 1e-3) -> tuple[HeadParams, list[dict]]:
    """Adam-train the head on (features, targets) pairs; returns a log.

    Deterministic for a fixed seed.  The log has one record per epoch
    with the mean total loss and mean per-term losses over frames.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("training dataset is empty")
    rng = np.random.default_rng(seed)
    params = init_head(cfg, rng)
    arrays = head_param_list(params)
    state = nn.init_adam_state(arrays)
    log = []
    for epoch in range(epochs):
        totals = []
        term_sums = {}
        for features, targets in dataset:
            loss, grads, bd = head_loss(params, features, targets)
            nn.adam_step(arrays, head_grad_list(params, grads), state, lr=lr)
            totals.append(loss)
            for key, val in bd.terms.items():
                term_sums[key] = term_sums.get(key, 0.0) + val
        record = {"epoch": epoch, "total": float(np.mean(totals))}
        record.update({k: v / len(dataset) for k, v in term_sums.items()})
        log.append(record)
    return params, log
