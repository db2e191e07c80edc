"""Minimal dense neural kernels with analytic reverse-mode gradients.

Everything runs in float64 numpy on plain arrays; shapes follow the
``(batch, features)`` convention with weights stored ``(out, in)``.  Each
differentiable op has an exact backward, and every backward is verified
against central finite differences in the test suite.

Parameter snapshots serialize to a flat binary container:

    magic b"FPNN" | uint32 mlp count
    per mlp:  uint32 layer count
    per layer: uint32 out_dim | uint32 in_dim | uint8 activation code
               float64-LE weights (row-major, out*in) | float64-LE bias (out)

Activation codes: 0 = none, 1 = relu, 2 = sigmoid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class EmptyGroupError(ValueError):
    pass


class ProbabilityOutOfRangeError(ValueError):
    pass


class LabelOutOfRangeError(ValueError):
    pass


_ACTIVATIONS = ("none", "relu", "sigmoid")
# guard against exact 0/1 probabilities from saturated sigmoids
_PROB_EPS = 1e-12


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """Affine layer ``y = x @ W.T + b`` followed by an activation."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "none"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeMismatchError("weights must be 2-D (out, in)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError("bias must match the output width")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MlpParams:
    """A stack of dense layers with chained shapes."""

    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weights.shape[1] != prev.weights.shape[0]:
                raise ShapeMismatchError(
                    f"layer widths do not chain: {prev.weights.shape} -> {cur.weights.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[0]


def init_mlp(widths, rng: np.random.Generator, hidden_activation: str = "relu",
             output_activation: str = "none") -> MlpParams:
    """He-style random init for a chain of widths ``(in, ..., out)``.

    Biases start at small uniform values (not zero) so fully-clipped relu
    rows cannot park the next layer exactly on its activation kink.
    """
    layers = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        act = hidden_activation if i < len(widths) - 2 else output_activation
        scale = np.sqrt(2.0 / fan_in) if act == "relu" else np.sqrt(1.0 / fan_in)
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(
            DenseLayer(
                weights=rng.standard_normal((fan_out, fan_in)) * scale,
                bias=rng.uniform(-bound, bound, fan_out),
                activation=act,
            )
        )
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the stack; the cache holds per-layer (input, pre-act, act)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError("input must be 2-D (batch, features)")
    if a.shape[1] != params.in_dim:
        raise ShapeMismatchError(
            f"input width {a.shape[1]} != layer width {params.in_dim}"
        )
    cache = []
    for layer in params.layers:
        z = a @ layer.weights.T + layer.bias
        out = _apply_activation(z, layer.activation)
        cache.append((a, z, out))
        a = out
    return a, cache


def mlp_backward(params: MlpParams, cache: list, dy: np.ndarray
                 ) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Exact reverse-mode gradients; returns (dx, [(dW, db) per layer])."""
    da = np.asarray(dy, dtype=np.float64)
    if da.shape != cache[-1][2].shape:
        raise ShapeMismatchError(
            f"dy shape {da.shape} != output shape {cache[-1][2].shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        x_in, z, a = cache[i]
        layer = params.layers[i]
        dz = da * _activation_grad(z, a, layer.activation)
        grads[i] = (dz.T @ x_in, dz.sum(axis=0))
        da = dz @ layer.weights
    return da, grads


def pointnet_aggregate(params_h: MlpParams, params_gamma: MlpParams,
                       group: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Order-invariant group feature: ``gamma(max_i h(x_i))``.

    The channel-wise max makes the output invariant to row permutations;
    backward routes each channel's gradient to its argmax row (ties to the
    lowest index).
    """
    group = np.asarray(group, dtype=np.float64)
    if group.ndim != 2 or group.shape[0] == 0:
        raise EmptyGroupError("group must be a nonempty (k, features) array")
    h_out, h_cache = mlp_forward(params_h, group)
    argmax = np.argmax(h_out, axis=0)
    pooled = h_out[argmax, np.arange(h_out.shape[1])]
    g_out, g_cache = mlp_forward(params_gamma, pooled[None, :])
    return g_out[0], (h_cache, g_cache, argmax, h_out.shape)


def pointnet_backward(params_h: MlpParams, params_gamma: MlpParams, cache: tuple,
                      dfeature: np.ndarray):
    """Gradients of :func:`pointnet_aggregate` w.r.t. group and both MLPs."""
    h_cache, g_cache, argmax, h_shape = cache
    dpooled, dgamma = mlp_backward(params_gamma, g_cache, np.asarray(dfeature)[None, :])
    dh_out = np.zeros(h_shape)
    dh_out[argmax, np.arange(h_shape[1])] = dpooled[0]
    dgroup, dh = mlp_backward(params_h, h_cache, dh_out)
    return dgroup, dh, dgamma


def smooth_l1(pred, target, beta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise smooth-L1 loss and its gradient w.r.t. ``pred``.

    Quadratic inside ``|d| < beta``, linear outside; the gradient is
    clamped to +-1 on the linear branch.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    quad = np.abs(d) < beta
    loss = np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d))
    return loss, grad


def focal_loss(p, y, alpha: float = 0.25, gamma_f: float = 2.0
               ) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise binary focal loss and gradient w.r.t. ``p``.

    ``p`` is the predicted probability of the positive class, ``y`` the
    0/1 label.  With ``gamma_f=0, alpha=0.5`` this reduces to half the
    binary cross-entropy.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ProbabilityOutOfRangeError("p must lie strictly inside (0, 1)")
    pos = y == 1
    p_t = np.where(pos, p, 1.0 - p)
    a_t = np.where(pos, alpha, 1.0 - alpha)
    one_minus = 1.0 - p_t
    loss = -a_t * one_minus**gamma_f * np.log(p_t)
    # dloss/dp_t = -a_t * [ -gamma (1-p_t)^(gamma-1) log p_t + (1-p_t)^gamma / p_t ]
    modulator = (
        0.0 if gamma_f == 0.0 else -gamma_f * one_minus ** (gamma_f - 1.0) * np.log(p_t)
    )
    dloss_dpt = -a_t * (modulator + one_minus**gamma_f / p_t)
    grad = np.where(pos, dloss_dpt, -dloss_dpt)
    return loss, grad


def cross_entropy(logits, label) -> tuple[np.ndarray, np.ndarray]:
    """Softmax cross-entropy with a stable log-sum-exp.

    Accepts a single logit vector with an integer label, or a (n, C)
    batch with (n,) labels; gradients are ``softmax - onehot``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    if labels.shape[0] != z.shape[0]:
        raise ShapeMismatchError("labels must match the batch size")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {z.shape[1]}) for {z.shape[1]} classes"
        )
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = lse - z[rows, labels]
    grad = np.exp(z - lse[:, None])
    grad[rows, labels] -= 1.0
    if single:
        return loss[0], grad[0]
    return loss, grad


@dataclass
class LossBreakdown:
    """Total box loss plus per-term values and gradients w.r.t. raw outputs."""

    total: float
    terms: dict
    dclass_logits: np.ndarray
    ds_g: np.ndarray
    dyaw_bin_logits: np.ndarray
    dyaw_residual: np.ndarray
    dtilt: np.ndarray
    dlog_dims: np.ndarray
    dcenter_offset: np.ndarray


_TERM_KEYS = ("cls", "dim", "posi", "seg", "tilt", "yaw_bin", "yaw_res")


def composite_box_loss(out, targets, weights: dict | None = None) -> tuple[float, LossBreakdown]:
    """Total training loss over a batch of per-center raw outputs.

    Classification, dimension, position, and yaw terms sum over foreground
    centers and divide by their count; the terrain focal term does the
    same; the tilt term averages over foreground centers on sloped terrain
    only and is zero when there are none.  An all-background batch has
    zero loss.  ``weights`` optionally rescales the five summands
    (keys: cls, dim, posi, theta_xy, theta_z; default 1.0 each).
    """
    w = {"cls": 1.0, "dim": 1.0, "posi": 1.0, "theta_xy": 1.0, "theta_z": 1.0}
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        w.update(weights)

    n = len(targets)
    zero = LossBreakdown(
        total=0.0,
        terms={k: 0.0 for k in _TERM_KEYS},
        dclass_logits=np.zeros_like(out.class_logits),
        ds_g=np.zeros_like(out.s_g),
        dyaw_bin_logits=np.zeros_like(out.yaw_bin_logits),
        dyaw_residual=np.zeros_like(out.yaw_residual),
        dtilt=np.zeros_like(out.tilt),
        dlog_dims=np.zeros_like(out.log_dims),
        dcenter_offset=np.zeros_like(out.center_offset),
    )
    if out.class_logits.shape[0] != n:
        raise ShapeMismatchError("outputs and targets disagree on batch size")
    fg = np.asarray(targets.foreground, dtype=bool)
    n_p = int(fg.sum())
    if n_p == 0:
        return 0.0, zero
    sloped = fg & (np.asarray(targets.ground_label) > 0)
    n_s = int(sloped.sum())
    result = zero
    terms = result.terms

    cls_loss, cls_grad = cross_entropy(out.class_logits[fg], targets.class_label[fg])
    terms["cls"] = float(cls_loss.sum()) / n_p
    result.dclass_logits[fg] = w["cls"] * cls_grad / n_p

    dim_loss, dim_grad = smooth_l1(out.log_dims[fg], targets.log_dims[fg])
    terms["dim"] = float(dim_loss.sum()) / n_p
    result.dlog_dims[fg] = w["dim"] * dim_grad / n_p

    posi_loss, posi_grad = smooth_l1(out.center_offset[fg], targets.center_offset[fg])
    terms["posi"] = float(posi_loss.sum()) / n_p
    result.dcenter_offset[fg] = w["posi"] * posi_grad / n_p

    p_raw = out.s_g[fg]
    p = np.clip(p_raw, _PROB_EPS, 1.0 - _PROB_EPS)
    seg_loss, seg_grad = focal_loss(p, targets.ground_label[fg])
    # a saturated score sits on the clip boundary; its true upstream
    # gradient through the sigmoid is ~0, so drop the clipped one
    seg_grad = np.where((p_raw > _PROB_EPS) & (p_raw < 1.0 - _PROB_EPS), seg_grad, 0.0)
    terms["seg"] = float(seg_loss.sum()) / n_p
    result.ds_g[fg] = w["theta_xy"] * seg_grad / n_p

    if n_s > 0:
        tilt_loss, tilt_grad = smooth_l1(out.tilt[sloped], targets.tilt[sloped])
        terms["tilt"] = float(tilt_loss.sum()) / n_s
        result.dtilt[sloped] = w["theta_xy"] * tilt_grad / n_s

    ybin_loss, ybin_grad = cross_entropy(out.yaw_bin_logits[fg], targets.yaw_bin[fg])
    terms["yaw_bin"] = float(ybin_loss.sum()) / n_p
    result.dyaw_bin_logits[fg] = w["theta_z"] * ybin_grad / n_p

    yres_loss, yres_grad = smooth_l1(out.yaw_residual[fg], targets.yaw_residual[fg])
    terms["yaw_res"] = float(yres_loss.sum()) / n_p
    result.dyaw_residual[fg] = w["theta_z"] * yres_grad / n_p

    total = (
        w["cls"] * terms["cls"]
        + w["dim"] * terms["dim"]
        + w["posi"] * terms["posi"]
        + w["theta_xy"] * (terms["seg"] + terms["tilt"])
        + w["theta_z"] * (terms["yaw_bin"] + terms["yaw_res"])
    )
    result.total = float(total)
    return result.total, result


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list
    v: list
    t: int = 0


def init_adam_state(params: list) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
    )


def adam_step(params: list, grads: list, state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8
              ) -> tuple[list, AdamState]:
    """One in-place Adam update over a flat list of parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params/grads/state lengths disagree")
    b1, b2 = betas
    state.t += 1
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)
    return params, state


def grad_check(f, x: np.ndarray, epsilon: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a 1-D float64 array to ``(value, gradient)``.  The relative
    error denominator is ``max(|analytic|, |numeric|, 1e-8)`` per
    coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(x.size):
        x_hi = x.copy()
        x_lo = x.copy()
        x_hi.flat[i] += epsilon
        x_lo.flat[i] -= epsilon
        hi, _ = f(x_hi)
        lo, _ = f(x_lo)
        # divide by the realized span: x +- eps rounds, eps itself may not
        numeric = (hi - lo) / (x_hi.flat[i] - x_lo.flat[i])
        a = float(analytic.flat[i])
        err = abs(a - float(numeric)) / max(abs(a), abs(float(numeric)), 1e-8)
        worst = max(worst, err)
    return worst


_MAGIC = b"FPNN"


def save_mlps(mlps, path) -> None:
    """Write a sequence of MlpParams to the flat binary container."""
    mlps = list(mlps)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(mlps)))
        for mlp in mlps:
            fh.write(struct.pack("<I", len(mlp.layers)))
            for layer in mlp.layers:
                out_dim, in_dim = layer.weights.shape
                code = _ACTIVATIONS.index(layer.activation)
                fh.write(struct.pack("<IIB", out_dim, in_dim, code))
                fh.write(layer.weights.astype("<f8").tobytes())
                fh.write(layer.bias.astype("<f8").tobytes())


def load_mlps(path) -> list[MlpParams]:
    """Read MLP stacks written by :func:`save_mlps`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter container (bad magic)")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise ValueError(f"{path}: truncated parameter container")
        vals = struct.unpack_from(fmt, data, offset)
        offset += size
        return vals

    (n_mlps,) = take("<I")
    mlps = []
    for _ in range(n_mlps):
        (n_layers,) = take("<I")
        layers = []
        for _ in range(n_layers):
            out_dim, in_dim, code = take("<IIB")
            count = out_dim * in_dim
            need = (count + out_dim) * 8
            if offset + need > len(data):
                raise ValueError(f"{path}: truncated parameter container")
            weights = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            bias = np.frombuffer(data, dtype="<f8", count=out_dim, offset=offset)
            offset += out_dim * 8
            layers.append(
                DenseLayer(
                    weights=weights.reshape(out_dim, in_dim).copy(),
                    bias=bias.copy(),
                    activation=_ACTIVATIONS[code],
                )
            )
        mlps.append(MlpParams(layers))
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in parameter container")
    return mlps
