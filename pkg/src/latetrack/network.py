"""Motion-factor predictor network: forward pass, reverse-mode gradients.

Input is a k x 8 window: per past step, the normalized motion (4) next to
its per-frame speed (4). The net encodes rows, convolves over the time
axis, pools, decodes through a shared layer, then N independent head
layers and a shared 4-wide output layer produce one motion factor per
future frame. No output nonlinearity: factors multiply a signed speed.

Everything is float64 numpy; gradients are written out by hand and
checked against central finite differences in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import BoundingBox
from .errors import ValidationError
from .motion import MotionHistory, NormalizedMotion, apply_factor, apply_motion, average_speed

CHECKPOINT_VERSION = 1

# param-dict key -> checkpoint layer name
_LAYER_NAMES = {
    "enc_w": "enc_fc.weight",
    "enc_b": "enc_fc.bias",
    "conv_w": "temporal_conv.weight",
    "conv_b": "temporal_conv.bias",
    "dec_w": "dec_shared_fc.weight",
    "dec_b": "dec_shared_fc.bias",
    "head_w": "head_fc.weight",
    "head_b": "head_fc.bias",
    "out_w": "out_fc.weight",
    "out_b": "out_fc.bias",
}


@dataclass
class PMWeights:
    """All parameters plus the (k, n_heads, c_enc, c_dec) geometry.

    conv_w[d] is the kernel tap for time offset d-1, so the temporal
    convolution sees the previous, current, and next row under zero
    padding ("same" over the k axis).
    """

    k: int
    n_heads: int
    c_enc: int
    c_dec: int
    enc_w: np.ndarray
    enc_b: np.ndarray
    conv_w: np.ndarray
    conv_b: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def __post_init__(self):
        if self.k < 1 or self.n_heads < 1:
            raise ValidationError(f"need k >= 1 and n_heads >= 1, got k={self.k}, N={self.n_heads}")
        expected = self._expected_shapes()
        for name, shape in expected.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    def _expected_shapes(self) -> dict:
        c, d, n = self.c_enc, self.c_dec, self.n_heads
        return {
            "enc_w": (c, 8), "enc_b": (c,),
            "conv_w": (3, c, c), "conv_b": (c,),
            "dec_w": (d, c), "dec_b": (d,),
            "head_w": (n, d, d), "head_b": (n, d),
            "out_w": (4, d), "out_b": (4,),
        }

    def params(self) -> dict:
        """Live parameter arrays keyed by short name (not copies)."""
        return {name: getattr(self, name) for name in _LAYER_NAMES}

    def copy(self) -> "PMWeights":
        return PMWeights(
            self.k, self.n_heads, self.c_enc, self.c_dec,
            **{name: getattr(self, name).copy() for name in _LAYER_NAMES},
        )


def init_weights(k: int = 3, n_heads: int = 1, c_enc: int = 64, c_dec: int = 32,
                 seed: int = 0) -> PMWeights:
    """Fan-in-scaled uniform init (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return PMWeights(
        k=k, n_heads=n_heads, c_enc=c_enc, c_dec=c_dec,
        enc_w=u((c_enc, 8), 8), enc_b=np.zeros(c_enc),
        conv_w=u((3, c_enc, c_enc), 3 * c_enc), conv_b=np.zeros(c_enc),
        dec_w=u((c_dec, c_enc), c_enc), dec_b=np.zeros(c_dec),
        head_w=u((n_heads, c_dec, c_dec), c_dec), head_b=np.zeros((n_heads, c_dec)),
        out_w=u((4, c_dec), c_dec), out_b=np.zeros(4),
    )


def zero_weights(k: int = 3, n_heads: int = 1, c_enc: int = 64, c_dec: int = 32) -> PMWeights:
    return PMWeights(
        k=k, n_heads=n_heads, c_enc=c_enc, c_dec=c_dec,
        enc_w=np.zeros((c_enc, 8)), enc_b=np.zeros(c_enc),
        conv_w=np.zeros((3, c_enc, c_enc)), conv_b=np.zeros(c_enc),
        dec_w=np.zeros((c_dec, c_enc)), dec_b=np.zeros(c_dec),
        head_w=np.zeros((n_heads, c_dec, c_dec)), head_b=np.zeros((n_heads, c_dec)),
        out_w=np.zeros((4, c_dec)), out_b=np.zeros(4),
    )


def constant_factor_weights(k: int = 3, n_heads: int = 1, c_enc: int = 64,
                            c_dec: int = 32) -> PMWeights:
    """Bias-only fixture: head n outputs the factor [n, n, n, n].

    With every weight matrix zeroed, head n's bias is the only signal;
    routing it through one channel of the shared output layer gives each
    head a constant factor equal to its horizon index. Applied to the
    average speed of a constant-velocity history this reproduces the
    future boxes exactly.
    """
    w = zero_weights(k, n_heads, c_enc, c_dec)
    for n in range(1, n_heads + 1):
        w.head_b[n - 1, 0] = float(n)
    w.out_w[:, 0] = 1.0
    return w


def _check_input(w: PMWeights, x: np.ndarray, batched: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = (w.k, 8)
    if batched:
        if x.ndim != 3 or x.shape[1:] != want:
            raise ValidationError(f"input must have shape (B, {w.k}, 8), got {x.shape}")
    elif x.shape != want:
        raise ValidationError(f"input must have shape ({w.k}, 8), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("network input contains non-finite values")
    return x


def forward_batch(w: PMWeights, x: np.ndarray, keep_cache: bool = False):
    """Evaluate a (B, k, 8) batch -> (B, N, 4) factors, optional cache."""
    x = _check_input(w, x, batched=True)
    b, k, _ = x.shape
    pre1 = np.einsum("bki,ci->bkc", x, w.enc_w) + w.enc_b
    h1 = np.maximum(pre1, 0.0)
    hp = np.zeros((b, k + 2, w.c_enc))
    hp[:, 1:k + 1] = h1
    prec = np.einsum("bkc,oc->bko", hp[:, 0:k], w.conv_w[0])
    prec += np.einsum("bkc,oc->bko", hp[:, 1:k + 1], w.conv_w[1])
    prec += np.einsum("bkc,oc->bko", hp[:, 2:k + 2], w.conv_w[2])
    prec += w.conv_b
    h2 = np.maximum(prec, 0.0)
    g = h2.mean(axis=1)
    pre3 = g @ w.dec_w.T + w.dec_b
    h3 = np.maximum(pre3, 0.0)
    pre4 = np.einsum("bd,nod->bno", h3, w.head_w) + w.head_b
    h4 = np.maximum(pre4, 0.0)
    out = np.einsum("bno,fo->bnf", h4, w.out_w) + w.out_b
    if not keep_cache:
        return out, None
    cache = {"x": x, "pre1": pre1, "hp": hp, "prec": prec, "g": g,
             "pre3": pre3, "h3": h3, "pre4": pre4, "h4": h4}
    return out, cache


def backward_batch(w: PMWeights, cache: dict, grad_out: np.ndarray) -> dict:
    """Gradients of sum(out * grad_out) w.r.t. every parameter array."""
    x = cache["x"]
    b, k, _ = x.shape
    go = np.asarray(grad_out, dtype=np.float64)
    if go.shape != (b, w.n_heads, 4):
        raise ValidationError(f"grad_out must have shape {(b, w.n_heads, 4)}, got {go.shape}")

    h4 = cache["h4"]
    d_out_b = go.sum(axis=(0, 1))
    d_out_w = np.einsum("bnf,bno->fo", go, h4)
    d_h4 = np.einsum("bnf,fo->bno", go, w.out_w)
    d_pre4 = d_h4 * (cache["pre4"] > 0.0)
    d_head_b = d_pre4.sum(axis=0)
    d_head_w = np.einsum("bno,bd->nod", d_pre4, cache["h3"])
    d_h3 = np.einsum("bno,nod->bd", d_pre4, w.head_w)
    d_pre3 = d_h3 * (cache["pre3"] > 0.0)
    d_dec_b = d_pre3.sum(axis=0)
    d_dec_w = np.einsum("bd,bc->dc", d_pre3, cache["g"])
    d_g = d_pre3 @ w.dec_w
    d_h2 = np.repeat(d_g[:, None, :] / k, k, axis=1)
    d_prec = d_h2 * (cache["prec"] > 0.0)
    d_conv_b = d_prec.sum(axis=(0, 1))
    hp = cache["hp"]
    d_conv_w = np.stack([
        np.einsum("bko,bkc->oc", d_prec, hp[:, d:d + k]) for d in range(3)
    ])
    d_hp = np.zeros_like(hp)
    for d in range(3):
        d_hp[:, d:d + k] += np.einsum("bko,oc->bkc", d_prec, w.conv_w[d])
    d_h1 = d_hp[:, 1:k + 1]
    d_pre1 = d_h1 * (cache["pre1"] > 0.0)
    d_enc_b = d_pre1.sum(axis=(0, 1))
    d_enc_w = np.einsum("bkc,bki->ci", d_pre1, x)
    return {
        "enc_w": d_enc_w, "enc_b": d_enc_b,
        "conv_w": d_conv_w, "conv_b": d_conv_b,
        "dec_w": d_dec_w, "dec_b": d_dec_b,
        "head_w": d_head_w, "head_b": d_head_b,
        "out_w": d_out_w, "out_b": d_out_b,
    }


def pm_forward(w: PMWeights, x: np.ndarray) -> np.ndarray:
    """Single window (k, 8) -> (N, 4) motion factors."""
    x = _check_input(w, x, batched=False)
    out, _ = forward_batch(w, x[None])
    return out[0]


def pm_backward(w: PMWeights, x: np.ndarray, grad_out: np.ndarray) -> dict:
    """Parameter gradients of sum(pm_forward(w, x) * grad_out)."""
    x = _check_input(w, x, batched=False)
    _, cache = forward_batch(w, x[None], keep_cache=True)
    go = np.asarray(grad_out, dtype=np.float64)
    if go.shape != (w.n_heads, 4):
        raise ValidationError(f"grad_out must have shape {(w.n_heads, 4)}, got {go.shape}")
    return backward_batch(w, cache, go[None])


def history_input(history: MotionHistory) -> np.ndarray:
    """Network input rows [motion, motion / interval] for each history step."""
    rows = []
    for m, d in zip(history.motions, history.intervals):
        t = m.as_tuple()
        rows.append(t + tuple(v / d for v in t))
    return np.array(rows, dtype=np.float64)


def pm_predict(w: PMWeights, history: MotionHistory, latest_box: BoundingBox) -> list:
    """Predict boxes for the N frames after the latest processed one.

    Head n's factor is scaled by the history's average per-frame speed
    and the resulting motion is applied to latest_box, so predictions
    are normalized by the latest raw box's scale.
    """
    if history.k != w.k:
        raise ValidationError(f"history length {history.k} != network k {w.k}")
    factors = pm_forward(w, history_input(history))
    speed = average_speed(history)
    boxes = []
    for n in range(w.n_heads):
        m_hat = apply_factor(NormalizedMotion(*factors[n]), speed)
        boxes.append(apply_motion(latest_box, m_hat))
    return boxes


def l1_loss(pred_factors: np.ndarray, history_speed: NormalizedMotion,
            target_motions: np.ndarray):
    """Mean absolute error in motion space, plus its factor gradient.

    The prediction compared against targets is factor * speed, so the
    gradient w.r.t. the factors carries the speed through the product;
    the subgradient at exact ties is 0.
    """
    pred_factors = np.asarray(pred_factors, dtype=np.float64)
    targets = np.asarray(target_motions, dtype=np.float64)
    if pred_factors.shape != targets.shape or pred_factors.ndim != 2 or pred_factors.shape[1] != 4:
        raise ValidationError(
            f"factor/target shapes must match as (N, 4), got {pred_factors.shape} and {targets.shape}"
        )
    speed = np.array(history_speed.as_tuple())
    diff = pred_factors * speed - targets
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) * speed / diff.size
    return loss, grad


def save_weights(w: PMWeights, path, manifest_ref: str = None) -> None:
    layers = {}
    for key, layer_name in _LAYER_NAMES.items():
        arr = getattr(w, key)
        layers[layer_name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "k": w.k, "n_heads": w.n_heads, "c_enc": w.c_enc, "c_dec": w.c_dec,
        "layers": layers,
    }
    if manifest_ref:
        doc["manifest"] = manifest_ref
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_weights(path) -> PMWeights:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid checkpoint: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    arrays = {}
    for key, layer_name in _LAYER_NAMES.items():
        try:
            entry = doc["layers"][layer_name]
            arrays[key] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad layer {layer_name}: {exc}") from None
    return PMWeights(k=int(doc["k"]), n_heads=int(doc["n_heads"]),
                     c_enc=int(doc["c_enc"]), c_dec=int(doc["c_dec"]), **arrays)
