"""MLP classifier shared by all clients and the server.

The network is a stack of affine+ReLU hidden layers followed by a linear
classification head. The feature extractor is everything up to (and
including) the last hidden activation; the head maps features to logits.
Pixel inputs live in [0, 255] and are divided by 255 at the model boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PIXEL_MAX = 255.0

CHECKPOINT_MAGIC = b"HJLCKPT1"


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_widths: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        if len(self.hidden_widths) == 0:
            raise ValueError("at least one hidden layer is required")
        if any(w <= 0 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_widths, self.num_classes)

    @property
    def feature_dim(self):
        return self.hidden_widths[-1]


@dataclass
class Parameters:
    """Per-layer weights and biases; supports exact vector-space algebra."""

    spec: ModelSpec
    weights: list = field(repr=False)
    biases: list = field(repr=False)
    version: int = 0
    # populated by delta(): per-array rounding errors of the subtraction,
    # consumed by add_scaled(c=1) so reconstruction is bitwise exact
    correction: "Parameters | None" = field(default=None, repr=False)

    def copy(self) -> "Parameters":
        return Parameters(self.spec, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.version,
                          self.correction.copy() if self.correction else None)

    def allclose(self, other: "Parameters", atol=0.0, rtol=0.0) -> bool:
        if self.spec != other.spec:
            return False
        return all(np.allclose(a, b, atol=atol, rtol=rtol)
                   for a, b in zip(self.weights + self.biases,
                                   other.weights + other.biases))

    def equal_bitwise(self, other: "Parameters") -> bool:
        if self.spec != other.spec:
            return False
        return all(np.array_equal(a, b)
                   for a, b in zip(self.weights + self.biases,
                                   other.weights + other.biases))


def init_model(spec: ModelSpec, seed: int) -> Parameters:
    """He-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases.

    Deterministic per (spec, seed).
    """
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Parameters(spec, weights, biases)


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ad.ShapeError(
            f"batch shape {batch.shape} incompatible with input_dim {spec.input_dim}")
    return batch


def as_tensors(params: Parameters, requires_grad=False):
    """Wrap the parameter arrays in (copied) autodiff tensors."""
    ws = [Tensor(w.copy(), requires_grad=requires_grad) for w in params.weights]
    bs = [Tensor(b.copy(), requires_grad=requires_grad) for b in params.biases]
    return ws, bs


def features_graph(ws, bs, x_normalized: Tensor) -> Tensor:
    """Hidden-stack forward on an already-normalized tensor (tracks grads)."""
    h = x_normalized
    for w, b in zip(ws[:-1], bs[:-1]):
        h = ad.relu(ad.affine(h, w, b))
    return h


def logits_graph(ws, bs, x_normalized: Tensor) -> Tensor:
    h = features_graph(ws, bs, x_normalized)
    return ad.affine(h, ws[-1], bs[-1])


def forward_features(params: Parameters, batch: np.ndarray) -> np.ndarray:
    """Activations after the last hidden layer for a pixel-space batch."""
    h = _check_batch(params.spec, batch) / PIXEL_MAX
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h


def forward_logits(params: Parameters, batch: np.ndarray) -> np.ndarray:
    h = forward_features(params, batch)
    return h @ params.weights[-1] + params.biases[-1]


def predict_proba(params: Parameters, batch: np.ndarray) -> np.ndarray:
    return ad.softmax_values(forward_logits(params, batch))


def predict(params: Parameters, batch: np.ndarray) -> np.ndarray:
    return forward_logits(params, batch).argmax(axis=1)


def accuracy(params: Parameters, batch: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(params, batch) == np.asarray(labels)))


# -- parameter algebra (exact, elementwise) ---------------------------------


def _check_specs(a: Parameters, b: Parameters):
    if a.spec != b.spec:
        raise ValueError(f"parameter specs differ: {a.spec} vs {b.spec}")


def _two_sum(x: np.ndarray, y: np.ndarray):
    """Error-free transformation: returns (s, e) with s + e == x + y exactly."""
    s = x + y
    t = s - x
    e = (x - (s - t)) + (y - t)
    return s, e


def _exact_difference(a: np.ndarray, b: np.ndarray):
    """(d, e) with d == fl(a - b) and b + d + e reconstructing a bitwise.

    A single float cannot always reconstruct: when b + d lands exactly on a
    round-to-even tie, an odd-mantissa a is unreachable for any d. The TwoSum
    error term breaks the tie. The nudge loop covers the rare elements where
    the compensated reconstruction itself rounds past the target.
    """
    d, e = _two_sum(a, -b)
    for _ in range(8):
        r = _reconstruct(b, d, e)
        bad = r != a
        if not bad.any():
            return d, e
        e[bad] = np.nextafter(e[bad], np.where(r[bad] < a[bad], np.inf, -np.inf))
    raise ArithmeticError("exact difference did not converge")


def _reconstruct(base: np.ndarray, d: np.ndarray, e: np.ndarray) -> np.ndarray:
    s, lo = _two_sum(base, d)
    return s + (lo + e)


def delta(a: Parameters, b: Parameters) -> Parameters:
    """a - b elementwise, chosen so add_scaled(b, delta(a, b), 1) is a."""
    _check_specs(a, b)
    w_pairs = [_exact_difference(wa, wb) for wa, wb in zip(a.weights, b.weights)]
    b_pairs = [_exact_difference(ba, bb) for ba, bb in zip(a.biases, b.biases)]
    corr = Parameters(a.spec, [e for _, e in w_pairs], [e for _, e in b_pairs])
    return Parameters(a.spec, [d for d, _ in w_pairs], [d for d, _ in b_pairs],
                      correction=corr)


def add_scaled(a: Parameters, d: Parameters, c: float) -> Parameters:
    """a + c * d, elementwise; add_scaled(a, delta(b, a), 1) == b bitwise."""
    _check_specs(a, d)
    if c == 1.0:
        corr = d.correction
        if corr is None:
            return Parameters(a.spec,
                              [wa + wd for wa, wd in zip(a.weights, d.weights)],
                              [ba + bd for ba, bd in zip(a.biases, d.biases)])
        return Parameters(a.spec,
                          [_reconstruct(wa, wd, we) for wa, wd, we in
                           zip(a.weights, d.weights, corr.weights)],
                          [_reconstruct(ba, bd, be) for ba, bd, be in
                           zip(a.biases, d.biases, corr.biases)])
    if c == 0.0:
        return a.copy()
    return Parameters(a.spec,
                      [wa + c * wd for wa, wd in zip(a.weights, d.weights)],
                      [ba + c * bd for ba, bd in zip(a.biases, d.biases)])


def params_hash(params: Parameters) -> str:
    """Stable content hash used to tag attack provenance."""
    import hashlib

    h = hashlib.sha256()
    h.update(repr(params.spec).encode())
    for arr in params.weights + params.biases:
        h.update(arr.tobytes())
    return h.hexdigest()


# -- checkpoint file format --------------------------------------------------
# Layout (little-endian):
#   magic (8 bytes) | format version u32 | input_dim u32 | n_hidden u32 |
#   hidden widths u32[n] | num_classes u32 | then for each layer:
#   rows u32, cols u32, row-major float64 weight values, float64 bias values.


def save_checkpoint(params: Parameters, path) -> None:
    spec = params.spec
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", 1, spec.input_dim, len(spec.hidden_widths)))
        f.write(struct.pack(f"<{len(spec.hidden_widths)}I", *spec.hidden_widths))
        f.write(struct.pack("<I", spec.num_classes))
        for w, b in zip(params.weights, params.biases):
            f.write(struct.pack("<II", *w.shape))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> Parameters:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, input_dim, n_hidden = struct.unpack("<III", f.read(12))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        hidden = struct.unpack(f"<{n_hidden}I", f.read(4 * n_hidden))
        (num_classes,) = struct.unpack("<I", f.read(4))
        spec = ModelSpec(input_dim, hidden, num_classes)
        weights, biases = [], []
        for _ in range(len(spec.layer_dims) - 1):
            rows, cols = struct.unpack("<II", f.read(8))
            w = np.frombuffer(f.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(f.read(8 * cols), dtype="<f8")
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
    return Parameters(spec, weights, biases)
