"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: exactly the primitives a stride-2 convolutional classifier
needs (affine, 5x5/stride-2 convolution, leaky rectifier, sigmoid, softmax,
log, sum and a few glue ops), with gradients w.r.t. both parameters and
inputs. Values are plain numpy arrays; the graph is an append-only tape
(`ComputationRecord`) whose creation order is already topological, so one
reversed sweep backpropagates every node exactly once.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class TensorError(Exception):
    pass


class ShapeMismatchError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class GraphError(TensorError):
    pass


def as_tensor(data, shape=None) -> Array:
    """Coerce to a C-contiguous float64 array, verifying finiteness."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


def _check_finite(arr: Array, op: str) -> Array:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return arr


# ---------------------------------------------------------------------------
# pure value kernels (shared by graph ops, inference and finite differences)
# ---------------------------------------------------------------------------

def affine_value(x: Array, w: Array, b: Array) -> Array:
    return x @ w + b


def conv2d_value(x: Array, k: Array, b: Array, stride: int, pad: int):
    """5x5-style convolution; returns output plus the caches backward needs.

    x: (n, c_in, h, w); k: (c_out, c_in, kh, kw); b: (c_out,).
    """
    n, c, h, w = x.shape
    co, ci, kh, kw = k.shape
    if ci != c:
        raise ShapeMismatchError(f"conv kernel expects {ci} input channels, got {c}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(f"conv output would be empty for input {h}x{w}")
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    mat = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(n * oh * ow, c * kh * kw)
    out = mat @ k.reshape(co, -1).T + b
    out = np.ascontiguousarray(out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2))
    return out, mat, (oh, ow)


def conv2d_input_grad(dout: Array, k: Array, x_shape, stride: int, pad: int) -> Array:
    n, c, h, w = x_shape
    co, ci, kh, kw = k.shape
    _, _, oh, ow = dout.shape
    dmat_out = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n * oh * ow, co)
    dcols = (dmat_out @ k.reshape(co, -1)).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def leaky_value(x: Array, slope: float) -> Array:
    # subgradient at exactly 0 takes the positive-side slope (>= 0 branch)
    return np.where(x >= 0.0, x, slope * x)


def sigmoid_value(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_value(x: Array) -> Array:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_value(x: Array) -> Array:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softplus_value(x: Array) -> Array:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# ---------------------------------------------------------------------------
# computation record (reverse-mode tape)
# ---------------------------------------------------------------------------

class Node:
    """One entry of a ComputationRecord: a value plus its backward rule."""

    __slots__ = ("value", "grad", "requires_grad", "kind", "_backward", "_record")

    def __init__(self, value: Array, kind: str, requires_grad: bool, record):
        self.value = value
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.kind = kind  # "param" | "input" | "const" | "op"
        self._backward: Callable[[Array], None] | None = None
        self._record = record

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g: Array) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class ComputationRecord:
    """Append-only op tape; creation order is the topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    # -- leaves --------------------------------------------------------------

    def leaf(self, value, kind: str = "const", shape=None) -> Node:
        if kind not in ("param", "input", "const"):
            raise GraphError(f"unknown leaf kind {kind!r}")
        node = Node(as_tensor(value, shape), kind, kind != "const", self)
        self.nodes.append(node)
        return node

    def _push(self, value: Array, op: str, parents: Sequence[Node],
              backward: Callable[[Array], None]) -> Node:
        for p in parents:
            if p._record is not self:
                raise GraphError("operand belongs to a different record")
        node = Node(_check_finite(value, op), "op",
                    any(p.requires_grad for p in parents), self)
        if node.requires_grad:
            node._backward = backward
        self.nodes.append(node)
        return node

    # -- primitive ops ---------------------------------------------------------

    def affine(self, x: Node, w: Node, b: Node) -> Node:
        if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeMismatchError(
                f"affine expects (n,{w.shape[0] if w.value.ndim == 2 else '?'}) input, got {x.shape}")
        out = affine_value(x.value, w.value, b.value)

        def backward(g: Array) -> None:
            x._accumulate(g @ w.value.T)
            w._accumulate(x.value.T @ g)
            b._accumulate(g.sum(axis=0))

        return self._push(out, "affine", (x, w, b), backward)

    def conv2d(self, x: Node, k: Node, b: Node, stride: int = 2, pad: int = 2) -> Node:
        out, mat, (oh, ow) = conv2d_value(x.value, k.value, b.value, stride, pad)
        n = x.shape[0]
        co = k.shape[0]

        def backward(g: Array) -> None:
            dmat_out = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, co)
            if k.requires_grad:
                k._accumulate((mat.T @ dmat_out).T.reshape(k.shape))
            if b.requires_grad:
                b._accumulate(dmat_out.sum(axis=0))
            if x.requires_grad:
                x._accumulate(conv2d_input_grad(g, k.value, x.shape, stride, pad))

        return self._push(out, "conv2d", (x, k, b), backward)

    def leaky(self, x: Node, slope: float) -> Node:
        mask = x.value >= 0.0
        out = np.where(mask, x.value, slope * x.value)

        def backward(g: Array) -> None:
            x._accumulate(np.where(mask, g, slope * g))

        return self._push(out, "leaky", (x,), backward)

    def sigmoid(self, x: Node) -> Node:
        s = sigmoid_value(x.value)

        def backward(g: Array) -> None:
            x._accumulate(g * s * (1.0 - s))

        return self._push(s, "sigmoid", (x,), backward)

    def softmax(self, x: Node) -> Node:
        s = softmax_value(x.value)

        def backward(g: Array) -> None:
            x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

        return self._push(s, "softmax", (x,), backward)

    def log_softmax(self, x: Node) -> Node:
        out = log_softmax_value(x.value)
        s = np.exp(out)

        def backward(g: Array) -> None:
            x._accumulate(g - s * g.sum(axis=-1, keepdims=True))

        return self._push(out, "log_softmax", (x,), backward)

    def log(self, x: Node) -> Node:
        out = np.log(x.value)

        def backward(g: Array) -> None:
            x._accumulate(g / x.value)

        return self._push(out, "log", (x,), backward)

    def softplus(self, x: Node) -> Node:
        out = softplus_value(x.value)

        def backward(g: Array) -> None:
            x._accumulate(g * sigmoid_value(x.value))

        return self._push(out, "softplus", (x,), backward)

    def square(self, x: Node) -> Node:
        def backward(g: Array) -> None:
            x._accumulate(2.0 * x.value * g)

        return self._push(x.value * x.value, "square", (x,), backward)

    def sum(self, x: Node) -> Node:
        out = np.asarray(x.value.sum(), dtype=np.float64)

        def backward(g: Array) -> None:
            x._accumulate(np.broadcast_to(g, x.shape).copy() if x.shape else np.asarray(g))

        return self._push(out, "sum", (x,), backward)

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"add shapes differ: {a.shape} vs {b.shape}")

        def backward(g: Array) -> None:
            a._accumulate(g)
            b._accumulate(g)

        return self._push(a.value + b.value, "add", (a, b), backward)

    def scale(self, x: Node, c: float) -> Node:
        def backward(g: Array) -> None:
            x._accumulate(c * g)

        return self._push(c * x.value, "scale", (x,), backward)

    def mul_const(self, x: Node, c) -> Node:
        """Elementwise product with a constant array of the same shape."""
        carr = as_tensor(c)
        if carr.shape != x.shape:
            raise ShapeMismatchError(f"mul_const shapes differ: {x.shape} vs {carr.shape}")

        def backward(g: Array) -> None:
            x._accumulate(carr * g)

        return self._push(x.value * carr, "mul_const", (x,), backward)

    def select(self, x: Node, idx) -> Node:
        """Row gather: out[i] = x[i, idx[i]] for a 2D operand."""
        idx = np.asarray(idx, dtype=np.intp)
        if x.value.ndim != 2 or idx.shape != (x.shape[0],):
            raise ShapeMismatchError("select expects a 2D operand and one index per row")
        rows = np.arange(x.shape[0])
        out = x.value[rows, idx]

        def backward(g: Array) -> None:
            dx = np.zeros_like(x.value)
            dx[rows, idx] = g
            x._accumulate(dx)

        return self._push(out, "select", (x,), backward)

    def reshape(self, x: Node, shape) -> Node:
        out = x.value.reshape(shape)

        def backward(g: Array) -> None:
            x._accumulate(g.reshape(x.shape))

        return self._push(out, "reshape", (x,), backward)

    # -- backward sweep --------------------------------------------------------

    def backward(self, out: Node) -> None:
        """Seed d(out)/d(out) = 1 and sweep the tape once, in reverse."""
        if out._record is not self:
            raise GraphError("output node belongs to a different record")
        if out.value.shape != ():
            raise GraphError(f"backward requires a scalar node, got shape {out.shape}")
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def param_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "param"]

    def input_node(self) -> Node:
        inputs = [n for n in self.nodes if n.kind == "input"]
        if len(inputs) != 1:
            raise GraphError(f"record has {len(inputs)} registered inputs, expected exactly 1")
        return inputs[0]


# ---------------------------------------------------------------------------
# layer specs and network forward
# ---------------------------------------------------------------------------

DEFAULT_LEAKY_SLOPE = 0.2
CONV_KERNEL = 5
CONV_STRIDE = 2
CONV_PAD = 2  # keeps the 28x28 stack at 14 -> 7 -> 4 -> 2


@dataclass(frozen=True)
class LayerSpec:
    """One feature-stack layer: dense, 5x5/stride-2 conv, leaky or flatten."""

    kind: str                 # "dense" | "conv" | "leaky" | "flatten"
    in_width: int = 0         # dense input width / conv input channels
    out_width: int = 0        # dense output width / conv output channels
    slope: float = DEFAULT_LEAKY_SLOPE
    pad: int = CONV_PAD


def dense(in_width: int, out_width: int) -> LayerSpec:
    return LayerSpec("dense", in_width, out_width)


def conv(in_channels: int, out_channels: int, pad: int = CONV_PAD) -> LayerSpec:
    return LayerSpec("conv", in_channels, out_channels, pad=pad)


def leaky(slope: float = DEFAULT_LEAKY_SLOPE) -> LayerSpec:
    return LayerSpec("leaky", slope=slope)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def layer_param_shapes(spec: Sequence[LayerSpec]) -> list[tuple[tuple, tuple]]:
    """(weight_shape, bias_shape) per parameterized layer, in layer order."""
    shapes = []
    for layer in spec:
        if layer.kind == "dense":
            shapes.append(((layer.in_width, layer.out_width), (layer.out_width,)))
        elif layer.kind == "conv":
            shapes.append(((layer.out_width, layer.in_width, CONV_KERNEL, CONV_KERNEL),
                           (layer.out_width,)))
    return shapes


def init_layer_params(spec: Sequence[LayerSpec], rng: np.random.Generator) -> list[Array]:
    """He-style init with the leaky gain; biases start at zero."""
    params: list[Array] = []
    slope = next((l.slope for l in spec if l.kind == "leaky"), DEFAULT_LEAKY_SLOPE)
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    for wshape, bshape in layer_param_shapes(spec):
        fan_in = int(np.prod(wshape[1:])) if len(wshape) == 4 else wshape[0]
        params.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=wshape))
        params.append(np.zeros(bshape))
    return params


def feature_width(spec: Sequence[LayerSpec], input_shape: tuple) -> int:
    """Width of the flattened feature vector for one sample of input_shape."""
    probe = np.zeros((1,) + tuple(input_shape))
    rng = np.random.default_rng(0)
    feats = forward_features(init_layer_params(spec, rng), spec, probe)
    return feats.shape[1]


def _feature_graph(record: ComputationRecord, spec: Sequence[LayerSpec],
                   param_nodes: Sequence[Node], x: Node) -> Node:
    out = x
    pi = 0
    for li, layer in enumerate(spec):
        try:
            if layer.kind == "dense":
                if out.value.ndim != 2 or out.shape[1] != layer.in_width:
                    raise ShapeMismatchError(
                        f"expected (n,{layer.in_width}) input, got {out.shape}")
                out = record.affine(out, param_nodes[pi], param_nodes[pi + 1])
                pi += 2
            elif layer.kind == "conv":
                if out.value.ndim != 4 or out.shape[1] != layer.in_width:
                    raise ShapeMismatchError(
                        f"expected (n,{layer.in_width},h,w) input, got {out.shape}")
                out = record.conv2d(out, param_nodes[pi], param_nodes[pi + 1],
                                    stride=CONV_STRIDE, pad=layer.pad)
                pi += 2
            elif layer.kind == "leaky":
                out = record.leaky(out, layer.slope)
            elif layer.kind == "flatten":
                out = record.reshape(out, (out.shape[0], -1))
            else:
                raise ShapeMismatchError(f"unknown layer kind {layer.kind!r}")
        except ShapeMismatchError as exc:
            raise ShapeMismatchError(f"layer {li} ({layer.kind}): {exc}") from None
    if out.value.ndim != 2:
        out = record.reshape(out, (out.shape[0], -1))
    return out


def build_feature_graph(record: ComputationRecord, spec: Sequence[LayerSpec],
                        param_nodes: Sequence[Node], x: Node) -> Node:
    """Append the feature stack to an existing record and return its output."""
    return _feature_graph(record, spec, param_nodes, x)


def forward_network(params: Sequence[Array], spec: Sequence[LayerSpec],
                    x) -> tuple[Array, ComputationRecord]:
    """Run the feature stack on a batch, returning features and an open record.

    The record registers x as the differentiable input and every parameter
    tensor as a param leaf; callers may keep building (heads, losses) on
    `record.feature_node` before calling backward.
    """
    record = ComputationRecord()
    x_node = record.leaf(x, kind="input")
    param_nodes = [record.leaf(p, kind="param") for p in params]
    feats = _feature_graph(record, spec, param_nodes, x_node)
    record.feature_node = feats
    return feats.value, record


def forward_features(params: Sequence[Array], spec: Sequence[LayerSpec], x) -> Array:
    """Inference-only feature pass (no tape kept)."""
    out = as_tensor(x)
    pi = 0
    for li, layer in enumerate(spec):
        try:
            if layer.kind == "dense":
                if out.ndim != 2 or out.shape[1] != layer.in_width:
                    raise ShapeMismatchError(f"expected (n,{layer.in_width}), got {out.shape}")
                out = affine_value(out, params[pi], params[pi + 1])
                pi += 2
            elif layer.kind == "conv":
                if out.ndim != 4 or out.shape[1] != layer.in_width:
                    raise ShapeMismatchError(f"expected (n,{layer.in_width},h,w), got {out.shape}")
                out, _, _ = conv2d_value(out, params[pi], params[pi + 1], CONV_STRIDE, layer.pad)
                pi += 2
            elif layer.kind == "leaky":
                out = leaky_value(out, layer.slope)
            elif layer.kind == "flatten":
                out = out.reshape(out.shape[0], -1)
        except ShapeMismatchError as exc:
            raise ShapeMismatchError(f"layer {li} ({layer.kind}): {exc}") from None
    if out.ndim != 2:
        out = out.reshape(out.shape[0], -1)
    return out


# ---------------------------------------------------------------------------
# gradient extraction and checking
# ---------------------------------------------------------------------------

def param_gradients(record: ComputationRecord, loss: Node) -> list[Array]:
    """d(loss)/dθ for every param leaf, in declaration order."""
    record.backward(loss)
    return [np.zeros_like(n.value) if n.grad is None else n.grad
            for n in record.param_nodes()]


def input_gradient(record: ComputationRecord, scalar: Node) -> Array:
    """d(scalar)/dx for the record's registered differentiable input."""
    x = record.input_node()
    record.backward(scalar)
    return np.zeros_like(x.value) if x.grad is None else x.grad


@dataclass
class GradCheckReport:
    max_rel_err_params: float
    max_rel_err_input: float
    coords_checked: int


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def gradient_check(spec: Sequence[LayerSpec], seed: int, input_shape: tuple,
                   head: str = "sigmoid", n_coords: int = 20,
                   h: float = 1e-5) -> GradCheckReport:
    """Analytic vs central-finite-difference gradients on a random network."""
    gen = np.random.default_rng(seed)
    params = init_layer_params(spec, gen)
    # non-degenerate random weights for the check (He init already random;
    # nudge biases off zero so their gradients are exercised away from kinks)
    params = [p + 0.05 * gen.standard_normal(p.shape) for p in params]
    x = gen.standard_normal((2,) + tuple(input_shape))
    width = feature_width(spec, input_shape)
    if head == "sigmoid":
        hw = gen.normal(0.0, 1.0 / np.sqrt(width), size=(width, 1))
        hb = gen.normal(0.0, 0.1, size=(1,))
    elif head == "softmax":
        hw = gen.normal(0.0, 1.0 / np.sqrt(width), size=(width, 3))
        hb = gen.normal(0.0, 0.1, size=(3,))
        labels = gen.integers(0, 3, size=2)
    elif head == "quadratic":
        hw = hb = None
    else:
        raise ValueError(f"unknown head {head!r}")

    def build_loss(ps: Sequence[Array], xs: Array):
        record = ComputationRecord()
        x_node = record.leaf(xs, kind="input")
        p_nodes = [record.leaf(p, kind="param") for p in ps]
        feats = _feature_graph(record, spec, p_nodes, x_node)
        if head == "quadratic":
            loss = record.scale(record.sum(record.square(feats)), 0.5)
            return record, loss, x_node
        w_node = record.leaf(hw, kind="param")
        b_node = record.leaf(hb, kind="param")
        logits = record.affine(feats, w_node, b_node)
        if head == "sigmoid":
            loss = record.sum(record.sigmoid(logits))
        else:
            loss = record.scale(record.sum(record.select(record.log_softmax(logits), labels)), -1.0)
        return record, loss, x_node

    record, loss, x_node = build_loss(params, x)
    record.backward(loss)
    grads = [n.grad if n.grad is not None else np.zeros_like(n.value)
             for n in record.param_nodes()]
    gx = x_node.grad if x_node.grad is not None else np.zeros_like(x)

    def loss_value(ps, xs) -> float:
        _, node, _ = build_loss(ps, xs)
        return float(node.value)

    all_params = params if head == "quadratic" else params + [hw, hb]
    max_p = 0.0
    checked = 0
    for _ in range(n_coords):
        ti = int(gen.integers(0, len(all_params)))
        flat = all_params[ti].reshape(-1)
        ci = int(gen.integers(0, flat.size))
        orig = flat[ci]
        flat[ci] = orig + h
        up = loss_value(all_params[:len(params)], x)
        flat[ci] = orig - h
        down = loss_value(all_params[:len(params)], x)
        flat[ci] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[ti].reshape(-1)[ci]
        max_p = max(max_p, _rel_err(analytic, numeric))
        checked += 1

    max_x = 0.0
    xflat = x.reshape(-1)
    for _ in range(n_coords):
        ci = int(gen.integers(0, xflat.size))
        orig = xflat[ci]
        xflat[ci] = orig + h
        up = loss_value(params, x)
        xflat[ci] = orig - h
        down = loss_value(params, x)
        xflat[ci] = orig
        numeric = (up - down) / (2 * h)
        analytic = gx.reshape(-1)[ci]
        max_x = max(max_x, _rel_err(analytic, numeric))
        checked += 1

    return GradCheckReport(max_p, max_x, checked)
