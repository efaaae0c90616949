"""Dense float64 tensors, reverse-mode autodiff, MLPs, Adam, and checkpoints.

Values are numpy float64 arrays wrapped in graph ``Node``s. Every primitive
op defines its vector-Jacobian products *in terms of the same primitives*, so
gradients are themselves differentiable graphs; this is what lets the input
gradient penalty be trained with exact second-order parameter gradients
instead of a finite-difference approximation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointError,
    DimensionError,
    StaleTapeError,
    TrainingDivergenceError,
)

Array = np.ndarray

CHECKPOINT_MAGIC = b"CIAIL1"


# ---------------------------------------------------------------------------
# graph nodes


class Node:
    """One value in the computation graph.

    ``vjps`` holds one callable per parent mapping the incoming gradient node
    to that parent's gradient node. Leaves have no parents.
    """

    __slots__ = ("val", "parents", "vjps")

    def __init__(self, val, parents=(), vjps=()):
        self.val = np.asarray(val, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"Node(shape={self.val.shape})"


class Param(Node):
    """Named leaf holding trainable values; mutated in place by optimizers.

    ``version`` increments on every in-place update so stale tapes can be
    detected.
    """

    __slots__ = ("name", "version")

    def __init__(self, name: str, val: Array):
        super().__init__(val)
        self.name = name
        self.version = 0

    def assign(self, val: Array) -> None:
        if val.shape != self.val.shape:
            raise DimensionError(
                f"param {self.name}: assigned shape {val.shape} != {self.val.shape}"
            )
        self.val = np.asarray(val, dtype=np.float64)
        self.version += 1

    def __repr__(self):
        return f"Param({self.name}, shape={self.val.shape})"


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


def constant(x) -> Node:
    return as_node(x)


# ---------------------------------------------------------------------------
# primitive ops


def _unbroadcast(g: Node, shape: tuple) -> Node:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.val.ndim > len(shape):
        g = sum_(g, axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.val.shape[ax] != 1:
            g = sum_(g, axis=ax, keepdims=True)
    if g.val.shape != shape:
        g = reshape(g, shape)
    return g


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.val + b.val,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.val.shape),
            lambda g: _unbroadcast(g, b.val.shape),
        ),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.val - b.val,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.val.shape),
            lambda g: _unbroadcast(neg(g), b.val.shape),
        ),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.val * b.val,
        (a, b),
        (
            lambda g: _unbroadcast(mul(g, b), a.val.shape),
            lambda g: _unbroadcast(mul(g, a), b.val.shape),
        ),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.val / b.val,
        (a, b),
        (
            lambda g: _unbroadcast(div(g, b), a.val.shape),
            lambda g: _unbroadcast(neg(div(mul(g, a), square(b))), b.val.shape),
        ),
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.val, (a,), (lambda g: neg(g),))


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.val.ndim != 2 or b.val.ndim != 2 or a.val.shape[1] != b.val.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.val.shape} @ {b.val.shape}"
        )
    return Node(
        a.val @ b.val,
        (a, b),
        (
            lambda g: matmul(g, transpose(b)),
            lambda g: matmul(transpose(a), g),
        ),
    )


def transpose(a) -> Node:
    a = as_node(a)
    return Node(a.val.T, (a,), (lambda g: transpose(g),))


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.val.shape
    return Node(a.val.reshape(shape), (a,), (lambda g: reshape(g, old),))


def broadcast_to(a, shape) -> Node:
    a = as_node(a)
    old = a.val.shape
    return Node(
        np.broadcast_to(a.val, shape).copy(),
        (a,),
        (lambda g: _unbroadcast(g, old),),
    )


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    shape = a.val.shape

    def vjp(g):
        if axis is not None and not keepdims:
            kept = list(g.val.shape)
            kept.insert(axis if axis >= 0 else len(shape) + axis, 1)
            g = reshape(g, tuple(kept))
        return broadcast_to(g, shape)

    return Node(a.val.sum(axis=axis, keepdims=keepdims), (a,), (vjp,))


def mean_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    n = a.val.size if axis is None else a.val.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def square(a) -> Node:
    a = as_node(a)
    return Node(a.val * a.val, (a,), (lambda g: mul(g, mul(a, 2.0)),))


def exp(a) -> Node:
    a = as_node(a)
    out = Node(np.exp(a.val), (a,))
    out.vjps = (lambda g: mul(g, out),)
    return out


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.val), (a,), (lambda g: div(g, a),))


def tanh(a) -> Node:
    a = as_node(a)
    out = Node(np.tanh(a.val), (a,))
    out.vjps = (lambda g: mul(g, sub(1.0, square(out))),)
    return out


def relu(a) -> Node:
    a = as_node(a)
    mask = (a.val > 0).astype(np.float64)
    return Node(a.val * mask, (a,), (lambda g: mul(g, mask),))


def sigmoid(a) -> Node:
    a = as_node(a)
    z = a.val
    out_val = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                       np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = Node(out_val, (a,))
    out.vjps = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


def softplus(a) -> Node:
    a = as_node(a)
    return Node(np.logaddexp(0.0, a.val), (a,), (lambda g: mul(g, sigmoid(a)),))


def logsumexp(a, axis: int = 1) -> Node:
    """Row-stable log-sum-exp, keepdims."""
    a = as_node(a)
    m = a.val.max(axis=axis, keepdims=True)
    val = m + np.log(np.exp(a.val - m).sum(axis=axis, keepdims=True))
    out = Node(val, (a,))
    out.vjps = (lambda g: mul(broadcast_to(g, a.val.shape), exp(sub(a, out))),)
    return out


def minimum(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    mask = (a.val <= b.val).astype(np.float64)
    return Node(
        np.minimum(a.val, b.val),
        (a, b),
        (lambda g: mul(g, mask), lambda g: mul(g, 1.0 - mask)),
    )


def clip(a, lo: float, hi: float) -> Node:
    a = as_node(a)
    mask = ((a.val >= lo) & (a.val <= hi)).astype(np.float64)
    return Node(np.clip(a.val, lo, hi), (a,), (lambda g: mul(g, mask),))


def concat_cols(parts) -> Node:
    parts = [as_node(p) for p in parts]
    widths = [p.val.shape[1] for p in parts]
    offs = np.cumsum([0] + widths)

    def make_vjp(i):
        return lambda g: slice_cols(g, int(offs[i]), int(offs[i + 1]))

    return Node(
        np.concatenate([p.val for p in parts], axis=1),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
    )


def slice_cols(a, j0: int, j1: int) -> Node:
    a = as_node(a)
    total = a.val.shape[1]
    return Node(
        a.val[:, j0:j1].copy(), (a,), (lambda g: embed_cols(g, total, j0),)
    )


def embed_cols(a, total: int, j0: int) -> Node:
    a = as_node(a)
    val = np.zeros((a.val.shape[0], total))
    j1 = j0 + a.val.shape[1]
    val[:, j0:j1] = a.val
    return Node(val, (a,), (lambda g: slice_cols(g, j0, j1),))


def gather_cols(a, idx: Array) -> Node:
    """Pick one column per row; returns an (n, 1) node."""
    a = as_node(a)
    idx = np.asarray(idx, dtype=np.intp)
    n, ncols = a.val.shape
    val = a.val[np.arange(n), idx][:, None]
    return Node(val, (a,), (lambda g: scatter_cols(g, idx, ncols),))


def scatter_cols(a, idx: Array, ncols: int) -> Node:
    a = as_node(a)
    idx = np.asarray(idx, dtype=np.intp)
    n = a.val.shape[0]
    val = np.zeros((n, ncols))
    val[np.arange(n), idx] = a.val[:, 0]
    return Node(val, (a,), (lambda g: gather_cols(g, idx),))


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Node, wrt: list[Node], output_grad: Node | None = None) -> list[Node]:
    """Gradient nodes of ``output`` w.r.t. each node in ``wrt``.

    The returned nodes carry graph structure, so they can be differentiated
    again (double backprop).
    """
    if output_grad is None:
        output_grad = constant(np.ones_like(output.val))
    if output_grad.val.shape != output.val.shape:
        raise DimensionError(
            f"output_grad shape {output_grad.val.shape} != output {output.val.shape}"
        )
    order = _toposort(output)
    wanted = {id(w) for w in wrt}
    needed: set[int] = set()
    for node in order:  # parents precede children
        if id(node) in wanted or any(id(p) in needed for p in node.parents):
            needed.add(id(node))
    gmap: dict[int, Node] = {id(output): output_grad}
    for node in reversed(order):
        g = gmap.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if id(parent) not in needed:
                continue
            pg = vjp(g)
            prev = gmap.get(id(parent))
            gmap[id(parent)] = pg if prev is None else add(prev, pg)
    return [
        gmap.get(id(w)) or constant(np.zeros_like(w.val)) for w in wrt
    ]


# ---------------------------------------------------------------------------
# tape: the recorded forward computation


class Tape:
    """Record of one forward pass: ordered op nodes plus leaf bookkeeping.

    Holds the topologically ordered node list (parents precede children),
    the parameter leaves with their versions at record time, and the input
    leaves. Replaying a tape after any recorded parameter was mutated raises
    ``StaleTapeError``.
    """

    def __init__(self, output: Node, params: list[Param], inputs: list[Node]):
        self.output = output
        self.params = list(params)
        self.inputs = list(inputs)
        self.nodes = _toposort(output)
        self._versions = [p.version for p in self.params]

    def check_fresh(self) -> None:
        for p, v in zip(self.params, self._versions):
            if p.version != v:
                raise StaleTapeError(
                    f"param {p.name} mutated after tape was recorded"
                )


@dataclass
class Grads:
    """Backward-pass result: per-parameter and per-input gradient arrays."""

    params: dict[str, Array]
    inputs: list[Array]

    def global_norm(self) -> float:
        sq = sum(float((g * g).sum()) for g in self.params.values())
        return float(np.sqrt(sq))


def backward(tape: Tape, output_grad=None) -> Grads:
    """Run reverse mode over a recorded tape.

    Returns gradients for every recorded parameter and input. The tape must
    not have been invalidated by a parameter update since recording.
    """
    tape.check_fresh()
    og = None if output_grad is None else as_node(output_grad)
    gnodes = grad(tape.output, tape.params + tape.inputs, og)
    np_ = len(tape.params)
    return Grads(
        params={p.name: gn.val for p, gn in zip(tape.params, gnodes[:np_])},
        inputs=[gn.val for gn in gnodes[np_:]],
    )


# ---------------------------------------------------------------------------
# multilayer perceptrons


_ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": lambda x: x}


@dataclass(frozen=True)
class MLPSpec:
    """Widths and activations of a dense feed-forward net.

    ``layer_widths`` includes the input width, e.g. (4, 64, 64, 1).
    """

    layer_widths: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise DimensionError("MLPSpec needs at least input and output widths")
        if any(w <= 0 for w in self.layer_widths):
            raise DimensionError(f"non-positive width in {self.layer_widths}")
        if self.hidden_activation not in ("tanh", "relu"):
            raise DimensionError(f"unknown activation {self.hidden_activation!r}")
        if self.output_activation != "identity":
            raise DimensionError("only identity output activation is supported")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]


class MLP:
    """Dense net: params plus spec. Weights W are (fan_in, fan_out)."""

    def __init__(self, spec: MLPSpec, params: list[Param]):
        self.spec = spec
        self.params = params
        for i in range(len(spec.layer_widths) - 1):
            w, b = params[2 * i], params[2 * i + 1]
            if w.val.shape != (spec.layer_widths[i], spec.layer_widths[i + 1]):
                raise DimensionError(
                    f"layer {i}: weight shape {w.val.shape} does not match spec"
                )
            if b.val.shape != (1, spec.layer_widths[i + 1]):
                raise DimensionError(f"layer {i}: bias shape {b.val.shape}")

    @classmethod
    def init(cls, spec: MLPSpec, rng: np.random.Generator, prefix: str = "") -> "MLP":
        """Xavier-uniform weights, zero biases."""
        params = []
        for i in range(len(spec.layer_widths) - 1):
            fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params.append(Param(f"{prefix}W{i}", w))
            params.append(Param(f"{prefix}b{i}", np.zeros((1, fan_out))))
        return cls(spec, params)

    def apply(self, x: Node) -> Node:
        """Graph-level forward; composes with other ops."""
        x = as_node(x)
        if x.val.ndim != 2 or x.val.shape[1] != self.spec.in_width:
            raise DimensionError(
                f"layer 0 expects input width {self.spec.in_width}, "
                f"got shape {x.val.shape}"
            )
        act = _ACTIVATIONS[self.spec.hidden_activation]
        h = x
        n_layers = len(self.spec.layer_widths) - 1
        for i in range(n_layers):
            h = add(matmul(h, self.params[2 * i]), self.params[2 * i + 1])
            if i < n_layers - 1:
                h = act(h)
        return h

    def forward(self, x: Array) -> tuple[Node, Tape]:
        """Forward pass returning the output node and its tape."""
        x_node = as_node(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x_node.val.shape[0] < 1:
            raise DimensionError("forward needs at least one input row")
        y = self.apply(x_node)
        if not np.isfinite(y.val).all():
            raise TrainingDivergenceError("non-finite values in forward output")
        return y, Tape(y, self.params, [x_node])

    def param_arrays(self) -> dict[str, Array]:
        return {p.name: p.val for p in self.params}

    def load_arrays(self, arrays: dict[str, Array]) -> None:
        for p in self.params:
            if p.name not in arrays:
                raise CheckpointError(f"missing parameter {p.name}")
            p.assign(np.asarray(arrays[p.name], dtype=np.float64))

    def copy(self) -> "MLP":
        return MLP(self.spec, [Param(p.name, p.val.copy()) for p in self.params])


def make_tape(output: Node, mlps: list[MLP], inputs: list[Node]) -> Tape:
    """Tape for a composite graph spanning several nets."""
    params: list[Param] = []
    for m in mlps:
        params.extend(m.params)
    return Tape(output, params, inputs)


# ---------------------------------------------------------------------------
# optimizers and gradient oracles


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter group."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: list[Param], lr: float = 3e-4, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for p in params:
            state.m[p.name] = np.zeros_like(p.val)
            state.v[p.name] = np.zeros_like(p.val)
        return state


def adam_step(state: AdamState, params: list[Param], grads: dict[str, Array]) -> None:
    """One Adam update with bias correction, in place.

    Gradients are clipped by global norm before the update. Non-finite
    gradients abort with the offending parameter's name.
    """
    for p in params:
        g = grads.get(p.name)
        if g is not None and not np.isfinite(g).all():
            raise TrainingDivergenceError(f"non-finite gradient for {p.name}")
    scale = 1.0
    if state.clip_norm > 0:
        sq = sum(float((grads[p.name] ** 2).sum()) for p in params if p.name in grads)
        norm = np.sqrt(sq)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p in params:
        g = grads.get(p.name)
        if g is None:
            continue
        g = g * scale
        m = state.m[p.name] = b1 * state.m[p.name] + (1 - b1) * g
        v = state.v[p.name] = b2 * state.v[p.name] + (1 - b2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.assign(p.val - update)


def finite_diff_grad(f, params: list[Param], h: float = 1e-5) -> dict[str, Array]:
    """Central-difference gradient estimate of a scalar function of params.

    Test oracle: independent of the reverse-mode path. ``f`` is called with
    no arguments and must read the params' current values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out: dict[str, Array] = {}
    for p in params:
        g = np.zeros_like(p.val)
        flat = p.val.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            p.version += 1
            fp = f()
            flat[i] = orig - h
            p.version += 1
            fm = f()
            flat[i] = orig
            p.version += 1
            gflat[i] = (fp - fm) / (2 * h)
        out[p.name] = g
    return out


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(path, arrays: dict[str, Array]) -> None:
    """Write named tensors: magic, then (name, rank, dims, f64 data) records."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<Q", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, Array]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    off = len(CHECKPOINT_MAGIC)
    out: dict[str, Array] = {}
    while off < len(data):
        (nlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<Q", data, off)
        off += 8
        dims = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        out[name] = arr.reshape(dims)
    return out
