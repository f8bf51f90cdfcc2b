"""Minimal reverse-mode autodiff over explicit tapes.

The tape records a straight-line program over float64 arrays.  ``backward``
can either return numeric gradients or *record* the gradient computation as
new nodes on the same tape, so penalties containing input gradients (squared
gradient norms of a discriminator logit) stay differentiable with respect to
the network parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TapeError(ValueError):
    pass


class ShapeMismatch(TapeError):
    pass


class UnboundVariable(TapeError):
    pass


class NonFiniteValue(TapeError):
    pass


LEAKY_SLOPE = 0.2


@dataclass
class Node:
    op: str
    args: tuple[int, ...]
    shape: tuple[int, ...]
    # op-specific payload: scalars for scale_shift, target shape for
    # reshape/bfill, slope for lrelu_mask, constant value for const nodes.
    meta: tuple = ()
    name: str | None = None


def _elemwise_shape(tape, a):
    return tape.nodes[a].shape


class Tape:
    """A recorded computation; node ids are plain ints in insertion order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def shape(self, i: int) -> tuple[int, ...]:
        return self.nodes[i].shape

    def _emit(self, op, args, shape, meta=(), name=None) -> int:
        self.nodes.append(Node(op, tuple(args), tuple(shape), meta, name))
        return len(self.nodes) - 1

    def truncate(self, n: int) -> None:
        del self.nodes[n:]

    # -- leaves ----------------------------------------------------------
    def input(self, name: str, shape) -> int:
        return self._emit("input", (), shape, name=name)

    def const(self, value) -> int:
        v = np.asarray(value, dtype=np.float64)
        return self._emit("const", (), v.shape, meta=(v,))

    # -- primitives ------------------------------------------------------
    def add(self, a: int, b: int) -> int:
        sa, sb = self.shape(a), self.shape(b)
        if sa != sb:
            raise ShapeMismatch(f"add: {sa} vs {sb}")
        return self._emit("add", (a, b), sa)

    def mul(self, a: int, b: int) -> int:
        sa, sb = self.shape(a), self.shape(b)
        if sa != sb:
            raise ShapeMismatch(f"mul: {sa} vs {sb}")
        return self._emit("mul", (a, b), sa)

    def scale_shift(self, x: int, a: float, b: float = 0.0) -> int:
        return self._emit("scale_shift", (x,), self.shape(x), meta=(float(a), float(b)))

    def matmul(self, a: int, b: int) -> int:
        sa, sb = self.shape(a), self.shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise ShapeMismatch(f"matmul: {sa} @ {sb}")
        return self._emit("matmul", (a, b), (sa[0], sb[1]))

    def matvec(self, a: int, v: int) -> int:
        sa, sv = self.shape(a), self.shape(v)
        if len(sa) != 2 or len(sv) != 1 or sa[1] != sv[0]:
            raise ShapeMismatch(f"matvec: {sa} @ {sv}")
        return self._emit("matvec", (a, v), (sa[0],))

    def transpose(self, x: int) -> int:
        s = self.shape(x)
        if len(s) != 2:
            raise ShapeMismatch(f"transpose needs 2-d, got {s}")
        return self._emit("transpose", (x,), (s[1], s[0]))

    def reshape(self, x: int, shape) -> int:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(self.shape(x), dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
            raise ShapeMismatch(f"reshape: {self.shape(x)} -> {shape}")
        return self._emit("reshape", (x,), shape, meta=(self.shape(x),))

    def add_rowvec(self, m: int, v: int) -> int:
        sm, sv = self.shape(m), self.shape(v)
        if len(sm) != 2 or sv != (sm[1],):
            raise ShapeMismatch(f"add_rowvec: {sm} + {sv}")
        return self._emit("add_rowvec", (m, v), sm)

    def tanh(self, x: int) -> int:
        return self._emit("tanh", (x,), self.shape(x))

    def sigmoid(self, x: int) -> int:
        return self._emit("sigmoid", (x,), self.shape(x))

    def softplus(self, x: int) -> int:
        return self._emit("softplus", (x,), self.shape(x))

    def square(self, x: int) -> int:
        return self._emit("square", (x,), self.shape(x))

    def lrelu_mask(self, x: int, slope: float) -> int:
        # derivative mask of (leaky-)relu; its own derivative is 0 a.e.,
        # right-derivative convention at the kink (x == 0 gets slope 1).
        return self._emit("lrelu_mask", (x,), self.shape(x), meta=(float(slope),))

    def sum(self, x: int) -> int:
        return self._emit("sum", (x,), ())

    def mean(self, x: int) -> int:
        n = int(np.prod(self.shape(x), dtype=np.int64))
        return self._emit("mean", (x,), (), meta=(n,))

    def bfill(self, s: int, shape) -> int:
        if self.shape(s) != ():
            raise ShapeMismatch("bfill needs a scalar source")
        shape = tuple(int(v) for v in shape)
        return self._emit("bfill", (s,), shape, meta=(shape,))

    def rowsum(self, x: int) -> int:
        s = self.shape(x)
        if len(s) != 2:
            raise ShapeMismatch(f"rowsum needs 2-d, got {s}")
        return self._emit("rowsum", (x,), (s[0],))

    def colsum(self, x: int) -> int:
        s = self.shape(x)
        if len(s) != 2:
            raise ShapeMismatch(f"colsum needs 2-d, got {s}")
        return self._emit("colsum", (x,), (s[1],))

    def rowbcast(self, v: int, n: int) -> int:
        s = self.shape(v)
        if len(s) != 1:
            raise ShapeMismatch(f"rowbcast needs 1-d, got {s}")
        return self._emit("rowbcast", (v,), (int(n), s[0]))

    def colbcast(self, v: int, d: int) -> int:
        s = self.shape(v)
        if len(s) != 1:
            raise ShapeMismatch(f"colbcast needs 1-d, got {s}")
        return self._emit("colbcast", (v,), (s[0], int(d)))

    def colmul(self, x: int, v: int) -> int:
        sx, sv = self.shape(x), self.shape(v)
        if len(sx) != 2 or sv != (sx[0],):
            raise ShapeMismatch(f"colmul: {sx} * {sv}")
        return self._emit("colmul", (x, v), sx)

    # -- composite builders ----------------------------------------------
    def neg(self, x: int) -> int:
        return self.scale_shift(x, -1.0)

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))

    def affine(self, x: int, w: int, b: int) -> int:
        return self.add_rowvec(self.matmul(x, w), b)

    def relu(self, x: int) -> int:
        return self.mul(x, self.lrelu_mask(x, 0.0))

    def leaky_relu(self, x: int, slope: float = LEAKY_SLOPE) -> int:
        return self.mul(x, self.lrelu_mask(x, slope))

    def log_sigmoid(self, x: int) -> int:
        return self.neg(self.softplus(self.neg(x)))

    def dot(self, a: int, b: int) -> int:
        return self.sum(self.mul(a, b))

    def norm_sq(self, x: int) -> int:
        return self.sum(self.square(x))

    def rowwise_norm_sq(self, x: int) -> int:
        return self.rowsum(self.square(x))


def _stable_sigmoid(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _stable_softplus(t):
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def _eval_node(node: Node, vals, bindings):
    op = node.op
    if op == "input":
        if node.name not in bindings:
            raise UnboundVariable(f"variable {node.name!r} is not bound")
        v = np.asarray(bindings[node.name], dtype=np.float64)
        if v.shape != node.shape:
            raise ShapeMismatch(
                f"binding for {node.name!r} has shape {v.shape}, tape expects {node.shape}"
            )
        return v
    a = [vals[i] for i in node.args]
    if op == "const":
        return node.meta[0]
    if op == "add":
        return a[0] + a[1]
    if op == "mul":
        return a[0] * a[1]
    if op == "scale_shift":
        return node.meta[0] * a[0] + node.meta[1]
    if op == "matmul":
        return np.dot(a[0], a[1])
    if op == "matvec":
        return np.dot(a[0], a[1])
    if op == "transpose":
        return a[0].T
    if op == "reshape":
        return a[0].reshape(node.shape)
    if op == "add_rowvec":
        return a[0] + a[1]
    if op == "tanh":
        return np.tanh(a[0])
    if op == "sigmoid":
        return _stable_sigmoid(a[0])
    if op == "softplus":
        return _stable_softplus(a[0])
    if op == "square":
        return a[0] * a[0]
    if op == "lrelu_mask":
        return np.where(a[0] >= 0.0, 1.0, node.meta[0])
    if op == "sum":
        return np.sum(a[0])
    if op == "mean":
        return np.sum(a[0]) / node.meta[0]
    if op == "bfill":
        return np.full(node.meta[0], float(a[0]))
    if op == "rowsum":
        return np.sum(a[0], axis=1)
    if op == "colsum":
        return np.sum(a[0], axis=0)
    if op == "rowbcast":
        return np.broadcast_to(a[0], node.shape).copy()
    if op == "colbcast":
        return np.broadcast_to(a[0][:, None], node.shape).copy()
    if op == "colmul":
        return a[0] * a[1][:, None]
    raise TapeError(f"unknown op {op!r}")


def evaluate(tape: Tape, bindings: dict, start: int = 0, vals: list | None = None):
    """Run the tape forward; returns the list of per-node values.

    Identical bindings give bit-identical values (fixed evaluation order,
    one numpy call per node).  Any non-finite intermediate raises.
    """
    if vals is None:
        vals = []
    for i in range(start, len(tape.nodes)):
        node = tape.nodes[i]
        v = np.asarray(_eval_node(node, vals, bindings), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NonFiniteValue(f"node {i} ({node.op}) produced a non-finite value")
        vals.append(v)
    return vals


def _vjp(tape: Tape, node_id: int, dy: int) -> list[tuple[int, int]]:
    """Emit nodes computing the VJP of ``node_id``; returns (arg, grad) pairs."""
    node = tape.nodes[node_id]
    op = node.op
    if op in ("input", "const", "lrelu_mask"):
        return []
    a = node.args
    if op == "add":
        return [(a[0], dy), (a[1], dy)]
    if op == "mul":
        return [(a[0], tape.mul(dy, a[1])), (a[1], tape.mul(dy, a[0]))]
    if op == "scale_shift":
        return [(a[0], tape.scale_shift(dy, node.meta[0]))]
    if op == "matmul":
        return [
            (a[0], tape.matmul(dy, tape.transpose(a[1]))),
            (a[1], tape.matmul(tape.transpose(a[0]), dy)),
        ]
    if op == "matvec":
        n = tape.shape(a[0])[0]
        k = tape.shape(a[1])[0]
        outer = tape.matmul(tape.reshape(dy, (n, 1)), tape.reshape(a[1], (1, k)))
        return [(a[0], outer), (a[1], tape.matvec(tape.transpose(a[0]), dy))]
    if op == "transpose":
        return [(a[0], tape.transpose(dy))]
    if op == "reshape":
        return [(a[0], tape.reshape(dy, node.meta[0]))]
    if op == "add_rowvec":
        return [(a[0], dy), (a[1], tape.colsum(dy))]
    if op == "tanh":
        one_minus_sq = tape.scale_shift(tape.square(node_id), -1.0, 1.0)
        return [(a[0], tape.mul(dy, one_minus_sq))]
    if op == "sigmoid":
        s_comp = tape.scale_shift(node_id, -1.0, 1.0)
        return [(a[0], tape.mul(dy, tape.mul(node_id, s_comp)))]
    if op == "softplus":
        return [(a[0], tape.mul(dy, tape.sigmoid(a[0])))]
    if op == "square":
        return [(a[0], tape.mul(dy, tape.scale_shift(a[0], 2.0)))]
    if op == "sum":
        return [(a[0], tape.bfill(dy, tape.shape(a[0])))]
    if op == "mean":
        return [(a[0], tape.bfill(tape.scale_shift(dy, 1.0 / node.meta[0]), tape.shape(a[0])))]
    if op == "bfill":
        return [(a[0], tape.sum(dy))]
    if op == "rowsum":
        return [(a[0], tape.colbcast(dy, tape.shape(a[0])[1]))]
    if op == "colsum":
        return [(a[0], tape.rowbcast(dy, tape.shape(a[0])[0]))]
    if op == "rowbcast":
        return [(a[0], tape.colsum(dy))]
    if op == "colbcast":
        return [(a[0], tape.rowsum(dy))]
    if op == "colmul":
        dv = tape.rowsum(tape.mul(dy, a[0]))
        return [(a[0], tape.colmul(dy, a[1])), (a[1], dv)]
    raise TapeError(f"no VJP for op {op!r}")


def record_backward(tape: Tape, output: int, wrt) -> dict[int, int]:
    """Append nodes computing d(output)/d(w) for each w; returns node ids.

    The output must be scalar.  Unreached variables map to zero constants,
    so every requested id has an entry.
    """
    if tape.shape(output) != ():
        raise TapeError("backward output must be a scalar node")
    wrt = list(wrt)
    adjoint: dict[int, int] = {output: tape.const(1.0)}
    needed = set(wrt)
    # nodes that influence the output
    reach_out = {output}
    for i in range(output, -1, -1):
        if i in reach_out:
            reach_out.update(tape.nodes[i].args)
    for i in range(output, -1, -1):
        if i not in reach_out or i not in adjoint:
            continue
        for arg, g in _vjp(tape, i, adjoint[i]):
            if arg in adjoint:
                adjoint[arg] = tape.add(adjoint[arg], g)
            else:
                adjoint[arg] = g
    out: dict[int, int] = {}
    for w in needed:
        if w in adjoint:
            out[w] = adjoint[w]
        else:
            out[w] = tape.const(np.zeros(tape.shape(w)))
    return out


def backward(tape: Tape, output: int, wrt, bindings=None, vals=None) -> dict[int, np.ndarray]:
    """Numeric reverse-mode gradients of a scalar output node.

    Gradient formulas are the recorded ones: the tape is extended, the new
    nodes evaluated, and the extension dropped again, so numeric and
    recorded gradients cannot drift apart.
    """
    mark = len(tape)
    if vals is None:
        if bindings is None:
            raise TapeError("backward needs bindings or precomputed values")
        vals = evaluate(tape, bindings)
    grad_nodes = record_backward(tape, output, wrt)
    try:
        evaluate(tape, bindings or {}, start=mark, vals=vals)
        grads = {w: vals[g].copy() for w, g in grad_nodes.items()}
    finally:
        tape.truncate(mark)
        del vals[mark:]
    return grads


def input_grad_sq_norm(tape: Tape, logit: int, x: int) -> int:
    """Node for the squared input-gradient norm of a scalar logit.

    The gradient is recorded on the tape, so the returned node can itself be
    differentiated with respect to network parameters.
    """
    if tape.shape(logit) != ():
        raise TapeError("logit must be a scalar node")
    g = record_backward(tape, logit, [x])[x]
    return tape.norm_sq(g)


def batch_input_grad_sq_norm(tape: Tape, logits: int, x: int) -> int:
    """Row-wise ``input_grad_sq_norm`` for a batched discriminator.

    ``logits`` has shape (n, 1) and ``x`` shape (n, d); rows are independent,
    so the gradient of the summed logit recovers per-row input gradients.
    """
    total = tape.sum(logits)
    g = record_backward(tape, total, [x])[x]
    return tape.rowwise_norm_sq(g)


def second_order_grad(tape: Tape, objective: int, wrt, bindings) -> dict[int, np.ndarray]:
    """Gradient of an objective that already contains recorded input
    gradients (e.g. the gradient-norm penalty) w.r.t. parameters."""
    return backward(tape, objective, wrt, bindings=bindings)
