"""Reverse-mode tape over jet-valued computations.

Nodes are appended in evaluation order, so operands always precede their
consumers and one reverse sweep visits each node exactly once.  Two node
families share the machinery:

* scalar jets (``Tape.jet_op``): Jet2 payloads, used for closed-form
  expressions involving trainable scalars;
* batched layer ops: (P, K, n) packed jet blocks plus plain reduction
  nodes, used by the network forward and the loss assembly.

Parameter leaves map onto slices of one flat gradient vector; ``backward``
returns that vector.  Evaluation is deterministic: identical inputs and
parameters produce bit-identical tapes and gradients.
"""
from __future__ import annotations

import numpy as np

from . import jets
from .jets import Jet2


class StructureError(ValueError):
    """Malformed graph or mismatched shapes (as opposed to numeric trouble)."""


class Node:
    __slots__ = ("tape", "idx", "kind", "parents", "data", "ctx")

    def __init__(self, tape, kind, parents, data, ctx=None):
        self.tape = tape
        self.idx = len(tape.nodes)
        self.kind = kind
        self.parents = parents
        self.data = data
        self.ctx = ctx
        tape.nodes.append(self)


class Tape:
    """Single-owner recording of one loss evaluation.

    dim is the spatial dimension of the jets flowing through; n_params the
    length of the flat parameter vector gradients are accumulated into.
    """

    def __init__(self, dim: int, n_params: int):
        self.dim = dim
        self.n_params = n_params
        self.nodes: list[Node] = []
        self.roots: list[int] = []

    # -- leaves ------------------------------------------------------------

    def param(self, values: np.ndarray, offset: int) -> Node:
        """Register a trainable leaf living at [offset, offset+size) of the
        flat parameter vector."""
        values = np.asarray(values, dtype=np.float64)
        if offset < 0 or offset + values.size > self.n_params:
            raise StructureError("parameter slice outside the flat vector")
        node = Node(self, "param", (), jets.constant(values, self.dim),
                    ctx=(offset, values.shape))
        self.roots.append(node.idx)
        return node

    def const_jet(self, jet: Jet2) -> Node:
        return Node(self, "const", (), jet)

    def input_block(self, packed: np.ndarray) -> Node:
        """Seeded coordinate block of shape (P, K, d)."""
        return Node(self, "input", (), packed)

    # -- scalar jet family ---------------------------------------------------

    def _as_jet_node(self, x) -> Node:
        if isinstance(x, Node):
            return x
        if isinstance(x, Jet2):
            return self.const_jet(x)
        return self.const_jet(jets.constant(x, self.dim))

    def jet_op(self, kind: str, a, b=None) -> Node:
        """Record one jet operation; mirrors jets.jet_op for tracked values."""
        a = self._as_jet_node(a)
        if kind in ("add", "sub"):
            b = self._as_jet_node(b)
            data = jets.add(a.data, b.data) if kind == "add" else jets.sub(a.data, b.data)
            return Node(self, kind, (a, b), data)
        if kind == "mul":
            b = self._as_jet_node(b)
            return Node(self, "mul", (a, b), jets.mul(a.data, b.data))
        if kind == "div":
            b = self._as_jet_node(b)
            v = b.data.value
            if np.any(v == 0.0):
                raise jets.DomainError("division by a jet with zero value")
            rec = Node(self, "unary", (b,),
                       jets.compose(b.data, 1.0 / v, -1.0 / v**2, 2.0 / v**3),
                       ctx=(-1.0 / v**2, 2.0 / v**3, -6.0 / v**4))
            return Node(self, "mul", (a, rec), jets.mul(a.data, rec.data))
        if kind == "neg":
            return Node(self, "unary", (a,), jets.neg(a.data), ctx=(-1.0, 0.0, 0.0))
        if kind == "scale":
            c = float(b)
            return Node(self, "unary", (a,), jets.scale(a.data, c), ctx=(c, 0.0, 0.0))
        if kind == "pow":
            e = float(b)
            v = a.data.value
            if np.any(v <= 0.0):
                raise jets.DomainError("pow requires a positive base")
            return Node(self, "unary", (a,), jets.jpow(a.data, e),
                        ctx=(e * v ** (e - 1), e * (e - 1) * v ** (e - 2),
                             e * (e - 1) * (e - 2) * v ** (e - 3)))
        if kind in _UNARY_TABLES:
            f0, f1, f2, f3 = _UNARY_TABLES[kind](a.data.value)
            return Node(self, "unary", (a,), jets.compose(a.data, f0, f1, f2),
                        ctx=(f1, f2, f3))
        raise ValueError(f"unknown jet operation {kind!r}")


def _tab_sin(v):
    s, c = np.sin(v), np.cos(v)
    return s, c, -s, -c


def _tab_cos(v):
    s, c = np.sin(v), np.cos(v)
    return c, -s, -c, s


def _tab_exp(v):
    e = np.exp(v)
    return e, e, e, e


def _tab_tanh(v):
    t = np.tanh(v)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1, -2.0 * d1 * (1.0 - 3.0 * t * t)


def _tab_sigmoid(v):
    s = 1.0 / (1.0 + np.exp(-v))
    d1 = s * (1.0 - s)
    return s, d1, d1 * (1.0 - 2.0 * s), d1 * (1.0 - 6.0 * s + 6.0 * s * s)


_UNARY_TABLES = {
    "sin": _tab_sin,
    "cos": _tab_cos,
    "exp": _tab_exp,
    "tanh": _tab_tanh,
    "sigmoid": _tab_sigmoid,
}


# ---------------------------------------------------------------------------
# reverse sweep


def _zero_adjoint(node: Node):
    d = node.data
    if isinstance(d, Jet2):
        return Jet2(np.zeros_like(d.value), np.zeros_like(d.grad), np.zeros_like(d.hess))
    if isinstance(d, np.ndarray):
        return np.zeros_like(d)
    return 0.0


def _sum_to_shape(arr, shape):
    arr = np.asarray(arr)
    extra = arr.ndim - len(shape)
    if extra > 0:
        arr = arr.sum(axis=tuple(range(extra)))
    return arr


def backward(tape: Tape, loss_node: Node) -> np.ndarray:
    """Accumulate d(loss)/d(theta) for every registered parameter.

    The loss node must hold a scalar: either a plain float/0-d array or a
    jet whose value component is the loss.
    """
    if loss_node.tape is not tape or tape.nodes[loss_node.idx] is not loss_node:
        raise StructureError("loss node does not belong to this tape")
    grad = np.zeros(tape.n_params)
    adjoints: dict[int, object] = {}
    if isinstance(loss_node.data, Jet2):
        if np.asarray(loss_node.data.value).size != 1:
            raise StructureError("loss node must hold a scalar")
        seed = _zero_adjoint(loss_node)
        seed.value = np.ones_like(loss_node.data.value)
        adjoints[loss_node.idx] = seed
    else:
        if np.asarray(loss_node.data).size != 1:
            raise StructureError("loss node must hold a scalar")
        adjoints[loss_node.idx] = np.ones_like(np.asarray(loss_node.data, dtype=np.float64))

    def acc(parent: Node, contrib):
        cur = adjoints.get(parent.idx)
        if cur is None:
            adjoints[parent.idx] = contrib
        elif isinstance(cur, Jet2):
            adjoints[parent.idx] = Jet2(cur.value + contrib.value,
                                        cur.grad + contrib.grad,
                                        cur.hess + contrib.hess)
        else:
            adjoints[parent.idx] = cur + contrib

    for node in reversed(tape.nodes[: loss_node.idx + 1]):
        a = adjoints.pop(node.idx, None)
        if a is None:
            continue
        rule = _BACKWARD_RULES.get(node.kind)
        if rule is None:
            if node.kind in ("const", "input"):
                continue
            if node.kind == "param":
                offset, shape = node.ctx
                grad[offset: offset + int(np.prod(shape, dtype=int))] += (
                    _sum_to_shape(a.value, shape).ravel()
                )
                continue
            raise StructureError(f"no backward rule for node kind {node.kind!r}")
        rule(node, a, acc, grad)
    return grad


# -- rules for the scalar jet family ----------------------------------------


def _packed_pairs(d):
    return np.triu_indices(d)


def _bwd_addsub(node, a, acc, grad):
    x, y = node.parents
    acc(x, a)
    if node.kind == "add":
        acc(y, a)
    else:
        acc(y, Jet2(-a.value, -a.grad, -a.hess))


def _bwd_mul(node, a, acc, grad):
    x, y = node.parents
    for target, other in ((x, y.data), (y, x.data)):
        d = other.dim
        iu, ju = _packed_pairs(d)
        aval = (a.value * other.value
                + np.sum(a.grad * other.grad, axis=-1)
                + np.sum(a.hess * other.hess, axis=-1))
        agrad = a.grad * other.value[..., None]
        ahess = a.hess * other.value[..., None]
        # hess slots feed back into gradient slots through the outer product
        for k in range(len(iu)):
            i, j = iu[k], ju[k]
            agrad[..., i] = agrad[..., i] + a.hess[..., k] * other.grad[..., j]
            agrad[..., j] = agrad[..., j] + a.hess[..., k] * other.grad[..., i]
        acc(target, Jet2(aval, agrad, ahess))


def _bwd_unary(node, a, acc, grad):
    (x,) = node.parents
    f1 = np.asarray(node.ctx[0])
    f2 = np.asarray(node.ctx[1])
    f3 = np.asarray(node.ctx[2])
    xj = x.data
    iu, ju = _packed_pairs(xj.dim)
    outer = xj.grad[..., iu] * xj.grad[..., ju]
    aval = (a.value * f1
            + np.sum(a.grad * xj.grad, axis=-1) * f2
            + np.sum(a.hess * (xj.hess * f2[..., None] + outer * f3[..., None]), axis=-1))
    agrad = a.grad * f1[..., None]
    for k in range(len(iu)):
        i, j = iu[k], ju[k]
        agrad[..., i] = agrad[..., i] + a.hess[..., k] * f2 * xj.grad[..., j]
        agrad[..., j] = agrad[..., j] + a.hess[..., k] * f2 * xj.grad[..., i]
    ahess = a.hess * f1[..., None]
    acc(x, Jet2(aval, agrad, ahess))


_BACKWARD_RULES = {
    "add": _bwd_addsub,
    "sub": _bwd_addsub,
    "mul": _bwd_mul,
    "unary": _bwd_unary,
}


def register_backward(kind: str):
    """Modules owning batched node kinds register their adjoint rules here."""
    def deco(fn):
        _BACKWARD_RULES[kind] = fn
        return fn
    return deco
