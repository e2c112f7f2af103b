"""ResNet approximator for the Stokes fields.

An "N_L x N_N" network has N_L hidden layers of N_N neurons.  Hidden layers
are grouped two per residual stage: the first stage lifts the d coordinates
to width m and carries no shortcut (the published parameter counts rule out
a projection matrix there); every later stage adds the identity shortcut

    t = sigma(W2 . sigma(W1 s + b1) + b2) + s.

A linear head produces (psi, w, p) in 2D, where the velocity is read off the
stream function psi as u = psi_y, v = -psi_x so that div u vanishes by
construction, or (u1, u2, u3, w1, w2, w3, p) directly in 3D.

Parameter counts for 4x8 / 8x8 / 4x16 / 8x16 stream-function networks are
267 / 555 / 915 / 2003.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .jets import Jet2, hess_size
from .problems import FieldSample
from .tape import Node, StructureError, Tape, _UNARY_TABLES, register_backward

HEAD_STREAM_2D = "stream2d"
HEAD_DIRECT_3D = "direct3d"

ACTIVATIONS = ("sin", "tanh", "sigmoid")


@dataclass(frozen=True)
class Activation:
    """Smooth activation with derivatives up to third order."""

    kind: str

    def tables(self, v: np.ndarray):
        """(sigma, sigma', sigma'', sigma''') at v."""
        return _UNARY_TABLES[self.kind](np.asarray(v, dtype=np.float64))

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.kind!r}")


@dataclass
class LinearLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class ResNetBlock:
    layer1: LinearLayer
    layer2: LinearLayer
    activation: Activation

    @property
    def has_shortcut(self) -> bool:
        # identity shortcut only when input and output widths agree
        return self.layer1.in_dim == self.layer2.out_dim


@dataclass
class Network:
    dim: int
    width: int
    hidden_layers: int
    activation: Activation
    head_mode: str
    blocks: list[ResNetBlock]
    head: LinearLayer
    layout: "ParamLayout" = field(repr=False, default=None)

    @property
    def out_dim(self) -> int:
        return 3 if self.head_mode == HEAD_STREAM_2D else 7


@dataclass(frozen=True)
class ParamLayout:
    """Deterministic flattening of every trainable tensor.

    entries: (name, shape, offset) in evaluation order; the same layout is
    produced for a fixed architecture on every run.
    """

    entries: tuple
    n_params: int

    def offset_of(self, name: str) -> int:
        for n, _, off in self.entries:
            if n == name:
                return off
        raise KeyError(name)

    def flat_index(self, name: str, *idx: int) -> int:
        for n, shape, off in self.entries:
            if n == name:
                return off + int(np.ravel_multi_index(idx, shape))
        raise KeyError(name)


def build_network(dim: int, hidden_layers: int, width: int,
                  activation: str = "sin", head_mode: str | None = None) -> Network:
    """Zero-initialised network; call xavier_init before training."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if hidden_layers < 2 or hidden_layers % 2 != 0:
        raise ValueError("hidden layer count must be a positive even number")
    if head_mode is None:
        head_mode = HEAD_STREAM_2D if dim == 2 else HEAD_DIRECT_3D
    if head_mode == HEAD_STREAM_2D and dim != 2:
        raise ValueError("stream-function head requires dim == 2")
    if head_mode == HEAD_DIRECT_3D and dim != 3:
        raise ValueError("direct head requires dim == 3")
    act = Activation(activation)
    blocks = []
    fan_in = dim
    for _ in range(hidden_layers // 2):
        l1 = LinearLayer(np.zeros((width, fan_in)), np.zeros(width))
        l2 = LinearLayer(np.zeros((width, width)), np.zeros(width))
        blocks.append(ResNetBlock(l1, l2, act))
        fan_in = width
    k = 3 if head_mode == HEAD_STREAM_2D else 7
    head = LinearLayer(np.zeros((k, width)), np.zeros(k))
    net = Network(dim, width, hidden_layers, act, head_mode, blocks, head)
    net.layout = _make_layout(net)
    return net


def _iter_tensors(net: Network):
    for bi, block in enumerate(net.blocks):
        yield f"block{bi}.layer1.weights", block.layer1.weights
        yield f"block{bi}.layer1.bias", block.layer1.bias
        yield f"block{bi}.layer2.weights", block.layer2.weights
        yield f"block{bi}.layer2.bias", block.layer2.bias
    yield "head.weights", net.head.weights
    yield "head.bias", net.head.bias


def _make_layout(net: Network) -> ParamLayout:
    entries = []
    offset = 0
    for name, tensor in _iter_tensors(net):
        entries.append((name, tensor.shape, offset))
        offset += tensor.size
    return ParamLayout(tuple(entries), offset)


def param_count(net: Network) -> int:
    return net.layout.n_params


def get_params(net: Network) -> np.ndarray:
    out = np.empty(net.layout.n_params)
    for (_, _, off), (_, tensor) in zip(net.layout.entries, _iter_tensors(net)):
        out[off: off + tensor.size] = tensor.ravel()
    return out


def set_params(net: Network, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (net.layout.n_params,):
        raise StructureError(
            f"expected {net.layout.n_params} parameters, got shape {values.shape}")
    for (_, _, off), (_, tensor) in zip(net.layout.entries, _iter_tensors(net)):
        tensor[...] = values[off: off + tensor.size].reshape(tensor.shape)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    w = rng.normal(0.0, std, shape)
    mask = np.abs(w) > 2.0 * std
    while mask.any():
        w[mask] = rng.normal(0.0, std, int(mask.sum()))
        mask = np.abs(w) > 2.0 * std
    return w


def xavier_init(net: Network, seed: int) -> Network:
    """Truncated normal weights (cut at two standard deviations) with
    std 1/fan_in; zero biases.  Reproducible from the seed."""
    rng = np.random.default_rng(seed)
    for name, tensor in _iter_tensors(net):
        if name.endswith("bias"):
            tensor[...] = 0.0
        else:
            tensor[...] = _trunc_normal(rng, tensor.shape, 1.0 / tensor.shape[1])
    return net


# ---------------------------------------------------------------------------
# forward evaluation on packed jet blocks


def seed_packed(X: np.ndarray) -> np.ndarray:
    """(P, d) points -> (P, K, d) seeded coordinate jets."""
    X = np.asarray(X, dtype=np.float64)
    P, d = X.shape
    K = 1 + d + hess_size(d)
    J = np.zeros((P, K, d))
    J[:, 0, :] = X
    for i in range(d):
        J[:, 1 + i, i] = 1.0
    return J


def _linear_fwd(packed: np.ndarray, layer: LinearLayer) -> np.ndarray:
    P, K, n_in = packed.shape
    Z = (packed.reshape(P * K, n_in) @ layer.weights.T).reshape(P, K, -1)
    Z[:, 0, :] += layer.bias
    return Z


def forward_packed(net: Network, X: np.ndarray, tape: Tape | None = None):
    """Evaluate all head jets at once.

    Returns the head block of shape (P, K, out_dim); with a tape, returns
    the head Node whose .data is that block.
    """
    d = net.dim
    iu, ju = np.triu_indices(d)
    tab = kernels.ACTIVATION_TABLES[net.activation.kind]

    cur = seed_packed(X)
    cur_node = tape.input_block(cur) if tape is not None else None

    def linear(x, x_node, layer, name):
        Z = _linear_fwd(x, layer)
        if tape is None:
            return Z, None
        node = Node(tape, "linear", (x_node,), Z,
                    ctx=(layer.weights, net.layout.offset_of(f"{name}.weights"),
                         net.layout.offset_of(f"{name}.bias")))
        return Z, node

    def act(z, z_node):
        sig, d1, d2, d3 = tab(z[:, 0, :])
        A = kernels.act_jet_fwd(z, sig, d1, d2, iu, ju, d)
        if tape is None:
            return A, None
        node = Node(tape, "act", (z_node,), A, ctx=(z, d1, d2, d3, iu, ju, d))
        return A, node

    for bi, block in enumerate(net.blocks):
        z1, z1n = linear(cur, cur_node, block.layer1, f"block{bi}.layer1")
        a1, a1n = act(z1, z1n)
        z2, z2n = linear(a1, a1n, block.layer2, f"block{bi}.layer2")
        a2, a2n = act(z2, z2n)
        if block.has_shortcut:
            out = a2 + cur
            out_node = Node(tape, "radd", (a2n, cur_node), out) if tape is not None else None
        else:
            out, out_node = a2, a2n
        cur, cur_node = out, out_node

    H, head_node = linear(cur, cur_node, net.head, "head")
    return head_node if tape is not None else H


@register_backward("linear")
def _bwd_linear(node, a, acc, grad):
    (x,) = node.parents
    W, w_off, b_off = node.ctx
    P, K, m = a.shape
    a2 = a.reshape(P * K, m)
    x2 = x.data.reshape(P * K, -1)
    grad[w_off: w_off + W.size] += (a2.T @ x2).ravel()
    grad[b_off: b_off + m] += a[:, 0, :].sum(axis=0)
    acc(x, (a2 @ W).reshape(P, K, -1))


@register_backward("act")
def _bwd_act(node, a, acc, grad):
    (z,) = node.parents
    Z, d1, d2, d3, iu, ju, d = node.ctx
    acc(z, kernels.act_jet_bwd(a, Z, d1, d2, d3, iu, ju, d))


@register_backward("radd")
def _bwd_radd(node, a, acc, grad):
    x, s = node.parents
    acc(x, a)
    acc(s, a)


def register_network_params(net: Network, tape: Tape) -> None:
    """Declare every tensor as a tape root so backward can fill the flat
    gradient; forward references the offsets directly."""
    for (name, _, off), (_, tensor) in zip(net.layout.entries, _iter_tensors(net)):
        tape.param(tensor, off)


# ---------------------------------------------------------------------------
# public jet / field views


def _head_jet(H: np.ndarray, col: int, d: int) -> Jet2:
    return Jet2(H[:, 0, col].copy(), H[:, 1:1 + d, col].copy(), H[:, 1 + d:, col].copy())


def forward_jets(net: Network, x) -> list[Jet2]:
    """Jets of the raw head outputs at one point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    H = forward_packed(net, X)
    out = []
    for c in range(net.out_dim):
        j = _head_jet(H, c, net.dim)
        if single:
            j = Jet2(j.value[0], j.grad[0], j.hess[0])
        out.append(j)
    return out


def fields_batch(net: Network, X: np.ndarray) -> FieldSample:
    """Velocity, pressure, vorticity and their first derivatives at X.

    In 2D the velocity comes from the stream-function jets, so
    u_x + v_y is identically zero (both read the same mixed second
    derivative of psi).
    """
    X = np.asarray(X, dtype=np.float64)
    H = forward_packed(net, X)
    P = X.shape[0]
    if net.head_mode == HEAD_STREAM_2D:
        # slots: 0 value, 1 gx, 2 gy, 3 hxx, 4 hxy, 5 hyy; cols: psi, w, p
        psi_gx, psi_gy = H[:, 1, 0], H[:, 2, 0]
        psi_hxx, psi_hxy, psi_hyy = H[:, 3, 0], H[:, 4, 0], H[:, 5, 0]
        u = np.stack([psi_gy, -psi_gx], axis=1)
        grad_u = np.empty((P, 2, 2))
        grad_u[:, 0, 0] = psi_hxy
        grad_u[:, 0, 1] = psi_hyy
        grad_u[:, 1, 0] = -psi_hxx
        grad_u[:, 1, 1] = -psi_hxy
        return FieldSample(
            dim=2, u=u, p=H[:, 0, 2].copy(), w=H[:, 0, 1].copy(),
            grad_u=grad_u, grad_w=H[:, 1:3, 1].copy(), grad_p=H[:, 1:3, 2].copy(),
        )
    u = H[:, 0, 0:3].copy()
    grad_u = np.transpose(H[:, 1:4, 0:3], (0, 2, 1)).copy()  # [p, i, j] = du_i/dx_j
    w = H[:, 0, 3:6].copy()
    grad_w = np.transpose(H[:, 1:4, 3:6], (0, 2, 1)).copy()
    return FieldSample(dim=3, u=u, p=H[:, 0, 6].copy(), w=w,
                       grad_u=grad_u, grad_w=grad_w, grad_p=H[:, 1:4, 6].copy())


def fields(net: Network, x) -> FieldSample:
    return fields_batch(net, np.asarray(x, dtype=np.float64)[None, :])


def network_field_provider(net: Network):
    """FieldSample provider backed by the network (the loss seam)."""
    return lambda X: fields_batch(net, X)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then the flat parameter vector as raw
# little-endian float64 in layout order.


def save_checkpoint(net: Network, path, seed: int | None = None) -> None:
    header = {
        "format": "vpvstokes-checkpoint",
        "version": 1,
        "dim": net.dim,
        "hidden_layers": net.hidden_layers,
        "width": net.width,
        "activation": net.activation.kind,
        "head_mode": net.head_mode,
        "seed": seed,
        "param_count": net.layout.n_params,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(get_params(net).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Network, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    if header.get("format") != "vpvstokes-checkpoint":
        raise StructureError(f"{path} is not a checkpoint file")
    net = build_network(header["dim"], header["hidden_layers"], header["width"],
                        header["activation"], header["head_mode"])
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if params.size != header["param_count"]:
        raise StructureError("checkpoint payload length does not match header")
    set_params(net, params)
    return net, header
