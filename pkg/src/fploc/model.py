"""GCN + MLP fingerprint classifier and the fully-connected baseline.

Network (per fingerprint ``x`` of shape N x n_s, P the propagation matrix):

    X1 = relu(P @ x  @ theta0)
    X2 = relu(P @ X1 @ theta1)
    F  = flatten(x - X2)              # or concat(x, X1, X2) with mlp_input="concat"
    p  = softmax(fc3(relu(fc2(relu(fc1(F))))))

Forward and backward passes are written by hand and vectorized over a leading
batch axis. A single fingerprint may be passed as an (N, n_s) array; it is
treated as a batch of one.
"""

from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .core_math import PROB_CLIP, glorot_uniform, make_rng, relu, relu_mask, softmax
from .errors import ContractError, LabelError, NumericError, ShapeError

GCN_HIDDEN = (64, 32)
DNN_HIDDEN = (256, 128, 64)
MLP_INPUTS = ("difference", "concat")


class _ParamsMixin:
    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.metadata.get("param", True)}

    def with_arrays(self, arrays: dict):
        return replace(self, **arrays)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


def _param():
    return field(metadata={"param": True})


@dataclass
class ModelParams(_ParamsMixin):
    theta0: np.ndarray = _param()
    theta1: np.ndarray = _param()
    fc1_w: np.ndarray = _param()
    fc1_b: np.ndarray = _param()
    fc2_w: np.ndarray = _param()
    fc2_b: np.ndarray = _param()
    fc3_w: np.ndarray = _param()
    fc3_b: np.ndarray = _param()
    mlp_input: str = field(default="difference", metadata={"param": False})

    kind = "gcn"

    @property
    def n_s(self) -> int:
        return self.theta0.shape[0]

    @property
    def n_classes(self) -> int:
        return self.fc3_w.shape[1]

    @property
    def n_ap(self) -> int:
        width = self.fc1_w.shape[0] // self.n_s
        return width // 3 if self.mlp_input == "concat" else width

    def fc_layers(self):
        return [(self.fc1_w, self.fc1_b), (self.fc2_w, self.fc2_b), (self.fc3_w, self.fc3_b)]

    def check_shapes(self) -> None:
        s = self.n_s
        if self.theta0.shape != (s, s) or self.theta1.shape != (s, s):
            raise ShapeError(f"GCN weights must be {s}x{s}: got {self.theta0.shape}, {self.theta1.shape}")
        if self.mlp_input not in MLP_INPUTS:
            raise ShapeError(f"unknown mlp_input {self.mlp_input!r}")
        _check_chain(self.fc_layers(), self.fc1_w.shape[0])
        if self.fc1_w.shape[1] != GCN_HIDDEN[0] or self.fc2_w.shape[1] != GCN_HIDDEN[1]:
            raise ShapeError(f"MLP hidden widths must be {GCN_HIDDEN}")


@dataclass
class BaselineDnnParams(_ParamsMixin):
    fc1_w: np.ndarray = _param()
    fc1_b: np.ndarray = _param()
    fc2_w: np.ndarray = _param()
    fc2_b: np.ndarray = _param()
    fc3_w: np.ndarray = _param()
    fc3_b: np.ndarray = _param()
    fc4_w: np.ndarray = _param()
    fc4_b: np.ndarray = _param()
    n_s: int = field(default=1, metadata={"param": False})

    kind = "dnn"
    mlp_input = None

    @property
    def n_classes(self) -> int:
        return self.fc4_w.shape[1]

    @property
    def n_ap(self) -> int:
        return self.fc1_w.shape[0] // self.n_s

    def fc_layers(self):
        return [(self.fc1_w, self.fc1_b), (self.fc2_w, self.fc2_b),
                (self.fc3_w, self.fc3_b), (self.fc4_w, self.fc4_b)]

    def check_shapes(self) -> None:
        _check_chain(self.fc_layers(), self.fc1_w.shape[0])


def _check_chain(layers, width_in) -> None:
    width = width_in
    for i, (w, b) in enumerate(layers, 1):
        if w.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
            raise ShapeError(f"fc{i} has weight {w.shape} and bias {b.shape}; expected input width {width}")
        width = w.shape[1]


def _fc_init(rng, widths):
    out = {}
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:]), 1):
        out[f"fc{i}_w"] = glorot_uniform(rng, fi, fo)
        out[f"fc{i}_b"] = np.zeros(fo)
    return out


def init_gcn_params(n_ap: int, n_s: int, n_classes: int, seed: int = 0,
                    mlp_input: str = "difference") -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from a seeded generator."""
    if mlp_input not in MLP_INPUTS:
        raise ShapeError(f"unknown mlp_input {mlp_input!r}")
    rng = make_rng(seed)
    theta0 = glorot_uniform(rng, n_s, n_s)
    theta1 = glorot_uniform(rng, n_s, n_s)
    width = n_ap * n_s * (3 if mlp_input == "concat" else 1)
    fc = _fc_init(rng, (width, *GCN_HIDDEN, n_classes))
    return ModelParams(theta0=theta0, theta1=theta1, mlp_input=mlp_input, **fc)


def init_dnn_params(n_ap: int, n_s: int, n_classes: int, seed: int = 0) -> BaselineDnnParams:
    rng = make_rng(seed)
    fc = _fc_init(rng, (n_ap * n_s, *DNN_HIDDEN, n_classes))
    return BaselineDnnParams(n_s=n_s, **fc)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"fingerprints must be (N, n_s) or (B, N, n_s), got {x.shape}")
    return x


def _finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {layer}")
    return a


def propagate(prop: np.ndarray, x: np.ndarray) -> np.ndarray:
    """prop @ x[b] for every batch entry, as one matrix product."""
    b, n, s = x.shape
    flat = x.transpose(0, 2, 1).reshape(b * s, n)
    return (flat @ prop.T).reshape(b, s, n).transpose(0, 2, 1)


def gcn_layer(x, graph, theta) -> np.ndarray:
    """relu(P @ x @ theta) for one fingerprint (N, n_s) or a batch (B, N, n_s)."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.shape[-2] != graph.n_ap or theta.shape != (x.shape[-1], x.shape[-1]):
        raise ShapeError(f"gcn_layer: x {x.shape}, graph {graph.n_ap} nodes, theta {theta.shape}")
    return relu(graph.propagation @ x @ theta)


@dataclass
class MlpTrace:
    inputs: list  # input to each FC layer
    pre: list  # pre-activation of each FC layer
    probs: np.ndarray


def _mlp_forward(f, layers) -> MlpTrace:
    inputs, pre = [], []
    h = f
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        z = _finite(h @ w + b, f"fc{i + 1}")
        pre.append(z)
        h = softmax(z) if i == last else relu(z)
    return MlpTrace(inputs, pre, _finite(h, "softmax"))


def _targets(targets, batch, n_classes) -> np.ndarray:
    t = np.atleast_1d(np.asarray(targets))
    if t.shape != (batch,):
        raise LabelError(f"expected {batch} targets, got shape {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise LabelError("targets must be integer class ids")
    if t.min() < 0 or t.max() >= n_classes:
        raise LabelError(f"target outside [0, {n_classes})")
    return t


def batch_loss(probs: np.ndarray, targets) -> float:
    t = _targets(targets, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(len(t)), t]
    return float(np.mean(-np.log(picked + PROB_CLIP)))


def _mlp_backward(trace: MlpTrace, layers, t) -> tuple[dict, np.ndarray]:
    """Gradients of the mean clipped cross-entropy; returns (grads, dL/d input)."""
    probs = trace.probs
    batch = probs.shape[0]
    rows = np.arange(batch)
    p_t = probs[rows, t]
    # d/dz of -log(p_t + eps) is (p_t / (p_t + eps)) * (p - onehot)
    dz = probs.copy()
    dz[rows, t] -= 1.0
    dz *= (p_t / (p_t + PROB_CLIP))[:, None] / batch
    grads = {}
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[f"fc{i + 1}_w"] = trace.inputs[i].T @ dz
        grads[f"fc{i + 1}_b"] = dz.sum(axis=0)
        dh = dz @ w.T
        if i > 0:
            dz = dh * relu_mask(trace.pre[i - 1])
    return grads, dh


@dataclass
class ForwardTrace:
    x: np.ndarray
    prop_x: np.ndarray  # P @ x
    z1: np.ndarray
    x1: np.ndarray
    prop_x1: np.ndarray  # P @ X1
    z2: np.ndarray
    x2: np.ndarray
    features: np.ndarray  # x - X2 (or the concat stack)
    mlp: MlpTrace
    used: dict  # the exact arrays this pass read; backward refuses anything else
    graph_id: int

    @property
    def probs(self) -> np.ndarray:
        return self.mlp.probs

    @property
    def x_tilde(self) -> np.ndarray:
        return self.x - self.x2


def forward(x, graph, params: ModelParams) -> ForwardTrace:
    x = _finite(_as_batch(x), "input")
    batch, n, s = x.shape
    if n != graph.n_ap or n != params.n_ap or s != params.n_s:
        raise ShapeError(
            f"input {x.shape[1:]} does not match graph ({graph.n_ap} APs) / params "
            f"({params.n_ap} APs, n_s={params.n_s})"
        )
    p = graph.propagation
    prop_x = propagate(p, x)
    z1 = _finite(prop_x @ params.theta0, "gcn1")
    x1 = relu(z1)
    prop_x1 = propagate(p, x1)
    z2 = _finite(prop_x1 @ params.theta1, "gcn2")
    x2 = relu(z2)
    if params.mlp_input == "concat":
        features = np.concatenate([x.reshape(batch, -1), x1.reshape(batch, -1), x2.reshape(batch, -1)], axis=1)
    else:
        features = (x - x2).reshape(batch, n * s)
    mlp = _mlp_forward(features, params.fc_layers())
    return ForwardTrace(x, prop_x, z1, x1, prop_x1, z2, x2, features, mlp, params.arrays(), id(graph))


def _check_trace(trace_used: dict, params) -> None:
    current = params.arrays()
    if trace_used.keys() != current.keys() or any(trace_used[k] is not current[k] for k in current):
        raise ContractError("trace was produced with different parameters; rerun forward")


def backward(trace: ForwardTrace, target, graph, params: ModelParams) -> ModelParams:
    """Exact gradients of the mean cross-entropy over the traced batch.

    Returned as a ``ModelParams`` whose arrays are gradients.
    """
    _check_trace(trace.used, params)
    if trace.graph_id != id(graph):
        raise ContractError("trace was produced with a different graph")
    batch, n, s = trace.x.shape
    t = _targets(target, batch, params.n_classes)
    grads, d_feat = _mlp_backward(trace.mlp, params.fc_layers(), t)

    prop_t = graph.propagation.T
    block = n * s
    if params.mlp_input == "concat":
        d_x1_direct = d_feat[:, block:2 * block].reshape(batch, n, s)
        d_x2 = d_feat[:, 2 * block:].reshape(batch, n, s)
    else:
        d_x1_direct = 0.0
        d_x2 = -d_feat.reshape(batch, n, s)  # skip connection: dF/dX2 = -I

    d_z2 = d_x2 * relu_mask(trace.z2)
    grads["theta1"] = np.einsum("bni,bnj->ij", trace.prop_x1, d_z2)
    d_x1 = propagate(prop_t, d_z2 @ params.theta1.T) + d_x1_direct
    d_z1 = d_x1 * relu_mask(trace.z1)
    grads["theta0"] = np.einsum("bni,bnj->ij", trace.prop_x, d_z1)
    return replace(params, **grads)


@dataclass
class DnnTrace:
    x: np.ndarray
    mlp: MlpTrace
    used: dict

    @property
    def probs(self) -> np.ndarray:
        return self.mlp.probs


def baseline_dnn_forward(x, params: BaselineDnnParams) -> DnnTrace:
    x = _finite(_as_batch(x), "input")
    batch = x.shape[0]
    if x.shape[1] * x.shape[2] != params.fc1_w.shape[0]:
        raise ShapeError(f"input {x.shape[1:]} does not match fc1 width {params.fc1_w.shape[0]}")
    mlp = _mlp_forward(x.reshape(batch, -1), params.fc_layers())
    return DnnTrace(x, mlp, params.arrays())


def baseline_dnn_backward(trace: DnnTrace, target, params: BaselineDnnParams) -> BaselineDnnParams:
    _check_trace(trace.used, params)
    t = _targets(target, trace.x.shape[0], params.n_classes)
    grads, _ = _mlp_backward(trace.mlp, params.fc_layers(), t)
    return replace(params, **grads)


def run_forward(params, x, graph=None):
    if isinstance(params, ModelParams):
        if graph is None:
            raise ShapeError("the GCN model needs a graph")
        return forward(x, graph, params)
    return baseline_dnn_forward(x, params)


def loss_and_grads(params, x, targets, graph=None):
    """Mean cross-entropy and its gradient for either model kind."""
    trace = run_forward(params, x, graph)
    loss = batch_loss(trace.probs, targets)
    if isinstance(params, ModelParams):
        grads = backward(trace, targets, graph, params)
    else:
        grads = baseline_dnn_backward(trace, targets, params)
    return loss, grads, trace.probs


def predict_proba(params, x, graph=None, batch_size: int = 1024) -> np.ndarray:
    x = _as_batch(x)
    out = [run_forward(params, x[i:i + batch_size], graph).probs for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.n_classes))


class Location(NamedTuple):
    x: float
    y: float
    floor: int
    building: int


def decode_location(probs, rp_table) -> Location:
    """Likelihood decoding: coordinates are the probability-weighted RP average,
    floor and building come from the most probable RP (lowest index on ties)."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    rp = np.asarray(rp_table, dtype=np.float64)
    if rp.ndim != 2 or rp.shape[0] != probs.size or rp.shape[1] < 2:
        raise ShapeError(f"{probs.size} probabilities for an RP table of shape {rp.shape}")
    xy = probs @ rp[:, :2]
    k = int(np.argmax(probs))
    floor = int(rp[k, 2]) if rp.shape[1] > 2 else 0
    building = int(rp[k, 3]) if rp.shape[1] > 3 else 0
    return Location(float(xy[0]), float(xy[1]), floor, building)


def decode_batch(probs: np.ndarray, rp_table) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ``decode_location``: returns (xy (B,2), floor (B,), building (B,))."""
    rp = np.asarray(rp_table, dtype=np.float64)
    if probs.shape[1] != rp.shape[0]:
        raise ShapeError(f"{probs.shape[1]} classes for {rp.shape[0]} RPs")
    xy = probs @ rp[:, :2]
    k = np.argmax(probs, axis=1)
    return xy, rp[k, 2].astype(int), rp[k, 3].astype(int)
