"""AP relationship graph: adjacency construction and the GCN propagation matrix.

Two adjacency constructions are supported: co-detection frequency over the
training fingerprints, and inverse Euclidean distance between known AP
positions. Both produce a symmetric, nonnegative matrix with a zero diagonal;
self-loops enter only through the identity term of the propagation matrix

    P = I + D^-1/2 A D^-1/2

A dense eigendecomposition route (``spectral_oracle_filter``) is kept for
verifying that a first-order Chebyshev filter with lambda_max = 2 collapses
to ``theta * P @ x``.
"""

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, DegenerateGeometryError, ShapeError, ValidationError

MISSING_RSSI = -110.0


class AdjacencyMethod(str, enum.Enum):
    CO_DETECTION = "codetection"
    INVERSE_DISTANCE = "inverse_distance"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ApGraph:
    n_ap: int
    adjacency: np.ndarray
    degree: np.ndarray
    propagation: np.ndarray
    method: AdjacencyMethod = AdjacencyMethod.CUSTOM

    def adjacency_hash(self) -> str:
        return adjacency_hash(self.adjacency)


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns


def adjacency_hash(adjacency: np.ndarray) -> str:
    a = np.ascontiguousarray(adjacency, dtype="<f8")
    h = hashlib.sha256()
    h.update(repr(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def adjacency_from_codetection(dataset, detect_threshold: float = MISSING_RSSI) -> np.ndarray:
    """A_ij = fraction of training samples in which APs i and j are both detected.

    An AP counts as detected in a sample when any of its time slots reads
    strictly above ``detect_threshold`` (dBm). Only raw, training-role datasets
    are accepted so that no test information leaks into the graph.
    """
    if getattr(dataset, "role", "train") != "train":
        raise ConstructionError("co-detection adjacency must be built from the training set")
    if getattr(dataset, "normalization", None) is not None:
        raise ConstructionError("co-detection adjacency needs raw dBm fingerprints, not normalized ones")
    rssi = np.asarray(dataset.rssi, dtype=np.float64)
    if rssi.ndim != 3 or rssi.shape[0] < 1:
        raise ConstructionError("cannot build co-detection adjacency from an empty dataset")
    detected = (rssi > detect_threshold).any(axis=2).astype(np.float64)
    counts = detected.T @ detected
    adjacency = counts / rssi.shape[0]
    np.fill_diagonal(adjacency, 0.0)
    return adjacency


def adjacency_from_distance(ap_positions) -> np.ndarray:
    pos = np.asarray(ap_positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] not in (2, 3):
        raise ShapeError(f"AP positions must be (N, 2) or (N, 3), got {pos.shape}")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    n = pos.shape[0]
    off = ~np.eye(n, dtype=bool)
    close = np.argwhere(off & (dist < 1e-9))
    if close.size:
        i, j = close[0]
        raise DegenerateGeometryError(f"APs {i} and {j} are co-located (distance {dist[i, j]:.3g} m)")
    adjacency = np.zeros((n, n))
    adjacency[off] = 1.0 / dist[off]
    return adjacency


def _inv_sqrt_degree(degree: np.ndarray) -> np.ndarray:
    # isolated nodes contribute nothing to the normalized term
    out = np.zeros_like(degree)
    nz = degree > 0
    out[nz] = 1.0 / np.sqrt(degree[nz])
    return out


def _validate_adjacency(adjacency) -> np.ndarray:
    a = np.array(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("adjacency has non-finite entries")
    if np.any(a < 0):
        raise ValidationError("adjacency has negative entries")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency is not symmetric")
    if np.any(np.diag(a) != 0):
        raise ValidationError("adjacency diagonal must be zero")
    return a


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    a = _validate_adjacency(adjacency)
    s = _inv_sqrt_degree(a.sum(axis=1))
    return s[:, None] * a * s[None, :]


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    return np.eye(adjacency.shape[0]) - normalized_adjacency(adjacency)


def build_propagation(adjacency, method=AdjacencyMethod.CUSTOM) -> ApGraph:
    a = _validate_adjacency(adjacency)
    degree = a.sum(axis=1)
    s = _inv_sqrt_degree(degree)
    norm = s[:, None] * a * s[None, :]
    # exact symmetry; the elementwise product above can differ in the last ulp
    norm = 0.5 * (norm + norm.T)
    propagation = np.eye(a.shape[0]) + norm
    a.setflags(write=False)
    degree.setflags(write=False)
    propagation.setflags(write=False)
    return ApGraph(a.shape[0], a, degree, propagation, AdjacencyMethod(method))


def graph_from_dataset(dataset, method="codetection", detect_threshold: float = MISSING_RSSI,
                       ap_positions=None) -> ApGraph:
    method = AdjacencyMethod(method)
    if method is AdjacencyMethod.CO_DETECTION:
        a = adjacency_from_codetection(dataset, detect_threshold)
    elif method is AdjacencyMethod.INVERSE_DISTANCE:
        if ap_positions is None:
            ap_positions = getattr(dataset, "ap_positions", None)
        if ap_positions is None:
            raise ConstructionError("inverse-distance adjacency needs AP positions")
        a = adjacency_from_distance(ap_positions)
    else:
        raise ConstructionError(f"cannot derive a {method.value} adjacency from a dataset")
    return build_propagation(a, method)


def spectral_decomposition(graph: ApGraph) -> SpectralDecomposition:
    lap = normalized_laplacian(graph.adjacency)
    lap = 0.5 * (lap + lap.T)
    w, u = np.linalg.eigh(lap)
    return SpectralDecomposition(w, u)


def chebyshev_filter(graph: ApGraph, x, coeffs, lambda_max: float = 2.0) -> np.ndarray:
    """sum_i coeffs[i] * T_i(L_scaled) @ x using the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    n = graph.n_ap
    lap = normalized_laplacian(graph.adjacency)
    scaled = 2.0 * lap / lambda_max - np.eye(n)
    t_prev, t_cur = x, scaled @ x
    out = coeffs[0] * t_prev
    if len(coeffs) > 1:
        out = out + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_prev, t_cur = t_cur, 2.0 * scaled @ t_cur - t_prev
        out = out + c * t_cur
    return out


def spectral_oracle_filter(graph: ApGraph, x, theta: float = 1.0, lambda_max: float = 2.0,
                           max_nodes: int = 1024) -> np.ndarray:
    """Order-2 Chebyshev graph filter evaluated in the Laplacian eigenbasis.

    With a single shared coefficient (theta_0 = theta, theta_1 = -theta) and
    lambda_max = 2 this equals ``theta * graph.propagation @ x``. Only used to
    check that identity; the model itself multiplies by the propagation matrix.
    """
    if graph.n_ap > max_nodes:
        raise ValidationError(f"graph with {graph.n_ap} nodes exceeds the oracle size limit {max_nodes}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != graph.n_ap:
        raise ShapeError(f"signal has {x.shape[0]} rows, graph has {graph.n_ap} nodes")
    dec = spectral_decomposition(graph)
    lam_scaled = 2.0 * dec.eigenvalues / lambda_max - 1.0
    response = theta * 1.0 + (-theta) * lam_scaled  # theta_0 T_0 + theta_1 T_1
    u = dec.eigenvectors
    return u @ (response[:, None] * (u.T @ x))


def save_adjacency_csv(path, adjacency: np.ndarray) -> None:
    np.savetxt(path, np.asarray(adjacency, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_adjacency_csv(path) -> np.ndarray:
    a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return _validate_adjacency(a)
