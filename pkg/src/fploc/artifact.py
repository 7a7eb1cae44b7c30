"""Trained-model container and its JSON file format.

Floats are written with ``repr`` precision by the json module, so a save/load
round trip reproduces every parameter value exactly.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import normalize_rssi
from .errors import CompatibilityError, SchemaError
from .graph import AdjacencyMethod, ApGraph, adjacency_hash, build_propagation
from .model import BaselineDnnParams, ModelParams, decode_batch, predict_proba

ARTIFACT_FORMAT = "fploc-model/1"


@dataclass
class ModelArtifact:
    params: ModelParams | BaselineDnnParams
    rp_table: np.ndarray
    normalization: str = "minmax"
    graph: ApGraph | None = None
    config: dict = field(default_factory=dict)
    train_hash: str | None = None

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def n_ap(self) -> int:
        return self.params.n_ap

    @property
    def n_s(self) -> int:
        return self.params.n_s

    @property
    def n_classes(self) -> int:
        return self.params.n_classes

    def check_compatible(self, dataset) -> None:
        bad = []
        if dataset.n_ap != self.n_ap:
            bad.append(f"n_ap: model {self.n_ap}, dataset {dataset.n_ap}")
        if dataset.n_s != self.n_s:
            bad.append(f"n_s: model {self.n_s}, dataset {dataset.n_s}")
        if dataset.normalization not in (None, self.normalization):
            bad.append(f"normalization: model {self.normalization}, dataset {dataset.normalization}")
        if bad:
            raise CompatibilityError("model and dataset are incompatible: " + "; ".join(bad),
                                     fields=[b.split(":")[0] for b in bad])

    def features(self, dataset_or_rssi) -> np.ndarray:
        if hasattr(dataset_or_rssi, "rssi"):
            self.check_compatible(dataset_or_rssi)
            if dataset_or_rssi.normalization is not None:
                return dataset_or_rssi.rssi
            rssi = dataset_or_rssi.rssi
        else:
            rssi = dataset_or_rssi
        return normalize_rssi(rssi, self.normalization)

    def predict_proba(self, dataset_or_rssi) -> np.ndarray:
        return predict_proba(self.params, self.features(dataset_or_rssi), self.graph)

    def locate(self, dataset_or_rssi):
        """Decoded (xy, floor, building, probs) for every fingerprint."""
        probs = self.predict_proba(dataset_or_rssi)
        xy, floor, building = decode_batch(probs, self.rp_table)
        return xy, floor, building, probs

    def to_json(self) -> dict:
        doc = {
            "format": ARTIFACT_FORMAT,
            "kind": self.kind,
            "n_ap": self.n_ap,
            "n_s": self.n_s,
            "n_classes": self.n_classes,
            "normalization": self.normalization,
            "mlp_input": self.params.mlp_input,
            "config": self.config,
            "train_hash": self.train_hash,
            "rp_table": self.rp_table.tolist(),
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params.arrays().items()},
        }
        if self.graph is not None:
            doc["graph"] = {
                "method": self.graph.method.value,
                "adjacency_sha256": self.graph.adjacency_hash(),
                "adjacency": self.graph.adjacency.tolist(),
            }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ModelArtifact":
        if doc.get("format") != ARTIFACT_FORMAT:
            raise SchemaError(f"unsupported model format {doc.get('format')!r}")
        arrays = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        if doc["kind"] == "gcn":
            params = ModelParams(mlp_input=doc["mlp_input"], **arrays)
        elif doc["kind"] == "dnn":
            params = BaselineDnnParams(n_s=doc["n_s"], **arrays)
        else:
            raise SchemaError(f"unknown model kind {doc['kind']!r}")
        params.check_shapes()
        graph = None
        if "graph" in doc:
            adjacency = np.array(doc["graph"]["adjacency"], dtype=np.float64)
            if adjacency_hash(adjacency) != doc["graph"]["adjacency_sha256"]:
                raise SchemaError("adjacency hash mismatch; model file is corrupt")
            graph = build_propagation(adjacency, AdjacencyMethod(doc["graph"]["method"]))
        return cls(params=params, rp_table=np.array(doc["rp_table"], dtype=np.float64),
                   normalization=doc["normalization"], graph=graph, config=doc.get("config", {}),
                   train_hash=doc.get("train_hash"))


def save_artifact(artifact: ModelArtifact, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(artifact.to_json(), sort_keys=True), encoding="utf-8")


def load_artifact(path) -> ModelArtifact:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a model file ({exc})") from exc
    return ModelArtifact.from_json(doc)
