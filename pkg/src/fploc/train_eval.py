"""Mini-batch Adam training and the localization evaluation suite."""

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .artifact import ModelArtifact
from .core_math import AdamState, adam_step, make_rng
from .data import normalize_rssi
from .errors import ConfigError, DivergenceError, EvaluationError, NumericError
from .graph import graph_from_dataset
from .model import ModelParams, batch_loss, init_dnn_params, init_gcn_params, loss_and_grads, predict_proba

MODEL_KINDS = ("gcn", "dnn")


@dataclass
class TrainingConfig:
    epochs: int = 1500
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    model: str = "gcn"
    adjacency_method: str = "codetection"
    detect_threshold: float = -110.0
    mlp_input: str = "difference"
    normalization: str = "minmax"
    rp_grouping: str = "coordinates"
    n_classes: int | None = None

    def validate(self) -> None:
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1", key="epochs")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive", key="learning_rate")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}", key="model")
        if self.adjacency_method not in ("codetection", "inverse_distance"):
            raise ConfigError("adjacency_method must be codetection or inverse_distance", key="adjacency_method")
        if self.mlp_input not in ("difference", "concat"):
            raise ConfigError("mlp_input must be difference or concat", key="mlp_input")
        if self.normalization not in ("minmax", "none"):
            raise ConfigError("normalization must be minmax or none", key="normalization")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        for key in cfg:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}", key=key)
        config = cls(**cfg)
        config.validate()
        return config


@dataclass
class TrainResult:
    params: object
    initial_loss: float
    history: list = field(default_factory=list)  # one dict per epoch


def _features(dataset, scheme):
    if dataset.normalization is None:
        return normalize_rssi(dataset.rssi, scheme)
    if dataset.normalization != scheme:
        raise ConfigError(f"dataset normalized with {dataset.normalization!r}, config wants {scheme!r}",
                          key="normalization")
    return dataset.rssi


def build_graph(train_set, config: TrainingConfig):
    if train_set.role != "train":
        raise ConfigError("the graph must be built from the training set", key="adjacency_method")
    return graph_from_dataset(train_set, config.adjacency_method, config.detect_threshold)


def train(train_set, val_set, graph, config: TrainingConfig, progress=None) -> TrainResult:
    """Minimize mean cross-entropy over RP classes with mini-batch Adam.

    Shuffling and initialization draw from seeded generators and gradients are
    reduced over the batch in a fixed order, so equal seeds give bit-identical
    parameters.
    """
    config.validate()
    if train_set.role != "train" or train_set.rp_index is None:
        raise ConfigError("training needs a train-role dataset with RP labels", key="model")
    k = train_set.n_classes
    if config.n_classes is not None and config.n_classes != k:
        raise ConfigError(f"config n_classes={config.n_classes} but the dataset has {k} RPs", key="n_classes")
    x = _features(train_set, config.normalization)
    y = train_set.rp_index
    m = x.shape[0]

    if config.model == "gcn":
        if graph is None or graph.n_ap != train_set.n_ap:
            raise ConfigError("GCN training needs a graph over the dataset's APs", key="adjacency_method")
        params = init_gcn_params(train_set.n_ap, train_set.n_s, k, config.seed, config.mlp_input)
    else:
        graph = None
        params = init_dnn_params(train_set.n_ap, train_set.n_s, k, config.seed)

    hyper = dict(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    states = {name: AdamState.zeros_like(a, **hyper) for name, a in params.arrays().items()}
    names = list(states)

    initial_loss = batch_loss(predict_proba(params, x, graph), y)
    val_x = None
    if val_set is not None and val_set.rp_index is not None and np.all(val_set.rp_index >= 0):
        val_x = _features(val_set, config.normalization)

    shuffle_rng = make_rng(config.seed + 1)
    bs = int(config.batch_size)
    history = []
    for epoch in range(1, int(config.epochs) + 1):
        order = shuffle_rng.permutation(m)
        total, correct = 0.0, 0
        for start in range(0, m, bs):
            idx = order[start:start + bs]
            try:
                loss, grads, probs = loss_and_grads(params, x[idx], y[idx], graph)
                if not np.isfinite(loss):
                    raise NumericError("loss is not finite")
                g = grads.arrays()
                current = params.arrays()
                updated = {}
                for name in names:
                    updated[name], states[name] = adam_step(current[name], g[name], states[name])
            except NumericError as exc:
                raise DivergenceError(f"training diverged in epoch {epoch}: {exc}", epoch=epoch) from exc
            params = params.with_arrays(updated)
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
        entry = {"epoch": epoch, "loss": total / m, "accuracy": correct / m}
        if val_x is not None:
            vp = predict_proba(params, val_x, graph)
            entry["val_loss"] = batch_loss(vp, val_set.rp_index)
            entry["val_accuracy"] = float(np.mean(np.argmax(vp, axis=1) == val_set.rp_index))
        history.append(entry)
        if progress is not None:
            progress(entry)
    return TrainResult(params, initial_loss, history)


def fit_artifact(train_set, config: TrainingConfig, val_set=None, progress=None):
    """Graph construction + training, packaged as a ``ModelArtifact``."""
    graph = build_graph(train_set, config) if config.model == "gcn" else None
    result = train(train_set, val_set, graph, config, progress)
    artifact = ModelArtifact(params=result.params, rp_table=train_set.rp_table,
                             normalization=config.normalization, graph=graph,
                             config=config.to_dict(), train_hash=train_set.content_hash())
    return artifact, result


# ---------------------------------------------------------------------------
# evaluation

def empirical_cdf(errors) -> tuple[np.ndarray, np.ndarray]:
    e = np.sort(np.asarray(errors, dtype=np.float64))
    n = e.size
    return e, np.arange(1, n + 1) / n


def boxplot_stats(errors, whisker: float = 1.5) -> dict:
    """Quartiles, 1.5 IQR whiskers and outliers (matplotlib's convention)."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    q1, med, q3 = np.percentile(e, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - whisker * iqr, q3 + whisker * iqr
    inside = e[(e >= lo_fence) & (e <= hi_fence)]
    return {
        "min": float(e[0]), "p25": float(q1), "median": float(med), "p60": float(np.percentile(e, 60)),
        "p75": float(q3), "max": float(e[-1]),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(v) for v in e[(e < lo_fence) | (e > hi_fence)]],
    }


@dataclass
class EvalReport:
    mode: str
    n_samples: int
    errors: np.ndarray
    mean_error: float | None
    cdf_errors: np.ndarray
    cdf_quantiles: np.ndarray
    stats: dict | None
    floor_accuracy: float | None = None
    building_accuracy: float | None = None
    n_floor_building_correct: int | None = None
    note: str | None = None

    @classmethod
    def from_errors(cls, mode, n_samples, errors, **extra) -> "EvalReport":
        errors = np.asarray(errors, dtype=np.float64)
        if errors.size == 0:
            return cls(mode, n_samples, errors, None, errors, errors, None,
                       note="no conditioned samples", **extra)
        xs, qs = empirical_cdf(errors)
        return cls(mode, n_samples, errors, float(np.mean(errors)), xs, qs, boxplot_stats(errors), **extra)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "n_errors": int(self.errors.size),
            "mean_error_m": self.mean_error,
            "stats": self.stats,
            "errors_m": self.errors.tolist(),
            "cdf": {"error_m": self.cdf_errors.tolist(), "quantile": self.cdf_quantiles.tolist()},
        }
        if self.mode == "3d":
            d["floor_accuracy"] = self.floor_accuracy
            d["building_accuracy"] = self.building_accuracy
            d["n_floor_building_correct"] = self.n_floor_building_correct
        if self.note:
            d["note"] = self.note
        return d


def _locate(model, graph, test_set):
    if len(test_set) == 0:
        raise EvaluationError("test set is empty")
    if graph is not None and graph is not model.graph:
        model = ModelArtifact(model.params, model.rp_table, model.normalization, graph, model.config)
    return model.locate(test_set)


def evaluate_2d(model: ModelArtifact, graph, test_set) -> EvalReport:
    """Planar distance error of the decoded location for every test sample."""
    xy, _, _, _ = _locate(model, graph, test_set)
    errors = np.linalg.norm(xy - test_set.locations, axis=1)
    return EvalReport.from_errors("2d", len(test_set), errors)


def evaluate_3d(model: ModelArtifact, graph, test_set) -> EvalReport:
    """Building/floor accuracy, and planar error over samples with both right."""
    xy, floor, building, _ = _locate(model, graph, test_set)
    return report_3d(xy, floor, building, test_set)


def report_3d(xy, floor, building, test_set) -> EvalReport:
    floor_ok = floor == test_set.floor
    building_ok = building == test_set.building
    both = floor_ok & building_ok
    errors = np.linalg.norm(xy[both] - test_set.locations[both], axis=1)
    return EvalReport.from_errors(
        "3d", len(test_set), errors,
        floor_accuracy=float(np.mean(floor_ok)), building_accuracy=float(np.mean(building_ok)),
        n_floor_building_correct=int(both.sum()),
    )


def compare_runs(reports, labels, out_dir=None) -> list[dict]:
    """Side-by-side metric rows; with ``out_dir``, also cdf_/box_ CSV series."""
    if len(reports) != len(labels) or not reports:
        raise EvaluationError("need one label per report and at least one report")
    table = []
    for rep, label in zip(reports, labels):
        row = {"label": label, "mode": rep.mode, "n_samples": rep.n_samples, "mean_error_m": rep.mean_error}
        if rep.stats:
            row.update({k: v for k, v in rep.stats.items() if k != "outliers"})
            row["n_outliers"] = len(rep.stats["outliers"])
        if rep.mode == "3d":
            row["floor_accuracy"] = rep.floor_accuracy
            row["building_accuracy"] = rep.building_accuracy
        table.append(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for rep, label in zip(reports, labels):
            write_plot_data(rep, label, out)
    return table


def write_plot_data(report: EvalReport, label: str, out_dir) -> None:
    out = Path(out_dir)
    with open(out / f"cdf_{label}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["error_m", "quantile"])
        for e, q in zip(report.cdf_errors, report.cdf_quantiles):
            w.writerow([repr(float(e)), repr(float(q))])
    with open(out / f"box_{label}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stat", "value"])
        if report.stats:
            for key in ("min", "p25", "median", "p60", "p75", "max", "whisker_low", "whisker_high"):
                w.writerow([key, repr(report.stats[key])])
            for v in report.stats["outliers"]:
                w.writerow(["outlier", repr(v)])
