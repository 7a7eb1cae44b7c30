"""Command-line entry point: ``fploc {ingest,train,eval,predict,synth}``.

Exit codes: 0 success, 2 user/config/data error, 1 internal error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import load_artifact, save_artifact
from .data import (SyntheticScenario, clean_rssi, file_sha256, generate_synthetic, load_dataset,
                   load_ujiindoorloc, save_dataset, select_floor, with_rp_classes)
from .errors import ConfigError, FplocError, ParseError
from .train_eval import TrainingConfig, compare_runs, evaluate_2d, evaluate_3d, fit_artifact

log = logging.getLogger("fploc")

SEED_ENV = "FPLOC_SEED"


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(command, config, inputs, outputs, seed=None) -> dict:
    return {
        "command": command,
        "config": config,
        "inputs": {str(k): v for k, v in inputs.items()},
        "outputs": [str(o) for o in outputs],
        "seed": seed,
        "tool_version": __version__,
    }


def _read_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key, value in cfg.items():
        if value is None and key != "n_classes":
            raise ConfigError(f"config key {key!r} is missing a value", key=key)
    return cfg


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}", key=SEED_ENV) from exc


def cmd_ingest(args) -> int:
    ds = load_ujiindoorloc(args.input, role=args.role)
    if args.building is not None or args.floor is not None:
        ds = select_floor(ds, args.building, args.floor)
    if args.role == "train":
        ds = with_rp_classes(ds, args.rp_grouping)
    content_hash = save_dataset(ds, args.out)
    summary = f"{len(ds)} samples, {ds.n_ap} APs"
    if ds.rp_table is not None:
        summary += f", {ds.n_classes} RPs"
    print(summary)
    print(f"source sha256 {ds.source_hash}")
    print(f"content sha256 {content_hash}")
    _write_json(f"{args.out}.manifest.json", _manifest(
        "ingest", {"role": args.role, "building": args.building, "floor": args.floor,
                   "rp_grouping": args.rp_grouping},
        {args.input: ds.source_hash}, [args.out]))
    return 0


def cmd_train(args) -> int:
    cfg = _read_json_config(args.config)
    if args.model is not None:
        cfg["model"] = args.model
    env_seed = _env_seed()
    if env_seed is not None:
        cfg["seed"] = env_seed
    config = TrainingConfig.from_dict(cfg)
    ds = load_dataset(args.train)
    if ds.role != "train":
        raise ConfigError(f"{args.train} has role {ds.role!r}; training needs a train dataset", key="role")
    if ds.rp_table is None:
        ds = with_rp_classes(ds, config.rp_grouping)
    if config.model == "gcn" and config.adjacency_method == "inverse_distance" and ds.ap_positions is None:
        raise ConfigError("inverse_distance adjacency needs AP positions, which this dataset lacks",
                          key="ap_positions")

    def progress(entry):
        if entry["epoch"] == 1 or entry["epoch"] % 50 == 0 or entry["epoch"] == config.epochs:
            log.info("epoch %d loss %.4f acc %.4f", entry["epoch"], entry["loss"], entry["accuracy"])

    artifact, result = fit_artifact(ds, config, progress=progress)
    out = Path(args.out)
    save_artifact(artifact, out)
    loss_path = out.with_name(out.name + ".loss.csv")
    with open(loss_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "accuracy"])
        w.writerow([0, repr(result.initial_loss), ""])
        for e in result.history:
            w.writerow([e["epoch"], repr(e["loss"]), repr(e["accuracy"])])
    _write_json(out.with_name(out.name + ".manifest.json"), _manifest(
        "train", config.to_dict(), {args.train: ds.content_hash()}, [out, loss_path], seed=config.seed))
    print(f"{config.model}: initial loss {result.initial_loss:.4f}, "
          f"final loss {result.history[-1]['loss']:.4f}, train accuracy {result.history[-1]['accuracy']:.4f}")
    return 0


def cmd_eval(args) -> int:
    artifact = load_artifact(args.model)
    ds = load_dataset(args.test)
    artifact.check_compatible(ds)
    report = (evaluate_3d if args.mode == "3d" else evaluate_2d)(artifact, None, ds)
    label = args.label or artifact.kind
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = compare_runs([report], [label], out_dir)
    report_path = out_dir / f"report_{label}.json"
    _write_json(report_path, report.to_dict())
    _write_json(out_dir / f"manifest_{label}.json", _manifest(
        "eval", {"mode": args.mode, "label": label},
        {args.model: file_sha256(args.model), args.test: ds.content_hash()},
        [report_path, out_dir / f"cdf_{label}.csv", out_dir / f"box_{label}.csv"]))
    print(json.dumps(table[0], sort_keys=True))
    return 0


def _read_rssi_rows(source: str, n_values: int) -> np.ndarray:
    path = Path(source)
    if path.is_file():
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    else:
        rows = [source.split(",")]
    if rows and rows[0] and rows[0][0].strip().upper().startswith("WAP"):
        header = [h.strip() for h in rows[0]]
        waps = [i for i, h in enumerate(header) if h.upper().startswith("WAP")]
        rows = [[r[i] for i in waps] for r in rows[1:]]
    out = []
    for i, row in enumerate(rows, 1):
        if len(row) != n_values:
            raise ParseError(f"row {i}: expected {n_values} RSSI values, got {len(row)}", row=i)
        try:
            out.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(f"row {i}: non-numeric RSSI value ({exc})", row=i) from exc
    if not out:
        raise ParseError("no RSSI rows given")
    return np.array(out)


def cmd_predict(args) -> int:
    artifact = load_artifact(args.model)
    values = _read_rssi_rows(args.rssi, artifact.n_ap * artifact.n_s)
    rssi = clean_rssi(values).reshape(-1, artifact.n_ap, artifact.n_s)
    xy, floor, building, probs = artifact.locate(rssi)
    k = min(args.top_k, artifact.n_classes)
    for i in range(probs.shape[0]):
        top = np.argsort(-probs[i], kind="stable")[:k]
        max_prob = float(probs[i, top[0]])
        print(json.dumps({
            "x": float(xy[i, 0]), "y": float(xy[i, 1]),
            "floor": int(floor[i]), "building": int(building[i]),
            "top_k": [[int(j), float(probs[i, j])] for j in top],
            "max_prob": max_prob,
            "low_confidence": max_prob < args.confidence_threshold,
        }))
    if args.manifest:
        _write_json(args.manifest, _manifest(
            "predict", {"top_k": k, "confidence_threshold": args.confidence_threshold},
            {args.model: file_sha256(args.model)}, ["<stdout>"]))
    return 0


def cmd_synth(args) -> int:
    cfg = _read_json_config(args.scenario)
    env_seed = _env_seed()
    if env_seed is not None:
        cfg["seed"] = env_seed
    try:
        scenario = SyntheticScenario.from_dict(cfg)
    except TypeError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, FplocError):
            raise
        raise ConfigError(f"invalid scenario geometry: {exc}") from exc
    train, test = generate_synthetic(scenario)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h_train = save_dataset(train, out_dir / "train.fpd")
    h_test = save_dataset(test, out_dir / "test.fpd")
    _write_json(out_dir / "scenario.json", scenario.to_dict())
    _write_json(out_dir / "manifest.json", _manifest(
        "synth", scenario.to_dict(), {},
        ["train.fpd", "test.fpd", "scenario.json"], seed=scenario.seed)
        | {"content_hashes": {"train.fpd": h_train, "test.fpd": h_test}})
    print(f"train: {len(train)} samples, test: {len(test)} samples, "
          f"{train.n_ap} APs, {train.n_classes} RPs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fploc", description="GCN WiFi fingerprint localization")
    p.add_argument("--json-errors", action="store_true", help="emit errors as JSON on stderr")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="convert a UJIIndoorLoc CSV into a dataset file")
    s.add_argument("--input", required=True)
    s.add_argument("--role", choices=["train", "test"], required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--building", type=int, help="keep only this BUILDINGID")
    s.add_argument("--floor", type=int, help="keep only this FLOOR")
    s.add_argument("--rp-grouping", choices=["coordinates", "space"], default="coordinates")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="build the AP graph and train a model")
    s.add_argument("--train", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=["gcn", "dnn"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a model on a test dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--mode", choices=["2d", "3d"], required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--label")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="locate RSSI observations")
    s.add_argument("--model", required=True)
    s.add_argument("--rssi", required=True, help="CSV file of RSSI rows, or one comma-separated row (use --rssi=-60,...)")
    s.add_argument("--top-k", type=int, default=5)
    s.add_argument("--confidence-threshold", type=float, default=0.5)
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="generate a synthetic path-loss scenario")
    s.add_argument("--scenario")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def _report_error(args_json, exc, code) -> int:
    if args_json:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        for attr in ("key", "row", "column", "missing", "fields", "epoch"):
            if getattr(exc, attr, None) not in (None, []):
                doc[attr] = getattr(exc, attr)
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(f"fploc: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FplocError, FileNotFoundError, IsADirectoryError) as exc:
        return _report_error(args.json_errors, exc, 2)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _report_error(args.json_errors, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
