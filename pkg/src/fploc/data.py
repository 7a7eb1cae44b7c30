"""Fingerprint datasets: UJIIndoorLoc ingestion, reference-point classes,
feature scaling and a seeded log-distance path-loss simulator."""

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .core_math import make_rng
from .errors import ConfigError, ParseError, SchemaError, ValidationError

MISSING_RSSI = -110.0
UJI_NOT_DETECTED = 100.0
N_WAP = 520
UJI_LABEL_COLUMNS = ["LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID", "SPACEID",
                     "RELATIVEPOSITION", "USERID", "PHONEID", "TIMESTAMP"]
UJI_COLUMNS = [f"WAP{i:03d}" for i in range(1, N_WAP + 1)] + UJI_LABEL_COLUMNS
NORMALIZATION_SCHEMES = ("minmax", "none")
ROLES = ("train", "test")
DATASET_FORMAT = "fploc-dataset/1"


@dataclass(frozen=True)
class FingerprintSample:
    rssi: np.ndarray  # (N_AP, n_s)
    longitude: float
    latitude: float
    floor: int
    building: int
    rp_index: int | None = None


@dataclass
class FingerprintDataset:
    """Column-oriented collection of fingerprints.

    ``rssi`` has shape (M, N_AP, n_s). ``rp_table`` rows are
    (longitude, latitude, floor, building); ``rp_index`` maps samples to rows.
    """

    rssi: np.ndarray
    longitude: np.ndarray
    latitude: np.ndarray
    floor: np.ndarray
    building: np.ndarray
    role: str = "train"
    rp_index: np.ndarray | None = None
    rp_table: np.ndarray | None = None
    normalization: str | None = None
    ap_positions: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    source_hash: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"role must be one of {ROLES}, got {self.role!r}")
        m = self.rssi.shape[0]
        for name in ("longitude", "latitude", "floor", "building"):
            if getattr(self, name).shape != (m,):
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected ({m},)")

    def __len__(self) -> int:
        return self.rssi.shape[0]

    def __getitem__(self, i) -> FingerprintSample:
        rp = None if self.rp_index is None else int(self.rp_index[i])
        return FingerprintSample(self.rssi[i], float(self.longitude[i]), float(self.latitude[i]),
                                 int(self.floor[i]), int(self.building[i]), rp)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_ap(self) -> int:
        return self.rssi.shape[1]

    @property
    def n_s(self) -> int:
        return self.rssi.shape[2]

    @property
    def n_classes(self) -> int:
        return 0 if self.rp_table is None else self.rp_table.shape[0]

    @property
    def locations(self) -> np.ndarray:
        return np.stack([self.longitude, self.latitude], axis=1)

    def subset(self, mask_or_index) -> "FingerprintDataset":
        idx = np.asarray(mask_or_index)
        return replace(
            self,
            rssi=self.rssi[idx], longitude=self.longitude[idx], latitude=self.latitude[idx],
            floor=self.floor[idx], building=self.building[idx],
            rp_index=None if self.rp_index is None else self.rp_index[idx],
            extra={k: v[idx] for k, v in self.extra.items()},
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self._meta(), sort_keys=True).encode())
        for name, arr in self._arrays().items():
            a = np.ascontiguousarray(arr)
            h.update(name.encode())
            h.update(str(a.dtype.str).encode())
            h.update(repr(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def _meta(self) -> dict:
        return {"format": DATASET_FORMAT, "role": self.role, "normalization": self.normalization,
                "source_hash": self.source_hash, "extra": sorted(self.extra)}

    def _arrays(self) -> dict:
        out = {"rssi": self.rssi.astype("<f8"), "longitude": self.longitude.astype("<f8"),
               "latitude": self.latitude.astype("<f8"), "floor": self.floor.astype("<i8"),
               "building": self.building.astype("<i8")}
        if self.rp_index is not None:
            out["rp_index"] = self.rp_index.astype("<i8")
        if self.rp_table is not None:
            out["rp_table"] = self.rp_table.astype("<f8")
        if self.ap_positions is not None:
            out["ap_positions"] = self.ap_positions.astype("<f8")
        for k in sorted(self.extra):
            out[f"extra.{k}"] = np.asarray(self.extra[k])
        return out


# ---------------------------------------------------------------------------
# persistence

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def save_dataset(dataset: FingerprintDataset, path) -> str:
    """Write a byte-reproducible zip of .npy members; returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        meta = dataset._meta()
        meta["content_hash"] = dataset.content_hash()
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_DATE)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name, arr in dataset._arrays().items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())
    return meta["content_hash"]


def load_dataset(path) -> FingerprintDataset:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise SchemaError(f"{path}: not a dataset file ({exc})") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != DATASET_FORMAT:
            raise SchemaError(f"{path}: unsupported dataset format {meta.get('format')!r}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    extra = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return FingerprintDataset(
        rssi=arrays["rssi"], longitude=arrays["longitude"], latitude=arrays["latitude"],
        floor=arrays["floor"], building=arrays["building"], role=meta["role"],
        rp_index=arrays.get("rp_index"), rp_table=arrays.get("rp_table"),
        normalization=meta["normalization"], ap_positions=arrays.get("ap_positions"),
        extra=extra, source_hash=meta.get("source_hash"),
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# UJIIndoorLoc

def clean_rssi(values: np.ndarray) -> np.ndarray:
    """Map the +100 not-detected marker (and any positive reading) to -110 dBm."""
    v = np.array(values, dtype=np.float64)
    v[(v == UJI_NOT_DETECTED) | (v > 0)] = MISSING_RSSI
    return np.maximum(v, MISSING_RSSI)


def load_ujiindoorloc(path, role: str = "train") -> FingerprintDataset:
    path = Path(path)
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty, expected header {UJI_COLUMNS[0]}..{UJI_COLUMNS[-1]}",
                          missing=UJI_COLUMNS) from exc
    frame.columns = [c.strip().strip('"') for c in frame.columns]
    missing = [c for c in UJI_COLUMNS if c not in frame.columns]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise SchemaError(f"{path}: missing {len(missing)} column(s): {shown}", missing=missing)

    numeric = {}
    for col in UJI_COLUMNS:
        series = frame[col]
        vals = series if pd.api.types.is_numeric_dtype(series) else pd.to_numeric(series, errors="coerce")
        bad = vals.isna().to_numpy()
        if bad.any():
            r = int(np.argmax(bad))
            raise ParseError(f"{path}: row {r + 1}, column {col}: non-numeric value {series.iloc[r]!r}",
                             row=r + 1, column=col)
        numeric[col] = vals.to_numpy(dtype=np.float64)

    rssi = np.stack([numeric[c] for c in UJI_COLUMNS[:N_WAP]], axis=1)
    rssi = clean_rssi(rssi)[:, :, None]
    extra = {c.lower(): numeric[c].astype(np.int64) for c in ("SPACEID", "RELATIVEPOSITION", "USERID",
                                                               "PHONEID", "TIMESTAMP")}
    return FingerprintDataset(
        rssi=rssi, longitude=numeric["LONGITUDE"], latitude=numeric["LATITUDE"],
        floor=numeric["FLOOR"].astype(np.int64), building=numeric["BUILDINGID"].astype(np.int64),
        role=role, extra=extra, source_hash=file_sha256(path),
    )


def select_floor(dataset: FingerprintDataset, building: int | None = None,
                 floor: int | None = None) -> FingerprintDataset:
    mask = np.ones(len(dataset), dtype=bool)
    if building is not None:
        mask &= dataset.building == building
    if floor is not None:
        mask &= dataset.floor == floor
    return dataset.subset(mask)


# ---------------------------------------------------------------------------
# reference points

def derive_rp_classes(train: FingerprintDataset, grouping: str = "coordinates"):
    """Return ``(rp_table, rp_index)`` with RPs sorted lexicographically.

    ``coordinates`` groups by the exact (longitude, latitude, floor, building)
    tuple. ``space`` groups by (building, floor, SPACEID, RELATIVEPOSITION) and
    places each RP at the mean coordinates of its samples.
    """
    if grouping == "coordinates":
        keys = np.stack([train.longitude, train.latitude,
                         train.floor.astype(np.float64), train.building.astype(np.float64)], axis=1)
        rp_table, rp_index = np.unique(keys, axis=0, return_inverse=True)
        return rp_table, rp_index.ravel().astype(np.int64)
    if grouping == "space":
        try:
            keys = np.stack([train.building, train.floor, train.extra["spaceid"],
                             train.extra["relativeposition"]], axis=1)
        except KeyError as exc:
            raise ConfigError("space grouping needs SPACEID/RELATIVEPOSITION columns", key="rp_grouping") from exc
        uniq, rp_index = np.unique(keys, axis=0, return_inverse=True)
        rp_index = rp_index.ravel().astype(np.int64)
        k = uniq.shape[0]
        counts = np.bincount(rp_index, minlength=k)
        lon = np.bincount(rp_index, weights=train.longitude, minlength=k) / counts
        lat = np.bincount(rp_index, weights=train.latitude, minlength=k) / counts
        rp_table = np.stack([lon, lat, uniq[:, 1].astype(np.float64), uniq[:, 0].astype(np.float64)], axis=1)
        return rp_table, rp_index
    raise ConfigError(f"unknown RP grouping {grouping!r}", key="rp_grouping")


def with_rp_classes(train: FingerprintDataset, grouping: str = "coordinates") -> FingerprintDataset:
    rp_table, rp_index = derive_rp_classes(train, grouping)
    return replace(train, rp_table=rp_table, rp_index=rp_index)


def match_rp_index(dataset: FingerprintDataset, rp_table: np.ndarray) -> np.ndarray:
    """Index of the RP whose tuple equals each sample's location, or -1."""
    lookup = {tuple(row): i for i, row in enumerate(np.asarray(rp_table, dtype=np.float64))}
    keys = zip(dataset.longitude, dataset.latitude, dataset.floor.astype(np.float64),
               dataset.building.astype(np.float64))
    return np.array([lookup.get(tuple(map(float, k)), -1) for k in keys], dtype=np.int64)


# ---------------------------------------------------------------------------
# scaling

def normalize_rssi(rssi, scheme: str = "minmax") -> np.ndarray:
    if scheme == "minmax":
        return (np.asarray(rssi, dtype=np.float64) - MISSING_RSSI) / -MISSING_RSSI
    if scheme == "none":
        return np.array(rssi, dtype=np.float64)
    raise ConfigError(f"unknown normalization scheme {scheme!r}", key="normalization")


def denormalize_rssi(values, scheme: str = "minmax") -> np.ndarray:
    if scheme == "minmax":
        return np.asarray(values, dtype=np.float64) * -MISSING_RSSI + MISSING_RSSI
    if scheme == "none":
        return np.array(values, dtype=np.float64)
    raise ConfigError(f"unknown normalization scheme {scheme!r}", key="normalization")


def normalize_features(dataset: FingerprintDataset, scheme: str = "minmax") -> FingerprintDataset:
    if dataset.normalization is not None:
        raise ConfigError(f"dataset already normalized with {dataset.normalization!r}", key="normalization")
    return replace(dataset, rssi=normalize_rssi(dataset.rssi, scheme), normalization=scheme)


# ---------------------------------------------------------------------------
# synthetic scenarios

def _grid(nx, ny, spacing, offset):
    xs = offset[0] + spacing * np.arange(nx)
    ys = offset[1] + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1).tolist()


def _default_aps():
    return _grid(5, 5, 10.0, (5.0, 5.0))


def _default_rps():
    return _grid(10, 10, 5.0, (2.5, 2.5))


@dataclass
class SyntheticScenario:
    area_width: float = 50.0
    area_height: float = 50.0
    ap_positions: list = field(default_factory=_default_aps)
    rp_positions: list = field(default_factory=_default_rps)
    path_loss_exponent: float = 3.0
    p0: float = -40.0
    d0: float = 1.0
    sigma: float = 4.0
    train_samples_per_rp: int = 20
    test_samples_per_rp: int = 5
    time_slots: int = 1
    seed: int = 0

    def validate(self) -> None:
        aps = np.asarray(self.ap_positions, dtype=np.float64)
        rps = np.asarray(self.rp_positions, dtype=np.float64)
        if aps.ndim != 2 or aps.shape[0] < 2 or aps.shape[1] not in (2, 3):
            raise ConfigError("need at least 2 AP positions with 2 or 3 coordinates", key="ap_positions")
        if rps.ndim != 2 or rps.shape[0] < 2 or rps.shape[1] != aps.shape[1]:
            raise ConfigError("need at least 2 RP positions matching the AP dimensionality", key="rp_positions")
        if not np.all(np.isfinite(aps)) or not np.all(np.isfinite(rps)):
            raise ConfigError("positions must be finite", key="ap_positions")
        if self.area_width <= 0 or self.area_height <= 0:
            raise ConfigError("area dimensions must be positive", key="area_width")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative", key="sigma")
        if self.d0 <= 0:
            raise ConfigError("d0 must be positive", key="d0")
        for key in ("train_samples_per_rp", "test_samples_per_rp", "time_slots"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be at least 1", key=key)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> "SyntheticScenario":
        known = {f.name for f in fields(cls)}
        for key in cfg:
            if key not in known:
                raise ConfigError(f"unknown scenario key {key!r}", key=key)
        scenario = cls(**cfg)
        scenario.validate()
        return scenario


def path_loss_rssi(distance, p0: float, exponent: float, d0: float = 1.0) -> np.ndarray:
    d = np.maximum(np.asarray(distance, dtype=np.float64), d0)
    return p0 - 10.0 * exponent * np.log10(d / d0)


def generate_synthetic(scenario: SyntheticScenario) -> tuple[FingerprintDataset, FingerprintDataset]:
    """Seeded train/test fingerprints at the scenario's RPs.

    Train and test share RP positions but use separate noise draws. The train
    set carries the RP table; test samples are labelled against it.
    """
    scenario.validate()
    aps = np.asarray(scenario.ap_positions, dtype=np.float64)
    rps = np.asarray(scenario.rp_positions, dtype=np.float64)
    dist = np.sqrt(((rps[:, None, :] - aps[None, :, :]) ** 2).sum(axis=-1))  # (K, N)
    mean = path_loss_rssi(dist, scenario.p0, scenario.path_loss_exponent, scenario.d0)
    rng = make_rng(scenario.seed)
    s = int(scenario.time_slots)

    def draw(per_rp, role):
        shape = (rps.shape[0], per_rp, aps.shape[0], s)
        noise = rng.normal(0.0, scenario.sigma, size=shape) if scenario.sigma > 0 else np.zeros(shape)
        rssi = np.clip(mean[:, None, :, None] + noise, MISSING_RSSI, 0.0)
        rssi = rssi.reshape(-1, aps.shape[0], s)
        loc = np.repeat(rps, per_rp, axis=0)
        m = rssi.shape[0]
        return FingerprintDataset(rssi=rssi, longitude=loc[:, 0].copy(), latitude=loc[:, 1].copy(),
                                  floor=np.zeros(m, dtype=np.int64), building=np.zeros(m, dtype=np.int64),
                                  role=role, ap_positions=aps.copy())

    train = with_rp_classes(draw(int(scenario.train_samples_per_rp), "train"))
    test = draw(int(scenario.test_samples_per_rp), "test")
    test = replace(test, rp_index=match_rp_index(test, train.rp_table), rp_table=train.rp_table)
    return train, test
