"""Synthetic normal series, controlled anomaly tasks and CSV dataset I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .inject import AnomalyType, AugParams, HyperDomain, desk_domain, inject

FAMILIES = ("ecg", "gait")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("a series is a finite 1-D array")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "Series":
        return Series(values, self.label)


# ---------------------------------------------------------------------------
# normal data
# ---------------------------------------------------------------------------

def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _ecg_like(K: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(K, dtype=np.float64)
    period = rng.uniform(22.0, 30.0)
    phase = rng.uniform(0.0, period)
    # baseline wander and a slow respiratory component
    x = rng.uniform(0.2, 0.5) * np.sin(2 * np.pi * t / rng.uniform(120.0, 200.0) + rng.uniform(0, 2 * np.pi))
    x += rng.uniform(0.1, 0.3) * np.sin(2 * np.pi * t / rng.uniform(45.0, 70.0) + rng.uniform(0, 2 * np.pi))
    beats = np.arange(phase - period, K + period, period)
    beats = beats + rng.normal(0.0, 0.6, size=beats.shape)
    r_amp = rng.uniform(2.5, 3.5)
    for b in beats:
        x += r_amp * np.exp(-0.5 * ((t - b) / 0.9) ** 2)
        x -= 0.4 * np.exp(-0.5 * ((t - b - 2.2) / 1.2) ** 2)
        x += 0.5 * np.exp(-0.5 * ((t - b - 0.35 * period) / 3.0) ** 2)
    x += rng.normal(0.0, 0.08, size=K)
    return (x - x.mean()) / x.std()


def _gait_cycle(period: float, n: int) -> np.ndarray:
    u = np.arange(n) / period
    return (np.sin(2 * np.pi * u) + 0.45 * np.sin(4 * np.pi * u + 0.6) + 0.2 * np.sin(6 * np.pi * u + 1.3))


def gait_series(K: int, period: float, rng: np.random.Generator, fast: tuple[int, int, float] | None = None,
                noise: float = 0.05) -> np.ndarray:
    """Stitch jittered gait cycles of roughly ``period`` samples.

    ``fast=(first_cycle, n_cycles, factor)`` plays those cycles ``factor``
    times faster, a phase-exact frequency shift.
    """
    out = []
    total = 0
    cycle = 0
    while total < K:
        p = period * (1.0 + rng.normal(0.0, 0.01))
        if fast is not None and fast[0] <= cycle < fast[0] + fast[1]:
            p = p / fast[2]
        n = int(round(p))
        out.append(_gait_cycle(n, n))
        total += n
        cycle += 1
    x = np.concatenate(out)[:K] + rng.normal(0.0, noise, size=K)
    lo, hi = x.min(), x.max()
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def generate_normal(n: int, K: int, family: str = "ecg", seed: int = 0, period: float = 32.0) -> np.ndarray:
    """(n, K) array of inlier series; each row uses its own RNG stream."""
    if n <= 0 or K <= 0:
        raise ValueError("n and K must be positive")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    rngs = _streams(seed, n)
    if family == "ecg":
        return np.stack([_ecg_like(K, r) for r in rngs])
    return np.stack([gait_series(K, period, r) for r in rngs])


def dominant_period(x: np.ndarray, min_lag: int = 2) -> int:
    """Lag of the highest autocorrelation peak after the zero-lag lobe."""
    x = np.asarray(x) - np.mean(x)
    ac = np.correlate(x, x, mode="full")[len(x) - 1:]
    ac = ac / ac[0]
    neg = np.flatnonzero(ac < 0)
    start = max(min_lag, int(neg[0]) if len(neg) else min_lag)
    return int(start + np.argmax(ac[start: len(x) // 2]))


# ---------------------------------------------------------------------------
# controlled tasks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Random:
    low: float
    high: float


@dataclass(frozen=True)
class TaskProfile:
    """How test anomalies are generated: per-field fixed values or random ranges.

    Fields left as ``None`` are drawn from the default domain of the type.
    """

    anomaly_type: AnomalyType
    level: Fixed | Random | None = None
    location: Fixed | Random | None = None
    length: Fixed | Random | None = None
    ratio: float = 0.1
    family: str = "ecg"

    def __post_init__(self):
        object.__setattr__(self, "anomaly_type", AnomalyType.parse(self.anomaly_type))
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("anomaly ratio must lie in (0, 1)")
        if self.anomaly_type is AnomalyType.EXTREMUM and isinstance(self.length, Fixed):
            raise ValueError("extremum anomalies have no length")

    def domain(self, K: int) -> HyperDomain:
        return desk_domain(self.anomaly_type, self.family, K)

    def draw(self, rng: np.random.Generator, K: int) -> AugParams:
        base = self.domain(K)
        vals = {}
        for name in ("length", "level", "location"):
            mode = getattr(self, name)
            if isinstance(mode, Fixed):
                vals[name] = mode.value
            else:
                lo, hi = (mode.low, mode.high) if isinstance(mode, Random) else base.bounds(name)
                vals[name] = float(rng.uniform(lo, hi))
        if self.anomaly_type is AnomalyType.EXTREMUM:
            vals["length"] = 1.0 / K
        else:
            vals["location"] = min(vals["location"], 1.0 - vals["length"])
        return AugParams(self.anomaly_type, vals["location"], vals["length"], vals["level"])

    def to_dict(self) -> dict:
        def enc(m):
            if m is None:
                return None
            return {"fixed": m.value} if isinstance(m, Fixed) else {"random": [m.low, m.high]}

        return {"anomaly_type": self.anomaly_type.value, "level": enc(self.level),
                "location": enc(self.location), "length": enc(self.length),
                "ratio": self.ratio, "family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskProfile":
        def dec(m):
            if m is None:
                return None
            if "fixed" in m:
                return Fixed(float(m["fixed"]))
            lo, hi = m["random"]
            return Random(float(lo), float(hi))

        return cls(AnomalyType.parse(d["anomaly_type"]), dec(d.get("level")), dec(d.get("location")),
                   dec(d.get("length")), float(d.get("ratio", 0.1)), d.get("family", "ecg"))


@dataclass
class DatasetSplit:
    """Normal training data plus a labelled test set.

    ``val_idx`` selects the part of the test set the tuner may look at
    (without labels).
    """

    X_trn: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    val_idx: np.ndarray
    anomaly_params: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X_trn = np.asarray(self.X_trn, dtype=np.float64)
        self.X_test = np.asarray(self.X_test, dtype=np.float64)
        self.y_test = np.asarray(self.y_test, dtype=np.int64)
        self.val_idx = np.asarray(self.val_idx, dtype=np.int64)
        if self.X_trn.ndim != 2 or self.X_test.ndim != 2 or self.X_trn.shape[1] != self.X_test.shape[1]:
            raise DatasetFormatError("train and test sets must be (n, K) arrays with a common K")
        if len(self.y_test) != len(self.X_test):
            raise DatasetFormatError("one label per test series is required")
        if len(self.val_idx) and (self.val_idx.min() < 0 or self.val_idx.max() >= len(self.X_test)):
            raise DatasetFormatError("validation indices out of range")

    @property
    def K(self) -> int:
        return self.X_trn.shape[1]

    @property
    def X_val(self) -> np.ndarray:
        return self.X_test[self.val_idx]

    @property
    def y_val(self) -> np.ndarray:
        """Validation labels, for evaluation only; the tuner never reads these."""
        return self.y_test[self.val_idx]


def build_task(profile: TaskProfile, n_trn: int = 256, n_test: int = 200, K: int = 256, seed: int = 0,
               val_fraction: float = 0.5) -> DatasetSplit:
    ss = np.random.SeedSequence(seed)
    s_trn, s_test, s_anom, s_split = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    X_trn = generate_normal(n_trn, K, profile.family, s_trn)
    X_test = generate_normal(n_test, K, profile.family, s_test)
    rng = np.random.default_rng(s_anom)
    n_anom = int(round(profile.ratio * n_test))
    anom_idx = np.sort(rng.choice(n_test, size=n_anom, replace=False))
    y = np.zeros(n_test, dtype=np.int64)
    params = []
    for i in anom_idx:
        a = profile.draw(rng, K)
        X_test[i] = inject(X_test[i], a)
        y[i] = 1
        params.append(a)
    split_rng = np.random.default_rng(s_split)
    val_idx = np.sort(split_rng.permutation(n_test)[: int(round(val_fraction * n_test))])
    manifest = {"K": K, "n_trn": n_trn, "n_test": n_test, "n_anomalies": n_anom,
                "n_val": len(val_idx), "seed": seed, "profile": profile.to_dict()}
    return DatasetSplit(X_trn, X_test, y, val_idx, params, manifest)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def write_matrix_csv(path, X: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_2d(X):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetFormatError(f"{path}: line {lineno} has {len(vals)} values, expected {width}")
            rows.append(vals)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def read_labels_csv(path) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DatasetFormatError(f"{path}: line {lineno}: label must be 0 or 1, got {line!r}")
            labels.append(int(line))
    if not labels:
        raise DatasetFormatError(f"{path}: no labels")
    return np.array(labels, dtype=np.int64)


def write_csv(split: DatasetSplit, directory) -> Path:
    """Write train.csv, test.csv, test_labels.csv and manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "train.csv", split.X_trn)
    write_matrix_csv(d / "test.csv", split.X_test)
    with open(d / "test_labels.csv", "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in split.y_test)
    manifest = dict(split.manifest)
    manifest.update({"K": split.K, "n_trn": len(split.X_trn), "n_test": len(split.X_test),
                     "n_anomalies": int(split.y_test.sum()), "val_idx": [int(i) for i in split.val_idx]})
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return d


def read_csv(directory) -> DatasetSplit:
    d = Path(directory)
    X_trn = read_matrix_csv(d / "train.csv")
    X_test = read_matrix_csv(d / "test.csv")
    labels_path = d / "test_labels.csv"
    y = read_labels_csv(labels_path) if labels_path.exists() else np.zeros(len(X_test), dtype=np.int64)
    manifest = {}
    if (d / "manifest.json").exists():
        with open(d / "manifest.json") as fh:
            manifest = json.load(fh)
    if X_trn.shape[1] != X_test.shape[1]:
        raise DatasetFormatError(f"train has K={X_trn.shape[1]} but test has K={X_test.shape[1]}")
    if len(y) != len(X_test):
        raise DatasetFormatError(f"{labels_path}: {len(y)} labels for {len(X_test)} test series")
    val_idx = manifest.get("val_idx")
    if val_idx is None:
        val_idx = np.arange(0, len(X_test), 2)
    return DatasetSplit(X_trn, X_test, y, np.asarray(val_idx), [], manifest)
