"""Parametric anomaly injection for univariate series.

Hyperparameters are expressed relative to the series length K: ``location``
and ``length`` are fractions of K, ``level`` is in type-specific units (a
value, an offset, a factor, a per-sample slope, or a warp increment).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np


class AnomalyType(str, enum.Enum):
    PLATFORM = "platform"
    MEAN_SHIFT = "mean_shift"
    AMPLITUDE = "amplitude"
    TREND = "trend"
    EXTREMUM = "extremum"
    FREQUENCY_SHIFT = "frequency_shift"

    @classmethod
    def parse(cls, value) -> "AnomalyType":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"frequency": "frequency_shift", "freq": "frequency_shift", "meanshift": "mean_shift",
                   "spike": "extremum", "frequencyshift": "frequency_shift"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown anomaly type {value!r}") from None


# level value that leaves a series untouched, where one exists
NEUTRAL_LEVEL = {
    AnomalyType.MEAN_SHIFT: 0.0,
    AnomalyType.TREND: 0.0,
    AnomalyType.AMPLITUDE: 1.0,
    AnomalyType.FREQUENCY_SHIFT: 0.0,
}

HYPER_FIELDS = ("location", "length", "level")


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class AugParams:
    anomaly_type: AnomalyType
    location: float
    length: float
    level: float

    def __post_init__(self):
        object.__setattr__(self, "anomaly_type", AnomalyType.parse(self.anomaly_type))
        if not 0.0 <= self.location < 1.0:
            raise InvalidParamsError(f"location must lie in [0, 1), got {self.location}")
        if self.anomaly_type is not AnomalyType.EXTREMUM:
            if not 0.0 < self.length <= 1.0:
                raise InvalidParamsError(f"length must lie in (0, 1], got {self.length}")
            if self.location + self.length > 1.0 + 1e-12:
                raise InvalidParamsError(
                    f"window exceeds the series: location {self.location} + length {self.length} > 1"
                )
        if not np.isfinite(self.level):
            raise InvalidParamsError("level must be finite")

    def vector(self) -> np.ndarray:
        return np.array([self.location, self.length, self.level])

    def window(self, K: int) -> tuple[int, int]:
        """Half-open sample range [start, stop) touched by this anomaly."""
        start = int(np.floor(self.location * K))
        if start >= K:
            raise InvalidParamsError(f"location {self.location} falls outside a series of length {K}")
        if self.anomaly_type is AnomalyType.EXTREMUM:
            return start, start + 1
        m = max(1, int(np.floor(self.length * K + 1e-9)))
        return start, min(K, start + m)


@dataclass(frozen=True)
class HyperDomain:
    """Closed intervals for each continuous hyperparameter of one anomaly type."""

    anomaly_type: AnomalyType
    location: tuple[float, float]
    length: tuple[float, float]
    level: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "anomaly_type", AnomalyType.parse(self.anomaly_type))
        for name in HYPER_FIELDS:
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"empty or invalid {name} interval ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def bounds(self, name: str) -> tuple[float, float]:
        return getattr(self, name)

    def lower(self) -> np.ndarray:
        return np.array([self.location[0], self.length[0], self.level[0]])

    def upper(self) -> np.ndarray:
        return np.array([self.location[1], self.length[1], self.level[1]])

    def clip(self, name: str, value: float) -> float:
        lo, hi = self.bounds(name)
        return float(min(max(value, lo), hi))

    def contains(self, a: AugParams, tol: float = 1e-12) -> bool:
        vals = {"location": a.location, "length": a.length, "level": a.level}
        names = ("location", "level") if self.anomaly_type is AnomalyType.EXTREMUM else HYPER_FIELDS
        return all(self.bounds(n)[0] - tol <= vals[n] <= self.bounds(n)[1] + tol for n in names)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        """Min-max map (location, length, level) columns onto [0, 1]."""
        lo, hi = self.lower(), self.upper()
        span = np.where(hi > lo, hi - lo, 1.0)
        return (np.asarray(values) - lo) / span

    def with_fixed(self, **values: float) -> "HyperDomain":
        return replace(self, **{k: (float(v), float(v)) for k, v in values.items()})


def _frac(samples: int, K: int) -> float:
    return samples / K


def paper_domain(anomaly_type, dataset: str = "physionet") -> HyperDomain:
    """Hyperparameter ranges from the reference configuration, normalised by K.

    Discrete level grids are replaced by their convex hulls so levels can be
    tuned continuously.
    """
    t = AnomalyType.parse(anomaly_type)
    if dataset == "physionet":
        K = 2700
        loc, length = (_frac(100, K), _frac(2000, K)), (_frac(400, K), _frac(600, K))
        table = {
            AnomalyType.PLATFORM: (loc, length, (-1.0, 1.0)),
            AnomalyType.MEAN_SHIFT: (loc, length, (-1.0, 1.0)),
            AnomalyType.AMPLITUDE: (loc, length, (1.0, 6.0)),
            AnomalyType.TREND: (loc, length, (-0.01, 0.01)),
            AnomalyType.EXTREMUM: ((_frac(100, K), _frac(2600, K)), (1.0 / K, 1.0 / K), (-15.0, 15.0)),
        }
    elif dataset == "mocap":
        K = 1500
        table = {
            AnomalyType.PLATFORM: ((_frac(200, K), _frac(800, K)), (_frac(100, K), _frac(200, K)), (-1.0, 1.0)),
            # phase units: 1..3 starting phase, 1..6 phases long; here a phase spans 1/10 of the series
            AnomalyType.FREQUENCY_SHIFT: ((0.1, 0.3), (0.1, 0.6), (1.0, 3.0)),
        }
    else:
        raise ValueError(f"unknown dataset {dataset!r}")
    if t not in table:
        raise ValueError(f"no {dataset} hyperparameter space for {t.value}")
    loc, length, level = table[t]
    return HyperDomain(t, loc, length, level)


DESK_LENGTH = (0.1, 0.4)


def desk_domain(anomaly_type, family: str = "ecg", K: int = 256) -> HyperDomain:
    """Ranges for reduced-length series.

    Locations and lengths are already relative to K.  Window lengths on
    ecg-like series are widened to [0.1, 0.4] so that tasks with longer
    anomalies stay inside the box.  Trend slopes are per sample, so they are
    rescaled by 2700 / K (keeping the total rise over a window unchanged) and
    widened to +-0.2 so that tuned slopes have interior room.  Frequency shift
    windows are expressed directly as fractions of K.
    """
    t = AnomalyType.parse(anomaly_type)
    if family == "gait":
        if t is AnomalyType.FREQUENCY_SHIFT:
            return HyperDomain(t, (0.1, 0.55), (0.2, 0.35), (1.0, 3.0))
        if t is AnomalyType.PLATFORM:
            return HyperDomain(t, (0.1, 0.55), (0.2, 0.35), (-1.0, 1.0))
    base = paper_domain(t if t is not AnomalyType.FREQUENCY_SHIFT else AnomalyType.PLATFORM, "physionet")
    if t is not AnomalyType.EXTREMUM:
        base = replace(base, length=DESK_LENGTH)
    if t is AnomalyType.FREQUENCY_SHIFT:
        return HyperDomain(t, base.location, base.length, (1.0, 3.0))
    if t is AnomalyType.TREND:
        scale = max(0.2, 0.01 * 2700 / K)
        return replace(base, level=(-scale, scale))
    if t is AnomalyType.EXTREMUM:
        return replace(base, length=(1.0 / K, 1.0 / K))
    return base


def inject(x, a: AugParams):
    """Return a copy of ``x`` with the anomaly described by ``a`` injected.

    ``x`` may be a 1-D array or any object with a ``values`` array (for
    example :class:`tsap.data.Series`); the return type follows the input.
    """
    values = getattr(x, "values", x)
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise InvalidParamsError(f"inject expects a univariate series, got shape {arr.shape}")
    K = arr.shape[0]
    if K < 2:
        raise InvalidParamsError("series must have at least two samples")
    start, stop = a.window(K)
    t = a.anomaly_type
    seg = arr[start:stop]
    if t is AnomalyType.PLATFORM:
        seg[:] = a.level
    elif t is AnomalyType.MEAN_SHIFT:
        seg += a.level
    elif t is AnomalyType.AMPLITUDE:
        seg *= a.level
    elif t is AnomalyType.TREND:
        seg += a.level * np.arange(stop - start)
    elif t is AnomalyType.EXTREMUM:
        arr[start] = a.level
    elif t is AnomalyType.FREQUENCY_SHIFT:
        arr[start:stop] = _time_warp(seg.copy(), 1.0 + a.level)
    else:  # pragma: no cover - enum is exhaustive
        raise InvalidParamsError(f"unsupported anomaly type {t}")
    if hasattr(x, "values") and hasattr(x, "with_values"):
        return x.with_values(arr)
    return arr


def _time_warp(seg: np.ndarray, factor: float) -> np.ndarray:
    """Replay ``seg`` ``factor`` times faster, wrapping around its end.

    Positions are read with linear interpolation on the periodic extension of
    the segment, so a factor of 1 is the identity.
    """
    m = seg.shape[0]
    if m < 2:
        return seg
    pos = np.mod(np.arange(m) * factor, m)
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    hi = (lo + 1) % m
    return (1.0 - frac) * seg[lo % m] + frac * seg[hi]


def inject_batch(X: np.ndarray, params: list[AugParams]) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(params) != X.shape[0]:
        raise InvalidParamsError("inject_batch needs an (n, K) array and n parameter sets")
    return np.stack([inject(x, a) for x, a in zip(X, params)])


def sample_params(domain: HyperDomain, rng: np.random.Generator, anomaly_type=None, **fixed) -> AugParams:
    """Draw (location, length, level) uniformly from the domain's box.

    Keyword arguments pin individual fields.  ``location`` is capped so the
    window stays inside the series.
    """
    t = AnomalyType.parse(anomaly_type) if anomaly_type is not None else domain.anomaly_type
    if t is not domain.anomaly_type:
        raise ValueError(f"domain is for {domain.anomaly_type.value}, asked to sample {t.value}")
    draws = {name: float(rng.uniform(*domain.bounds(name))) for name in HYPER_FIELDS}
    draws.update({k: float(v) for k, v in fixed.items()})
    if t is AnomalyType.EXTREMUM:
        draws["length"] = domain.length[0]
    else:
        draws["location"] = min(draws["location"], 1.0 - draws["length"])
    return AugParams(t, draws["location"], draws["length"], draws["level"])


def build_aug_dataset(D_trn, domain: HyperDomain, rng: np.random.Generator, anomaly_type=None):
    """Pair every training series with one injected copy and its parameters."""
    X = np.asarray(getattr(D_trn, "X", D_trn), dtype=np.float64)
    out = []
    for x in X:
        a = sample_params(domain, rng, anomaly_type)
        out.append((inject(x, a), a))
    return out
