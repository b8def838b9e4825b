"""Core value types and file formats shared by the generation pipeline.

Time convention: reconstructed event series run on a clock with the impact
at t = 0 s, so samples cover [-5.0, -0.3]. Simulations run on a clock that
starts at t = 0 s with the nominal impact at t = 5 s.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

# Impact clock anchor: series events start 5 s before impact.
EVENT_START = -5.0  # s
# Last reconstructed sample before impact.
EVENT_END = -0.3  # s
# File encoding of "no abnormal acceleration onset" (in memory: math.inf).
TA_SENTINEL = 999.0
# Comparison slack for derived non-negativity checks.
EPS = 1e-9

SOURCES = ("SHRP2", "CISS", "PCM", "FIXTURE")


class SchemaError(ValueError):
    """Raised when a CSV file does not match its declared schema."""


def derive_seed(master: int, tag: str) -> int:
    """Stable 63-bit sub-seed for a named stage or draw within a run."""
    digest = hashlib.blake2b(f"{master}/{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


# ---------------------------------------------------------------------------
# Speed profile


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear lead-vehicle speed profile, parameterized backward
    from impact: a steady segment (duration tau_s at speed v_c), then a
    sloped segment (accel a_1, duration tau_1), then a second sloped segment
    (accel a_2, duration tau_2). Durations of unused segments are zero.
    """

    v_c: float    # speed at impact, m/s
    a_1: float    # m/s^2
    a_2: float    # m/s^2
    tau_s: float  # s
    tau_1: float  # s
    tau_2: float  # s

    @property
    def v_l_init(self) -> float:
        """Speed at the start of the profile span."""
        return self.v_c - self.a_1 * self.tau_1 - self.a_2 * self.tau_2

    @property
    def duration(self) -> float:
        return self.tau_s + self.tau_1 + self.tau_2

    def knot_speeds(self) -> tuple[float, float, float]:
        """Speeds at the profile's segment boundaries, forward in time."""
        v0 = self.v_l_init
        return (v0, v0 + self.a_2 * self.tau_2, self.v_c)

    def validate(self) -> "SpeedProfile":
        for name in ("tau_s", "tau_1", "tau_2"):
            tau = getattr(self, name)
            if not math.isfinite(tau) or tau < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {tau}")
        if self.duration > 5.0 + EPS:
            raise ValueError(f"segment durations sum to {self.duration:.6f} > 5 s")
        if not math.isfinite(self.v_c) or self.v_c < -EPS:
            raise ValueError(f"v_c must be >= 0, got {self.v_c}")
        for v in self.knot_speeds():
            if not math.isfinite(v) or v < -EPS:
                raise ValueError(f"profile reaches negative speed {v:.6g} m/s")
        return self

    def as_row(self) -> dict[str, float]:
        return {
            "v_c": self.v_c, "a_1": self.a_1, "a_2": self.a_2,
            "tau_s": self.tau_s, "tau_1": self.tau_1, "tau_2": self.tau_2,
        }


# ---------------------------------------------------------------------------
# Crash events


@dataclass(frozen=True)
class CrashEvent:
    """One reconstructed rear-end event.

    Series events carry a time axis plus any of the speed/gap series.
    Scalar events (injury-database rows) carry only initial speed and
    Delta-v values.
    """

    event_id: str
    source: str
    rate_hz: float
    t: np.ndarray | None = None
    v_f: np.ndarray | None = None
    v_l: np.ndarray | None = None
    d: np.ndarray | None = None
    dv_f: float | None = None
    dv_l: float | None = None
    v_f_init: float | None = None

    def series_names(self) -> tuple[str, ...]:
        return tuple(n for n in ("v_f", "v_l", "d") if getattr(self, n) is not None)

    def validate(self) -> "CrashEvent":
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r} for event {self.event_id}")
        if self.t is None:
            if self.series_names():
                raise ValueError(f"event {self.event_id}: series without a time axis")
            return self
        t = self.t
        if t.ndim != 1 or t.size < 2:
            raise ValueError(f"event {self.event_id}: time axis needs >= 2 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError(f"event {self.event_id}: time axis not strictly increasing")
        if abs(t[0] - EVENT_START) > 1e-6:
            raise ValueError(
                f"event {self.event_id}: time axis starts at {t[0]:.6g}, expected {EVENT_START}"
            )
        step = 1.0 / self.rate_hz
        if np.max(np.abs(np.diff(t) - step)) > 1e-6:
            raise ValueError(f"event {self.event_id}: time axis not uniform at {self.rate_hz} Hz")
        for name in self.series_names():
            series = getattr(self, name)
            if series.shape != t.shape:
                raise ValueError(f"event {self.event_id}: {name} length != time axis length")
            if not np.all(np.isfinite(series)):
                raise ValueError(f"event {self.event_id}: {name} has non-finite samples")
        if self.d is not None and np.any(self.d <= 0.0):
            raise ValueError(f"event {self.event_id}: gap must stay > 0 before impact")
        return self


def initial_state(event: CrashEvent) -> tuple[float, float, float]:
    """First-sample (d, v_f, v_l) of a series event; names any absent signal."""
    for name in ("d", "v_f", "v_l"):
        if getattr(event, name) is None:
            raise ValueError(f"event {event.event_id}: {name} absent")
    return float(event.d[0]), float(event.v_f[0]), float(event.v_l[0])


def resample_event(event: CrashEvent, rate_hz: float) -> CrashEvent:
    """Linearly interpolate all series of a series event onto a new rate.

    The grid starts at the original first sample; when the span is an exact
    multiple of the new step the original end sample is preserved.
    """
    if event.t is None:
        raise ValueError(f"event {event.event_id}: cannot resample a scalar event")
    if rate_hz <= 0:
        raise ValueError("rate_hz must be > 0")
    t = event.t
    span = float(t[-1] - t[0])
    n = span * rate_hz
    n_steps = int(round(n)) if abs(n - round(n)) < 1e-6 else int(math.floor(n))
    new_t = t[0] + np.arange(n_steps + 1, dtype=float) / rate_hz
    updates: dict[str, np.ndarray] = {"t": new_t}
    for name in event.series_names():
        updates[name] = np.interp(new_t, t, getattr(event, name))
    return replace(event, rate_hz=float(rate_hz), **updates).validate()


# ---------------------------------------------------------------------------
# Weighted dataset


def _as_float_vector(name: str, values: Iterable) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"column {name!r} must be 1-D")
    return arr


@dataclass(frozen=True)
class WeightedDataset:
    """Immutable table of named float columns plus per-row sample weights."""

    columns: dict[str, np.ndarray]
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        cols = {str(k): _as_float_vector(k, v) for k, v in self.columns.items()}
        if not cols:
            raise ValueError("dataset needs at least one column")
        lengths = {v.size for v in cols.values()}
        if len(lengths) != 1:
            raise ValueError(f"columns differ in length: {sorted(lengths)}")
        n = lengths.pop()
        w = self.weights
        w = np.ones(n) if w is None else _as_float_vector("w", w)
        if w.size != n:
            raise ValueError(f"weights length {w.size} != row count {n}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and >= 0")
        for arr in cols.values():
            arr.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def col(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"no column {name!r}; have {list(self.columns)}") from None

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.col(n) for n in names])

    def with_weights(self, weights: Iterable) -> "WeightedDataset":
        return WeightedDataset(dict(self.columns), np.asarray(weights, dtype=float))

    def subset(self, index) -> "WeightedDataset":
        idx = np.asarray(index)
        return WeightedDataset(
            {k: v[idx] for k, v in self.columns.items()}, self.weights[idx]
        )

    def drop(self, *names: str) -> "WeightedDataset":
        return WeightedDataset(
            {k: v for k, v in self.columns.items() if k not in names}, self.weights
        )

    def to_csv(self, path) -> None:
        table = {k: v for k, v in self.columns.items()}
        table["w"] = self.weights
        write_table(path, table)

    @classmethod
    def from_csv(cls, path) -> "WeightedDataset":
        raw = read_table(path)
        if not raw:
            raise SchemaError(f"{path}: empty file")
        weights = None
        cols: dict[str, np.ndarray] = {}
        for name, values in raw.items():
            try:
                arr = np.array([float(v) for v in values])
            except ValueError as exc:
                raise SchemaError(f"{path}: column {name!r}: {exc}") from None
            if name == "w":
                weights = arr
            else:
                cols[name] = arr
        return cls(cols, weights)


# ---------------------------------------------------------------------------
# Scenario specification


@dataclass(frozen=True)
class ScenarioSpec:
    """Full simulation input: follower-side parameters plus the lead profile.

    t_abnormal is the onset of abnormal acceleration on the simulation
    clock; math.inf (file sentinel 999.0) means no abnormal behavior.
    """

    d_init: float     # initial gap, m
    v_f_init: float   # follower initial speed, m/s
    a_f_min: float    # strongest follower acceleration (brake floor), m/s^2
    headway: float    # desired time headway T, s
    t_glance: float   # off-road glance duration t_g, s
    t_abnormal: float  # abnormal onset t_a, s (inf = none)
    profile: SpeedProfile
    abnormal: bool = False

    def validate(self) -> "ScenarioSpec":
        if not (self.d_init > 0):
            raise ValueError(f"d_init must be > 0, got {self.d_init}")
        if self.v_f_init < 0:
            raise ValueError(f"v_f_init must be >= 0, got {self.v_f_init}")
        if not (self.headway > 0):
            raise ValueError(f"headway must be > 0, got {self.headway}")
        if self.t_glance < 0:
            raise ValueError(f"t_glance must be >= 0, got {self.t_glance}")
        if self.abnormal:
            if not (0.0 < self.t_abnormal < 5.0):
                raise ValueError(f"abnormal onset must lie in (0, 5) s, got {self.t_abnormal}")
        elif math.isfinite(self.t_abnormal):
            raise ValueError("t_abnormal must be inf when the abnormal flag is off")
        self.profile.validate()
        return self


@dataclass(frozen=True)
class MassRatioRecord:
    """Striking / struck vehicle mass pair from an injury database."""

    m_f: float  # kg
    m_l: float  # kg

    def __post_init__(self):
        if not (self.m_f > 0 and self.m_l > 0):
            raise ValueError(f"masses must be > 0, got ({self.m_f}, {self.m_l})")

    @property
    def ratio(self) -> float:
        return self.m_f / self.m_l


def ta_to_file(value: float) -> float:
    return TA_SENTINEL if math.isinf(value) else value


def ta_from_file(value: float) -> float:
    return math.inf if value >= TA_SENTINEL else value


# ---------------------------------------------------------------------------
# CSV helpers

def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_table(path, columns: dict[str, Sequence]) -> None:
    """Write named columns as CSV. Floats use repr so reads are bit-exact."""
    names = list(columns)
    data = [columns[n] for n in names]
    n_rows = {len(c) for c in data}
    if len(n_rows) != 1:
        raise ValueError(f"columns differ in length: {sorted(n_rows)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([_format_cell(v) for v in row])


def read_table(path) -> dict[str, list[str]]:
    """Read a CSV into raw string columns, preserving order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        cols: dict[str, list[str]] = {name: [] for name in header}
        if len(cols) != len(header):
            raise SchemaError(f"{path}: duplicate column names in {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {i}: {len(row)} cells, expected {len(header)}")
            for name, cell in zip(header, row):
                cols[name].append(cell)
    return cols


def _parse_float(path, line_no: int, name: str, cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise SchemaError(f"{path}: line {line_no}: column {name!r}: bad number {cell!r}") from None


def load_events(path, schema: str) -> list[CrashEvent]:
    """Load crash events from CSV.

    schema "series": long format with columns event_id, source, t, v_f, v_l, d
    (one row per sample; v_l / d cells may be empty when that signal is
    absent for the whole event). schema "scalar": one row per event with
    columns event_id, source, v_f_init, dv_f, dv_l (dv cells may be empty).
    """
    if schema not in ("series", "scalar"):
        raise ValueError(f"unknown schema {schema!r}")
    raw = read_table(path)
    required = (
        ("event_id", "source", "t", "v_f", "v_l", "d")
        if schema == "series"
        else ("event_id", "source", "v_f_init", "dv_f", "dv_l")
    )
    missing = [c for c in required if c not in raw]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing} for schema {schema!r}")
    n_rows = len(raw["event_id"])

    if schema == "scalar":
        events = []
        for i in range(n_rows):
            line = i + 2
            dv_f = raw["dv_f"][i].strip()
            dv_l = raw["dv_l"][i].strip()
            events.append(
                CrashEvent(
                    event_id=raw["event_id"][i],
                    source=raw["source"][i],
                    rate_hz=0.0,
                    v_f_init=_parse_float(path, line, "v_f_init", raw["v_f_init"][i]),
                    dv_f=_parse_float(path, line, "dv_f", dv_f) if dv_f else None,
                    dv_l=_parse_float(path, line, "dv_l", dv_l) if dv_l else None,
                ).validate()
            )
        return events

    # series: group consecutive rows by event_id
    groups: dict[str, list[int]] = {}
    for i, eid in enumerate(raw["event_id"]):
        groups.setdefault(eid, []).append(i)
    events = []
    for eid, rows in groups.items():
        first_line = rows[0] + 2
        t = np.array([_parse_float(path, r + 2, "t", raw["t"][r]) for r in rows])
        series: dict[str, np.ndarray | None] = {}
        for name in ("v_f", "v_l", "d"):
            cells = [raw[name][r].strip() for r in rows]
            if all(c == "" for c in cells):
                series[name] = None
            elif any(c == "" for c in cells):
                raise SchemaError(
                    f"{path}: event {eid} (line {first_line}): column {name!r} "
                    "must be empty for all samples or none"
                )
            else:
                series[name] = np.array(
                    [_parse_float(path, r + 2, name, c) for r, c in zip(rows, cells)]
                )
        if t.size < 2:
            raise SchemaError(f"{path}: event {eid} (line {first_line}): needs >= 2 samples")
        rate = 1.0 / float(np.median(np.diff(t)))
        # snap near-integer rates so 10 Hz data does not read as 9.9999 Hz
        if abs(rate - round(rate)) < 1e-3:
            rate = float(round(rate))
        try:
            events.append(
                CrashEvent(
                    event_id=eid, source=raw["source"][rows[0]], rate_hz=rate,
                    t=t, v_f=series["v_f"], v_l=series["v_l"], d=series["d"],
                ).validate()
            )
        except ValueError as exc:
            raise SchemaError(f"{path}: event {eid} (line {first_line}): {exc}") from None
    return events


def load_mass_records(path) -> list[MassRatioRecord]:
    raw = read_table(path)
    for col in ("m_f", "m_l"):
        if col not in raw:
            raise SchemaError(f"{path}: missing column {col!r}")
    out = []
    for i, (mf, ml) in enumerate(zip(raw["m_f"], raw["m_l"]), start=2):
        try:
            out.append(MassRatioRecord(float(mf), float(ml)))
        except ValueError as exc:
            raise SchemaError(f"{path}: line {i}: {exc}") from None
    return out
