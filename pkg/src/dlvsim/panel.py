"""Option-surface panel ingestion, log transform, and window extraction.

A panel is a T x N_X matrix of discrete-local-volatility levels with one
column per (relative strike, maturity) grid point.  CSV layout::

    date,K=0.80|M=20,K=0.85|M=20,...
    2011-01-03,0.2415,0.2233,...

Values below the floor (default 0.01) are clamped on ingest; the clamp count
is kept so callers can report it.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FLOOR = 0.01
TRAIN_FRACTION = 0.85

_LABEL_RE = re.compile(r"^K=(?P<k>[0-9.]+)\|M=(?P<m>[0-9]+)$")


class PanelError(ValueError):
    """Malformed panel input; message carries row/column context."""


@dataclass(frozen=True)
class GridLabel:
    relative_strike: float
    maturity_days: int

    def __post_init__(self):
        if self.relative_strike <= 0:
            raise PanelError(f"relative_strike must be > 0, got {self.relative_strike}")
        if self.maturity_days <= 0:
            raise PanelError(f"maturity_days must be > 0, got {self.maturity_days}")

    def __str__(self):
        return f"K={self.relative_strike:.2f}|M={self.maturity_days}"

    @classmethod
    def parse(cls, text: str) -> "GridLabel":
        m = _LABEL_RE.match(text.strip())
        if not m:
            raise PanelError(f"cannot parse grid label {text!r} (expected K=<k>|M=<m>)")
        return cls(float(m.group("k")), int(m.group("m")))


@dataclass
class Panel:
    """Raw DLV levels, floored to be strictly positive."""

    times: list[str]
    labels: list[GridLabel]
    values: np.ndarray  # (T, N_X)
    floor: float = DEFAULT_FLOOR
    floored_count: int = 0

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]


@dataclass
class LogPanel:
    """Natural logs of floored DLV levels; same layout as Panel."""

    times: list[str]
    labels: list[GridLabel]
    values: np.ndarray  # (T, N_X)
    floor: float = DEFAULT_FLOOR

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]


def load_panel(path, floor: float = DEFAULT_FLOOR) -> Panel:
    """Read a panel CSV, flooring sub-floor values and validating layout."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise PanelError(f"{path}: header must start with 'date' and have >=1 value column")
        labels = [GridLabel.parse(cell) for cell in header[1:]]
        seen: set[GridLabel] = set()
        for lab in labels:
            if lab in seen:
                raise PanelError(f"{path}: duplicate grid label {lab}")
            seen.add(lab)

        times: list[str] = []
        rows: list[list[float]] = []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(labels) + 1:
                raise PanelError(f"{path}: row {i} has {len(row)} cells, expected {len(labels) + 1}")
            times.append(row[0].strip())
            parsed = []
            for j, cell in enumerate(row[1:], start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise PanelError(
                        f"{path}: non-numeric cell at row {i}, column {header[j]!r}: {cell!r}"
                    ) from None
            rows.append(parsed)

    if not rows:
        raise PanelError(f"{path}: no data rows")
    if len(set(times)) != len(times):
        dup = next(t for t in times if times.count(t) > 1)
        raise PanelError(f"{path}: duplicate date {dup!r}")

    order = np.argsort(times, kind="stable")
    times = [times[i] for i in order]
    values = np.asarray(rows, dtype=np.float64)[order]

    floored = int(np.count_nonzero(values < floor))
    values = np.maximum(values, floor)
    return Panel(times=times, labels=labels, values=values,
                 floor=floor, floored_count=floored)


def to_log(panel: Panel, floor: float = DEFAULT_FLOOR) -> LogPanel:
    if floor <= 0:
        raise PanelError(f"floor must be positive, got {floor}")
    values = np.log(np.maximum(panel.values, floor))
    return LogPanel(times=list(panel.times), labels=list(panel.labels),
                    values=values, floor=floor)


def from_log_values(values: np.ndarray, floor: float = DEFAULT_FLOOR,
                    times=None, labels=None) -> LogPanel:
    """Wrap a bare (T, N_X) log-level matrix as a LogPanel (synthetic data)."""
    values = np.asarray(values, dtype=np.float64)
    T, n = values.shape
    if times is None:
        times = [f"t{i:06d}" for i in range(T)]
    if labels is None:
        labels = [GridLabel(1.0 + 0.05 * j, 20 + j) for j in range(n)]
    return LogPanel(times=list(times), labels=list(labels), values=values, floor=floor)


def log_returns(lp: LogPanel | np.ndarray) -> np.ndarray:
    """One-step differences of log levels: row t is lp[t+1] - lp[t]."""
    values = lp.values if isinstance(lp, LogPanel) else np.asarray(lp)
    if values.shape[0] < 2:
        raise PanelError(f"need at least 2 rows for returns, got {values.shape[0]}")
    return np.diff(values, axis=0)


@dataclass
class WindowSet:
    """(state window, next row) training pairs over one log panel.

    States are the flattened last ``lags + 1`` rows ending at t, newest row
    first; targets are row t + 1.  The train/validation split randomizes the
    assignment of pairs, never the rows inside a window.
    """

    values: np.ndarray          # (T, N) source matrix
    lags: int
    target_idx: np.ndarray      # indices t+1, one per pair
    train_mask: np.ndarray      # bool, parallel to target_idx
    split_seed: int = 0

    @property
    def n_pairs(self) -> int:
        return len(self.target_idx)

    @property
    def state_dim(self) -> int:
        return (self.lags + 1) * self.values.shape[1]

    def _indices(self, which: str) -> np.ndarray:
        if which == "train":
            return self.target_idx[self.train_mask]
        if which == "val":
            return self.target_idx[~self.train_mask]
        if which == "all":
            return self.target_idx
        raise ValueError(f"unknown subset {which!r}")

    def states(self, which: str = "train") -> np.ndarray:
        idx = self._indices(which)
        return state_matrix(self.values, idx - 1, self.lags)

    def targets(self, which: str = "train") -> np.ndarray:
        return self.values[self._indices(which)]


def state_matrix(values: np.ndarray, t_idx: np.ndarray, lags: int) -> np.ndarray:
    """Flattened states [x_t, x_{t-1}, ..., x_{t-lags}] for each t in t_idx."""
    cols = [values[t_idx - k] for k in range(lags + 1)]
    return np.concatenate(cols, axis=1)


def make_windows(lp: LogPanel | np.ndarray, lags: int, split_seed: int,
                 train_fraction: float = TRAIN_FRACTION) -> WindowSet:
    values = lp.values if isinstance(lp, LogPanel) else np.asarray(lp, dtype=np.float64)
    if lags < 0:
        raise PanelError(f"lags must be >= 0, got {lags}")
    T = values.shape[0]
    if T < lags + 2:
        raise PanelError(f"need T >= lags + 2 rows, got T={T}, lags={lags}")
    target_idx = np.arange(lags + 1, T)
    n = len(target_idx)
    n_train = int(round(train_fraction * n))
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(n)
    train_mask = np.zeros(n, dtype=bool)
    train_mask[perm[:n_train]] = True
    return WindowSet(values=values, lags=lags, target_idx=target_idx,
                     train_mask=train_mask, split_seed=split_seed)


# ---------------------------------------------------------------------------
# canonical artifacts
# ---------------------------------------------------------------------------

def save_log_panel(lp: LogPanel, path) -> None:
    """Write log levels as CSV plus a JSON sidecar with floor and grid."""
    path = str(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + [str(lab) for lab in lp.labels])
        for t, row in zip(lp.times, lp.values):
            writer.writerow([t] + [repr(v) for v in row])
    sidecar = {
        "kind": "log_panel",
        "floor": lp.floor,
        "n_times": lp.n_times,
        "n_dims": lp.n_dims,
        "grid": [{"relative_strike": lab.relative_strike,
                  "maturity_days": lab.maturity_days} for lab in lp.labels],
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_log_panel(path) -> LogPanel:
    path = str(path)
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "log_panel":
        raise PanelError(f"{path}: sidecar is not a log_panel artifact")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels = [GridLabel.parse(cell) for cell in header[1:]]
        times, rows = [], []
        for row in reader:
            if not row:
                continue
            times.append(row[0])
            rows.append([float(c) for c in row[1:]])
    return LogPanel(times=times, labels=labels,
                    values=np.asarray(rows, dtype=np.float64),
                    floor=float(meta["floor"]))
