"""Labelled feature matrices shared by all extractors and the pipeline.

Rows are feature vectors tagged with user, session, and timestamp; NaN
cells mark invalid/missing values and serialize as empty CSV fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FeatureMatrix:
    columns: tuple[str, ...]
    values: np.ndarray        # (n, d) float64, NaN = missing
    user_ids: np.ndarray      # (n,) object
    session_ids: np.ndarray   # (n,) object
    t_ms: np.ndarray          # (n,) int64
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        self.columns = tuple(self.columns)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(self.columns))
        self.user_ids = np.asarray(self.user_ids, dtype=object)
        self.session_ids = np.asarray(self.session_ids, dtype=object)
        self.t_ms = np.asarray(self.t_ms, dtype=np.int64)
        n = len(self.values)
        if not (len(self.user_ids) == len(self.session_ids) == len(self.t_ms) == n):
            raise ValueError("row label arrays disagree with values")

    @property
    def n_rows(self) -> int:
        return len(self.values)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def col_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"no feature {name!r}") from None

    def col(self, name: str) -> np.ndarray:
        return self.values[:, self.col_index(name)]

    def select_columns(self, names) -> "FeatureMatrix":
        idx = [self.col_index(name) for name in names]
        return FeatureMatrix(tuple(names), self.values[:, idx],
                             self.user_ids, self.session_ids, self.t_ms)

    def take(self, index) -> "FeatureMatrix":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return FeatureMatrix(self.columns, self.values[index], self.user_ids[index],
                             self.session_ids[index], self.t_ms[index])

    def for_user(self, user_id: str) -> "FeatureMatrix":
        return self.take(self.user_ids == user_id)

    def users(self) -> list[str]:
        return sorted(set(self.user_ids.tolist()))

    def sessions(self) -> list[str]:
        return sorted(set(self.session_ids.tolist()))

    @classmethod
    def empty(cls, columns) -> "FeatureMatrix":
        columns = tuple(columns)
        return cls(columns, np.empty((0, len(columns))), np.empty(0, dtype=object),
                   np.empty(0, dtype=object), np.empty(0, dtype=np.int64))

    @classmethod
    def vstack(cls, parts: list["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("nothing to stack")
        columns = parts[0].columns
        for part in parts[1:]:
            if part.columns != columns:
                raise ValueError("column mismatch in vstack")
        return cls(
            columns,
            np.vstack([p.values for p in parts]),
            np.concatenate([p.user_ids for p in parts]),
            np.concatenate([p.session_ids for p in parts]),
            np.concatenate([p.t_ms for p in parts]),
        )

    # -- CSV ---------------------------------------------------------------

    def write_csv(self, path: str, header_comments: list[str] | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in header_comments or []:
                fh.write(f"# {line}\n")
            fh.write("user_id,session_id,t_ms," + ",".join(self.columns) + "\n")
            for i in range(self.n_rows):
                cells = ["" if np.isnan(v) else repr(float(v))
                         for v in self.values[i]]
                fh.write(f"{self.user_ids[i]},{self.session_ids[i]},{self.t_ms[i]},"
                         + ",".join(cells) + "\n")

    @classmethod
    def read_csv(cls, path: str) -> "FeatureMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
        if not lines:
            raise ValueError(f"{path}: empty feature file")
        header = lines[0].split(",")
        if header[:3] != ["user_id", "session_id", "t_ms"]:
            raise ValueError(f"{path}: unexpected header")
        columns = tuple(header[3:])
        users, sessions, ts, rows = [], [], [], []
        for ln in lines[1:]:
            if not ln:
                continue
            parts = ln.split(",")
            users.append(parts[0])
            sessions.append(parts[1])
            ts.append(int(parts[2]))
            rows.append([float(c) if c else np.nan for c in parts[3:]])
        values = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(columns)))
        return cls(columns, values, np.array(users, dtype=object),
                   np.array(sessions, dtype=object), np.array(ts, dtype=np.int64))

    def write_long_csv(self, path: str, header_comments: list[str] | None = None) -> None:
        """Sparse event form: one line per finite cell."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in header_comments or []:
                fh.write(f"# {line}\n")
            fh.write("user_id,session_id,t_ms,feature,value\n")
            for i in range(self.n_rows):
                for j in np.flatnonzero(np.isfinite(self.values[i])):
                    fh.write(f"{self.user_ids[i]},{self.session_ids[i]},{self.t_ms[i]},"
                             f"{self.columns[j]},{repr(float(self.values[i, j]))}\n")

    @classmethod
    def read_long_csv(cls, path: str, columns) -> "FeatureMatrix":
        """Rebuild a sparse matrix: one row per input line."""
        columns = tuple(columns)
        index = {name: i for i, name in enumerate(columns)}
        users, sessions, ts, rows = [], [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
        if not lines or lines[0] != "user_id,session_id,t_ms,feature,value":
            raise ValueError(f"{path}: unexpected header")
        for ln in lines[1:]:
            if not ln:
                continue
            user, session, t, feature, value = ln.split(",")
            if feature not in index:
                raise ValueError(f"{path}: unknown feature {feature!r}")
            row = np.full(len(columns), np.nan)
            row[index[feature]] = float(value)
            users.append(user)
            sessions.append(session)
            ts.append(int(t))
            rows.append(row)
        values = np.array(rows) if rows else np.empty((0, len(columns)))
        return cls(columns, values, np.array(users, dtype=object),
                   np.array(sessions, dtype=object), np.array(ts, dtype=np.int64))
