"""Chain traces: in-memory storage and the delimited text format.

A trace holds, for each kept iteration, a set of global scalars (for
instance ``alpha`` or ``tau2``) and a set of area-level arrays. Area-level
keys follow ``<response>.<coefficient>``, e.g. ``y1.x_x`` for the covariate
slope of the count predictor, plus ``lp.y1`` for the count log relative risk
and ``alloc`` for the (1-based) component labels.

On disk a trace is a comma-separated file with one row per kept iteration and
a JSON sidecar (``<file>.schema.json``) that lists the columns in order and
carries the run metadata (acceptance rates, tuned proposal scales, config).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TraceError(ValueError):
    pass


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)!r}")


@dataclass
class ChainTrace:
    scalar_names: list
    area_names: list
    n_areas: int
    area_ids: np.ndarray | None = None
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scalars: dict = field(default_factory=dict)
    areas: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [k for k in list(self.scalar_names) + list(self.area_names) if "," in k]
        if bad:
            raise TraceError(f"column names may not contain commas: {bad}")
        if self.area_ids is None:
            self.area_ids = np.arange(1, self.n_areas + 1)
        self._rows_it = []
        self._rows_s = {k: [] for k in self.scalar_names}
        self._rows_a = {k: [] for k in self.area_names}
        if not self.scalars:
            self.scalars = {k: np.zeros(0) for k in self.scalar_names}
        if not self.areas:
            self.areas = {k: np.zeros((0, self.n_areas)) for k in self.area_names}

    def __len__(self) -> int:
        return len(self.iterations) + len(self._rows_it)

    def append(self, iteration: int, scalars: dict, areas: dict) -> None:
        self._rows_it.append(int(iteration))
        for k in self.scalar_names:
            self._rows_s[k].append(float(scalars[k]))
        for k in self.area_names:
            self._rows_a[k].append(np.asarray(areas[k], dtype=float).copy())

    def _flush(self) -> None:
        if not self._rows_it:
            return
        self.iterations = np.concatenate([self.iterations, np.array(self._rows_it, dtype=np.int64)])
        for k in self.scalar_names:
            self.scalars[k] = np.concatenate([self.scalars[k], np.array(self._rows_s[k])])
            self._rows_s[k] = []
        for k in self.area_names:
            self.areas[k] = np.vstack([self.areas[k], np.array(self._rows_a[k]).reshape(-1, self.n_areas)])
            self._rows_a[k] = []
        self._rows_it = []

    def finalize(self, **meta) -> "ChainTrace":
        self._flush()
        self.meta.update(meta)
        return self

    def scalar(self, name: str) -> np.ndarray:
        self._flush()
        try:
            return self.scalars[name]
        except KeyError:
            raise TraceError(f"trace has no scalar {name!r}") from None

    def area(self, name: str) -> np.ndarray:
        """Draws of an area-level quantity, shape ``(kept iterations, n)``."""
        self._flush()
        try:
            return self.areas[name]
        except KeyError:
            raise TraceError(f"trace has no area-level column {name!r}") from None

    @property
    def acceptance(self) -> dict:
        return dict(self.meta.get("acceptance", {}))

    # -- persistence --------------------------------------------------------

    def columns(self) -> list:
        cols = ["iter"] + list(self.scalar_names)
        for k in self.area_names:
            cols += [f"{k}[{a}]" for a in self.area_ids]
        return cols

    def to_matrix(self) -> np.ndarray:
        self._flush()
        parts = [self.iterations[:, None].astype(float)]
        parts += [self.scalars[k][:, None] for k in self.scalar_names]
        parts += [self.areas[k] for k in self.area_names]
        return np.hstack(parts) if parts else np.zeros((0, 0))

    def write(self, path) -> None:
        path = Path(path)
        mat = self.to_matrix()
        with path.open("w") as fh:
            fh.write(",".join(self.columns()) + "\n")
            if mat.size:
                np.savetxt(fh, mat, fmt="%.17g", delimiter=",")
        schema = {
            "columns": self.columns(),
            "scalars": list(self.scalar_names),
            "areas": list(self.area_names),
            "area_ids": [int(a) for a in self.area_ids],
            "meta": self.meta,
        }
        schema_path(path).write_text(json.dumps(schema, indent=1, sort_keys=True, default=_json_default) + "\n")

    @classmethod
    def read(cls, path) -> "ChainTrace":
        path = Path(path)
        try:
            schema = json.loads(schema_path(path).read_text())
            with path.open() as fh:
                header = fh.readline().strip().split(",")
                body = fh.read()
        except (OSError, json.JSONDecodeError) as exc:
            raise TraceError(f"cannot read trace {path}: {exc}") from exc
        if header != schema["columns"]:
            raise TraceError(f"{path}: header does not match its schema")
        mat = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2) if body.strip() else np.zeros((0, len(header)))
        ids = np.array(schema["area_ids"], dtype=np.int64)
        n = ids.size
        tr = cls(schema["scalars"], schema["areas"], n, area_ids=ids, meta=schema["meta"])
        tr.iterations = mat[:, 0].astype(np.int64)
        col = 1
        for k in tr.scalar_names:
            tr.scalars[k] = mat[:, col].copy()
            col += 1
        for k in tr.area_names:
            tr.areas[k] = mat[:, col:col + n].copy()
            col += n
        return tr


def schema_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".schema.json")
