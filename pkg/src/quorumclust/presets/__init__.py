"""Shipped experiment presets.

Each preset is a JSON file bundling a dataset recipe with the engine or
controller parameters for one reproducible run.  Presets are the single
source of truth for benchmark parameters: the test suite, the service,
and the CLI all start from here.  Explicit flags then override fields.

A preset's ``tuned`` flag records whether the shipped parameters were
actually validated against the real dataset.  Presets for datasets that
cannot be redistributed (see README data drop-in notes) ship untuned
starting parameters and ``tuned: false``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..datasets import (
    LabeledDataset,
    load_distance_matrix,
    load_graph_edges,
    load_points_csv,
    synth,
)
from ..engine import EngineConfig
from ..switching import MultiModelConfig
from ..tuning import TuningConfig

__all__ = [
    "Preset",
    "available",
    "load",
    "resolve_data_path",
    "describe_all",
]

_KINDS = ("static", "stream", "multimodel")

# flat override keys that belong to the nested tuning config
_TUNING_KEYS = {"a", "alpha", "beta", "dt", "f_init_magnitude",
                "f_init_cutoff", "policy"}
_ALIASES = {"gamma": "gamma_grow"}


def _package_files():
    return resources.files(__package__)


def available() -> list[str]:
    """Names of every shipped preset, sorted."""
    names = [
        entry.name[:-5]
        for entry in _package_files().iterdir()
        if entry.name.endswith(".json")
    ]
    return sorted(names)


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str
    description: str
    dataset: dict | None = None
    engine: dict | None = None
    scenario: dict | None = None
    multimodel: dict | None = None
    reference_accuracy: float | None = None
    tuned: bool = True
    notes: str = ""

    def engine_config(self, **overrides) -> EngineConfig:
        """EngineConfig from the preset, with flat field overrides.

        Override keys use dataclass field names; tuning fields (a, alpha,
        beta, dt, ...) are routed into the nested config, and ``gamma`` is
        accepted for ``gamma_grow``.  None values are ignored so callers
        can pass optional CLI flags straight through.
        """
        if self.engine is None:
            raise ValueError(f"preset {self.name!r} carries no engine config")
        spec = copy.deepcopy(self.engine)
        tuning = spec.pop("tuning", {})
        for key, value in overrides.items():
            if value is None:
                continue
            key = _ALIASES.get(key, key)
            if key in _TUNING_KEYS:
                tuning[key] = value
            else:
                spec[key] = value
        return EngineConfig(tuning=TuningConfig(**tuning), **spec)

    def multimodel_config(self, **overrides) -> MultiModelConfig:
        if self.multimodel is None:
            raise ValueError(f"preset {self.name!r} is not a controller preset")
        spec = copy.deepcopy(self.multimodel)
        for key, value in overrides.items():
            if value is not None:
                spec[key] = value
        for key in ("nominals", "real_params", "changed_params"):
            if key in spec:
                val = spec[key]
                if key == "nominals":
                    spec[key] = tuple(tuple(map(float, row)) for row in val)
                else:
                    spec[key] = tuple(map(float, val))
        return MultiModelConfig(**spec)

    def load_data(self, search=()) -> LabeledDataset:
        if self.dataset is None:
            raise ValueError(f"preset {self.name!r} carries no dataset")
        return load_dataset(self.dataset, search=search)


def load(name: str) -> Preset:
    """Load one preset by name."""
    entry = _package_files() / f"{name}.json"
    try:
        raw = entry.read_text()
    except (FileNotFoundError, OSError):
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(available())}"
        ) from None
    spec = json.loads(raw)
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"preset {name!r} has invalid kind {kind!r}")
    return Preset(
        name=spec.get("name", name),
        kind=kind,
        description=spec.get("description", ""),
        dataset=spec.get("dataset"),
        engine=spec.get("engine"),
        scenario=spec.get("scenario"),
        multimodel=spec.get("multimodel"),
        reference_accuracy=spec.get("reference_accuracy"),
        tuned=bool(spec.get("tuned", True)),
        notes=spec.get("notes", ""),
    )


def describe_all() -> str:
    """Human-readable catalogue of every preset (for --help and /presets)."""
    lines = []
    for name in available():
        p = load(name)
        flag = "" if p.tuned else "  [untuned: needs dropped-in data]"
        lines.append(f"{name} ({p.kind}){flag}")
        lines.append(f"    {p.description}")
        if p.engine:
            tuning = p.engine.get("tuning", {})
            core = ", ".join(
                f"{k}={v}" for k, v in tuning.items()
            )
            rest = ", ".join(
                f"{k}={v}" for k, v in p.engine.items() if k != "tuning"
            )
            lines.append(f"    tuning: {core}")
            lines.append(f"    engine: {rest}")
        if p.multimodel:
            rest = ", ".join(f"{k}={v}" for k, v in p.multimodel.items())
            lines.append(f"    controller: {rest}")
        lines.append("")
    return "\n".join(lines).rstrip()


def resolve_data_path(path, search=()) -> Path:
    """Find a data file: as given, under data/, or in the package data dir.

    ``search`` prepends extra directories.  Raises FileNotFoundError
    naming every location tried, so callers can surface an actionable
    message for datasets that must be dropped in manually.
    """
    tried = []
    candidates = [Path(d) / path for d in search]
    candidates.append(Path(path))
    candidates.append(Path("data") / path)
    for cand in candidates:
        if cand.is_file():
            return cand
        tried.append(str(cand))
    pkg_data = resources.files("quorumclust") / "data" / str(path)
    try:
        with resources.as_file(pkg_data) as concrete:
            if concrete.is_file():
                return concrete
            tried.append(str(concrete))
    except (FileNotFoundError, OSError):
        tried.append(str(pkg_data))
    raise FileNotFoundError(
        f"data file {str(path)!r} not found; tried: " + ", ".join(tried)
    )


def _load_label_file(path) -> np.ndarray:
    """One label per line; '#' comments and blank lines are skipped."""
    labels = []
    with open(path) as fh:
        for line in fh:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            labels.append(text)
    try:
        return np.array([int(x) for x in labels])
    except ValueError:
        return np.array(labels)


def _load_digit_table(path, digits, sample, sample_seed, standardize):
    """Comma-separated rows of pen trajectory features with a trailing
    class digit; optionally filter classes and subsample."""
    table = np.loadtxt(path, delimiter=",")
    if table.ndim != 2 or table.shape[1] < 2:
        raise ValueError(f"{path}: expected feature columns plus a label column")
    coords = table[:, :-1]
    labels = table[:, -1].astype(int)
    if digits is not None:
        keep = np.isin(labels, np.asarray(list(digits), dtype=int))
        coords, labels = coords[keep], labels[keep]
    if sample is not None and sample < len(labels):
        rng = np.random.default_rng(sample_seed)
        idx = np.sort(rng.choice(len(labels), size=int(sample), replace=False))
        coords, labels = coords[idx], labels[idx]
    if standardize:
        sd = coords.std(axis=0)
        sd[sd == 0] = 1.0
        coords = (coords - coords.mean(axis=0)) / sd
    return coords, labels


def _require(spec: dict, key: str):
    try:
        return spec[key]
    except KeyError:
        raise ValueError(f"dataset spec is missing the {key!r} field") from None


def load_dataset(spec: dict, search=()) -> LabeledDataset:
    """Materialize a preset dataset recipe."""
    kind = spec.get("kind")
    if kind == "synth":
        return synth(
            _require(spec, "synth"),
            n=int(spec.get("n", 200)),
            noise=float(spec.get("noise", 0.05)),
            seed=int(spec.get("seed", 0)),
            scale=float(spec.get("scale", 1.0)),
        )
    if kind == "points_csv":
        path = resolve_data_path(_require(spec, "path"), search=search)
        return load_points_csv(path, standardize=bool(spec.get("standardize", False)))
    if kind == "distance_matrix":
        path = resolve_data_path(_require(spec, "path"), search=search)
        data = load_distance_matrix(path)
        labels_path = spec.get("labels_path")
        if labels_path is not None:
            labels = _load_label_file(resolve_data_path(labels_path, search=search))
            if len(labels) != data.n:
                raise ValueError(
                    f"{labels_path}: {len(labels)} labels for {data.n} rows"
                )
            data.labels = labels
        return data
    if kind == "graph_edges":
        path = resolve_data_path(_require(spec, "path"), search=search)
        return load_graph_edges(path)
    if kind == "digit_table":
        path = resolve_data_path(_require(spec, "path"), search=search)
        coords, labels = _load_digit_table(
            path,
            digits=spec.get("digits"),
            sample=spec.get("sample"),
            sample_seed=int(spec.get("sample_seed", 7)),
            standardize=bool(spec.get("standardize", True)),
        )
        name = spec.get("name", Path(str(path)).stem)
        return LabeledDataset(name=name, coords=coords, labels=labels)
    raise ValueError(f"unknown dataset kind {kind!r}")
