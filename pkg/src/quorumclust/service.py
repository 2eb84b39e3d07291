"""HTTP service over the clustering engine.

Every heavy operation sits behind one POST endpoint taking a JSON body,
so the same surface serves three callers: the CLI (in-process ASGI by
default, remote with --server), notebooks via plain HTTP, and tests.
Dataset file paths inside request bodies are read on the service side.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import presets
from .datasets import LabeledDataset, script_stream, synth, _jsonable
from .engine import EngineConfig, run_static, run_stream
from .exceptions import (
    DatasetFormatError,
    NumericBlowupError,
    QuorumClustError,
    StreamEventError,
)
from .metrics import bench_table, matched_accuracy
from .switching import MultiModelConfig, run_multimodel
from .tuning import TuningConfig

__version__ = "0.1.0"


class SynthRequest(BaseModel):
    kind: str
    n: int = 200
    noise: float = 0.05
    seed: int = 0
    scale: float = 1.0


class ClusterRequest(BaseModel):
    preset: str | None = None
    dataset: dict | None = None         # overrides the preset's dataset
    engine: dict | None = None          # full engine spec when no preset
    overrides: dict = Field(default_factory=dict)  # flat field overrides
    include_history: bool = True
    data_dirs: list[str] = Field(default_factory=list)


class StreamRequest(ClusterRequest):
    scenario: dict | None = None        # overrides the preset's scenario


class ScoreRequest(BaseModel):
    labels_true: list
    labels_pred: list[int]


class BenchRequest(BaseModel):
    names: list[str] | None = None      # None = every shipped preset
    data_dirs: list[str] = Field(default_factory=list)


class MultiModelRequest(BaseModel):
    preset: str | None = None
    config: dict | None = None
    overrides: dict = Field(default_factory=dict)


def _bad_request(exc: Exception):
    return HTTPException(status_code=400, detail={
        "type": type(exc).__name__, "message": str(exc)})


def _numeric_abort(exc: NumericBlowupError):
    return HTTPException(status_code=500, detail={
        "type": "NumericBlowupError",
        "message": str(exc),
        "diagnostic": _jsonable(exc.diagnostic),
    })


def _config_dict(cfg: EngineConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["tuning"]["policy"] = cfg.tuning.policy.value
    return out


def _resolve_run(req: ClusterRequest, want_scenario: bool = False):
    """Shared preset/dataset/engine resolution for cluster and stream."""
    scenario = getattr(req, "scenario", None)
    if req.preset is not None:
        p = presets.load(req.preset)
        if p.kind == "multimodel":
            raise ValueError(
                f"preset {p.name!r} is a controller preset; use /multimodel")
        dataset_spec = req.dataset or p.dataset
        engine_spec = req.engine or p.engine
        scenario = scenario or p.scenario
    else:
        dataset_spec, engine_spec = req.dataset, req.engine
    if dataset_spec is None:
        raise ValueError("no dataset: pass a preset name or a dataset spec")
    if engine_spec is None:
        raise ValueError("no engine config: pass a preset name or an engine spec")
    carrier = presets.Preset(name=req.preset or "adhoc", kind="static",
                             description="", engine=engine_spec)
    cfg = carrier.engine_config(**req.overrides)
    data = presets.load_dataset(dataset_spec, search=tuple(req.data_dirs))
    if want_scenario:
        return data, cfg, dataset_spec, scenario
    return data, cfg, dataset_spec, None


def _run_payload(req, data: LabeledDataset, cfg: EngineConfig, result,
                 dataset_spec, scenario=None) -> dict:
    payload = {
        "n": data.n,
        "k": result.k_found,
        "converged": result.converged,
        "steps_used": result.steps_used,
        "elapsed_seconds": result.elapsed_seconds,
        "cell_ids": _jsonable(result.cell_ids),
        "labels": _jsonable(result.labels),
        "colony_sizes": {str(k): int(v)
                         for k, v in result.assignment.colony_sizes.items()},
        "outliers": result.assignment.outlier_count,
        "resolved": {
            "dataset": dataset_spec,
            "engine": _config_dict(cfg),
        },
        "colony_count_series": [
            [snap["step"], snap["k"]] for snap in result.history
        ],
    }
    if scenario is not None:
        payload["resolved"]["scenario"] = scenario
    if req.include_history:
        payload["history"] = _jsonable(result.history)
    if data.labels is not None:
        score = matched_accuracy(result.assignment, data.labels)
        payload["score"] = dataclasses.asdict(score)
    return payload


def create_app() -> FastAPI:
    app = FastAPI(title="quorumclust", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/presets")
    def preset_index():
        out = []
        for name in presets.available():
            p = presets.load(name)
            out.append({
                "name": p.name, "kind": p.kind, "tuned": p.tuned,
                "description": p.description,
                "reference_accuracy": p.reference_accuracy,
            })
        return {"presets": out, "catalogue": presets.describe_all()}

    @app.get("/presets/{name}")
    def preset_detail(name: str):
        try:
            p = presets.load(name)
        except KeyError as exc:
            raise HTTPException(status_code=404,
                                detail={"type": "KeyError",
                                        "message": str(exc)}) from None
        return dataclasses.asdict(p)

    @app.post("/synth")
    def synth_endpoint(req: SynthRequest):
        try:
            data = synth(req.kind, n=req.n, noise=req.noise, seed=req.seed,
                         scale=req.scale)
        except ValueError as exc:
            raise _bad_request(exc) from None
        return {
            "name": data.name,
            "coords": _jsonable(data.coords),
            "labels": _jsonable(data.labels),
        }

    @app.post("/cluster")
    def cluster(req: ClusterRequest):
        try:
            data, cfg, dataset_spec, _ = _resolve_run(req)
        except (KeyError, ValueError, TypeError, FileNotFoundError,
                DatasetFormatError) as exc:
            raise _bad_request(exc) from None
        try:
            result = run_static(data.cellset(), cfg)
        except NumericBlowupError as exc:
            raise _numeric_abort(exc) from None
        return _run_payload(req, data, cfg, result, dataset_spec)

    @app.post("/stream")
    def stream(req: StreamRequest):
        try:
            data, cfg, dataset_spec, scenario = _resolve_run(
                req, want_scenario=True)
            events = script_stream(data, scenario or {})
        except (KeyError, ValueError, TypeError, FileNotFoundError,
                DatasetFormatError, StreamEventError) as exc:
            raise _bad_request(exc) from None
        try:
            result = run_stream(data.cellset(), events, cfg)
        except StreamEventError as exc:
            raise _bad_request(exc) from None
        except NumericBlowupError as exc:
            raise _numeric_abort(exc) from None
        return _run_payload(req, data, cfg, result, dataset_spec,
                            scenario=scenario or {})

    @app.post("/score")
    def score(req: ScoreRequest):
        from .colonies import OUTLIER, Assignment
        pred = np.asarray(req.labels_pred)
        ids, sizes = np.unique(pred[pred != OUTLIER], return_counts=True)
        assignment = Assignment(
            labels=pred,
            colony_sizes={int(i): int(s) for i, s in zip(ids, sizes)})
        try:
            result = matched_accuracy(assignment, np.asarray(req.labels_true))
        except ValueError as exc:
            raise _bad_request(exc) from None
        return dataclasses.asdict(result)

    @app.post("/bench")
    def bench(req: BenchRequest):
        names = req.names
        if names is None:
            names = [n for n in presets.available()
                     if presets.load(n).kind == "static"]
        entries = []
        skipped = []
        for name in names:
            try:
                p = presets.load(name)
            except KeyError as exc:
                raise _bad_request(exc) from None
            if p.kind != "static":
                continue
            try:
                data = p.load_data(search=tuple(req.data_dirs))
            except (FileNotFoundError, DatasetFormatError, ValueError) as exc:
                skipped.append({"name": name, "reason": str(exc)})
                continue
            entries.append((data, p.engine_config(), p.reference_accuracy))
        report = bench_table(entries)
        return {
            "rows": [dataclasses.asdict(r) for r in report.rows],
            "skipped": skipped,
            "markdown": report.to_markdown(),
            "csv": report.to_csv(),
        }

    @app.post("/multimodel")
    def multimodel(req: MultiModelRequest):
        try:
            if req.preset is not None:
                p = presets.load(req.preset)
                cfg = p.multimodel_config(**req.overrides)
            elif req.config is not None:
                carrier = presets.Preset(name="adhoc", kind="multimodel",
                                         description="",
                                         multimodel=req.config)
                cfg = carrier.multimodel_config(**req.overrides)
            else:
                cfg = MultiModelConfig(**{
                    k: v for k, v in req.overrides.items() if v is not None})
        except (KeyError, ValueError, TypeError) as exc:
            raise _bad_request(exc) from None
        try:
            t0 = time.perf_counter()
            result = run_multimodel(cfg)
            elapsed = time.perf_counter() - t0
        except NumericBlowupError as exc:
            raise _numeric_abort(exc) from None
        return {
            "elapsed_seconds": elapsed,
            "times": _jsonable(result.times),
            "d_r": _jsonable(np.where(np.isnan(result.d_r), None,
                                      result.d_r).tolist()),
            "mode": _jsonable(result.mode),
            "identified": _jsonable(result.identified),
            "tracking_error": _jsonable(result.tracking_error),
            "estimates": _jsonable(result.estimates),
            "switch_times": _jsonable(result.switch_times),
            "feature_sigma": _jsonable(result.feature_sigma),
            "csv": result.to_csv(),
            "resolved": _jsonable(dataclasses.asdict(cfg)),
        }

    return app


app = create_app()
