"""FastAPI application exposing tracking, evaluation, and training as jobs.

Every job endpoint writes a manifest (resolved config + request + seed) before
its results so any run can be reproduced from the output directory alone.
"""

from __future__ import annotations

import datetime
import json
import os
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import TrackerConfig, apply_overrides, load_config
from ..decoder import (
    SampleSet,
    TrainConfig,
    generate_synthetic_samples,
    load_samples,
    maxres_rms,
    save_decoder,
    save_samples,
    train_decoder,
)
from ..errors import LayoutError, MrcfError
from ..evaluation import (
    list_sequence_dirs,
    load_sequence,
    run_ope,
    write_boxes_csv,
    write_ope_csvs,
)
from ..features import read_image
from ..tracker import TrackState, init_tracker, record_samples, run_sequence, track_step
from . import schemas as sc

_IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")


def resolve_config(payload: sc.ConfigPayload) -> TrackerConfig:
    cfg = TrackerConfig()
    if payload.config_path:
        cfg = load_config(payload.config_path, base=cfg)
    if payload.overrides:
        cfg = apply_overrides(cfg, payload.overrides)
    return cfg.validate()


def write_manifest(path: str, command: str, request, config: TrackerConfig | None,
                   seed: int, extra: dict | None = None) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    data = {
        "command": command,
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": seed,
        "request": request.model_dump(),
    }
    if config is not None:
        data["config"] = config.to_dict()
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _list_frames(seq_dir: str) -> list[str]:
    img_dir = os.path.join(seq_dir, "img")
    root = img_dir if os.path.isdir(img_dir) else seq_dir
    frames = sorted(
        os.path.join(root, name) for name in os.listdir(root)
        if name.lower().endswith(_IMAGE_EXTS)
    )
    if not frames:
        raise LayoutError(f"no image frames under {root}")
    return frames


class SessionStore:
    """In-memory registry of live tracker sessions (single writer per session)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, TrackState] = {}

    def create(self, state: TrackState) -> str:
        sid = uuid.uuid4().hex
        with self._lock:
            self._sessions[sid] = state
        return sid

    def get(self, sid: str) -> TrackState:
        with self._lock:
            state = self._sessions.get(sid)
        if state is None:
            raise HTTPException(status_code=404, detail=f"no session {sid}")
        return state

    def drop(self, sid: str) -> None:
        with self._lock:
            if self._sessions.pop(sid, None) is None:
                raise HTTPException(status_code=404, detail=f"no session {sid}")


def create_app() -> FastAPI:
    app = FastAPI(title="mrcf tracking service", version=__version__)
    store = SessionStore()

    @app.exception_handler(MrcfError)
    def _domain_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    def _missing_file(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": "FileNotFoundError", "detail": str(exc)})

    @app.exception_handler(ValueError)
    def _value_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/track", response_model=sc.TrackResponse)
    def track(req: sc.TrackRequest):
        cfg = resolve_config(req.config)
        frames = _list_frames(req.sequence_dir)
        init_box = req.init_box
        if init_box is None:
            gt_path = os.path.join(req.sequence_dir, "groundtruth_rect.txt")
            if os.path.isfile(gt_path):
                init_box = list(load_sequence(req.sequence_dir).boxes[0])
        if init_box is None:
            raise HTTPException(status_code=400,
                                detail="init_box required: sequence has no annotations")

        manifest = boxes_csv = None
        if req.out_dir:
            manifest = write_manifest(os.path.join(req.out_dir, "manifest.json"),
                                      "track", req, cfg, req.seed)
        boxes, state = run_sequence(frames, tuple(init_box), cfg)
        if req.out_dir:
            boxes_csv = os.path.join(req.out_dir, "boxes.csv")
            write_boxes_csv(boxes_csv, boxes)
        return sc.TrackResponse(
            status="tracking_lost" if state.lost else "ok",
            frames=len(frames),
            boxes=[list(b) for b in boxes],
            boxes_csv=boxes_csv, manifest=manifest,
        )

    @app.post("/eval", response_model=sc.EvalResponse)
    def evaluate(req: sc.EvalRequest):
        cfg = resolve_config(req.config)
        manifest = write_manifest(os.path.join(req.out_dir, "manifest.json"),
                                  "eval", req, cfg, req.seed)
        loaded, failed = [], []
        for seq_dir in list_sequence_dirs(req.dataset_dir):
            try:
                loaded.append(load_sequence(seq_dir))
            except MrcfError as exc:
                failed.append(sc.SequenceSummary(
                    name=os.path.basename(os.path.normpath(seq_dir)),
                    status="error", frames=0, message=str(exc),
                ))
        result = run_ope(loaded, cfg, jobs=max(1, req.jobs))
        csv_paths = write_ope_csvs(result, req.out_dir)

        timing_path = os.path.join(req.out_dir, "timing.json")
        total = sum(r.seconds for r in result.sequences)
        frames = sum(r.frames for r in result.sequences)
        with open(timing_path, "w", encoding="utf-8") as fh:
            json.dump({
                "sequences": {r.name: round(r.seconds, 4) for r in result.sequences},
                "total_seconds": round(total, 4),
                "fps": round(frames / total, 2) if total > 0 else None,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")

        summaries = [
            sc.SequenceSummary(
                name=r.name, status=r.status, frames=r.frames,
                p20=None if np.isnan(r.p20) else r.p20,
                auc=None if np.isnan(r.auc) else r.auc,
                message=r.message,
            )
            for r in result.sequences
        ] + failed
        return sc.EvalResponse(
            status="ok", sequences=summaries,
            p20=None if result.precision is None else result.p20,
            auc=None if result.success is None else result.auc,
            csv_paths=csv_paths, timing=timing_path, manifest=manifest,
        )

    @app.post("/train-decoder", response_model=sc.TrainDecoderResponse)
    def train(req: sc.TrainDecoderRequest):
        if req.samples_path:
            samples = load_samples(req.samples_path)
        elif req.synthetic:
            samples = generate_synthetic_samples(req.synthetic, k_layers=req.layers,
                                                 seed=req.seed)
        else:
            raise HTTPException(status_code=400,
                                detail="provide samples_path or synthetic count")
        overrides = {k: v for k, v in req.train.model_dump().items() if v is not None}
        tc = TrainConfig(seed=req.seed, **overrides)
        manifest = write_manifest(req.out_path + ".manifest.json", "train-decoder",
                                  req, None, req.seed,
                                  extra={"train_config": tc.__dict__})
        result = train_decoder(samples, tc)
        save_decoder(result.net, req.out_path)
        val = samples.subset(result.val_indices)
        return sc.TrainDecoderResponse(
            weights_path=req.out_path, samples=len(samples),
            epochs_run=result.epochs_run,
            best_val_rms=result.best_val_rms,
            final_train_rms=result.final_train_rms,
            maxres_val_rms=maxres_rms(val),
            manifest=manifest,
        )

    @app.post("/record-samples", response_model=sc.RecordSamplesResponse)
    def record(req: sc.RecordSamplesRequest):
        cfg = resolve_config(req.config)
        if req.sequence_dir:
            seq_dirs = [req.sequence_dir]
        elif req.dataset_dir:
            seq_dirs = list_sequence_dirs(req.dataset_dir)
        else:
            raise HTTPException(status_code=400,
                                detail="provide sequence_dir or dataset_dir")
        manifest = write_manifest(req.out_path + ".manifest.json", "record-samples",
                                  req, cfg, req.seed)
        stacks, targets = [], []
        for seq_dir in seq_dirs:
            seq = load_sequence(seq_dir)
            s, t = record_samples(seq.frame_paths, seq.boxes, cfg)
            stacks.extend(s)
            targets.extend(t)
        if not stacks:
            raise HTTPException(status_code=400, detail="no samples recorded")
        samples = SampleSet(np.stack(stacks), np.asarray(targets))
        save_samples(samples, req.out_path)
        return sc.RecordSamplesResponse(out_path=req.out_path,
                                        samples_written=len(samples),
                                        manifest=manifest)

    @app.post("/sessions", response_model=sc.SessionStateResponse)
    def create_session(req: sc.SessionCreateRequest):
        cfg = resolve_config(req.config)
        frame = read_image(req.frame_path)
        state = init_tracker(frame, tuple(req.init_box), cfg)
        sid = store.create(state)
        return sc.SessionStateResponse(session_id=sid, frame_index=state.frame_index,
                                       status="ok", bbox=list(state.bbox))

    @app.post("/sessions/{sid}/frames", response_model=sc.SessionStateResponse)
    def step_session(sid: str, req: sc.SessionStepRequest):
        state = store.get(sid)
        frame = read_image(req.frame_path) if req.frame_path else None
        bbox = track_step(state, frame)
        return sc.SessionStateResponse(
            session_id=sid, frame_index=state.frame_index,
            status="tracking_lost" if state.lost else "ok", bbox=list(bbox),
        )

    @app.get("/sessions/{sid}", response_model=sc.SessionStateResponse)
    def get_session(sid: str):
        state = store.get(sid)
        return sc.SessionStateResponse(
            session_id=sid, frame_index=state.frame_index,
            status="tracking_lost" if state.lost else "ok", bbox=list(state.bbox),
        )

    @app.delete("/sessions/{sid}")
    def drop_session(sid: str):
        store.drop(sid)
        return {"deleted": sid}

    return app


app = create_app()
