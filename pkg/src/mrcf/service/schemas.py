"""Request/response models for the tracking service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ConfigPayload(BaseModel):
    """Tracker configuration: optional file plus key=value overrides.

    Resolution order: built-in defaults, then ``config_path``, then
    ``overrides`` (same keys and value syntax as the config file).
    """

    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class TrackRequest(BaseModel):
    sequence_dir: str
    init_box: list[float] | None = None     # x, y, w, h; default: first annotation
    out_dir: str | None = None
    seed: int = 0
    config: ConfigPayload = Field(default_factory=ConfigPayload)


class TrackResponse(BaseModel):
    status: str                              # "ok" | "tracking_lost"
    frames: int
    boxes: list[list[float]]
    boxes_csv: str | None = None
    manifest: str | None = None


class SequenceSummary(BaseModel):
    name: str
    status: str
    frames: int
    p20: float | None = None
    auc: float | None = None
    message: str = ""


class EvalRequest(BaseModel):
    dataset_dir: str
    out_dir: str
    seed: int = 0
    jobs: int = 1
    config: ConfigPayload = Field(default_factory=ConfigPayload)


class EvalResponse(BaseModel):
    status: str
    sequences: list[SequenceSummary]
    p20: float | None = None
    auc: float | None = None
    csv_paths: dict[str, str]
    timing: str
    manifest: str


class TrainOverrides(BaseModel):
    learning_rate: float | None = None
    momentum: float | None = None
    batch_size: int | None = None
    max_epochs: int | None = None
    patience: int | None = None
    min_delta: float | None = None
    val_fraction: float | None = None


class TrainDecoderRequest(BaseModel):
    out_path: str
    samples_path: str | None = None
    synthetic: int | None = None            # generate this many samples instead
    layers: int = 4                         # stack depth for synthetic data
    seed: int = 0
    train: TrainOverrides = Field(default_factory=TrainOverrides)


class TrainDecoderResponse(BaseModel):
    weights_path: str
    samples: int
    epochs_run: int
    best_val_rms: float
    final_train_rms: float
    maxres_val_rms: float
    manifest: str | None = None


class RecordSamplesRequest(BaseModel):
    out_path: str
    sequence_dir: str | None = None
    dataset_dir: str | None = None           # record every sequence underneath
    seed: int = 0
    config: ConfigPayload = Field(default_factory=ConfigPayload)


class RecordSamplesResponse(BaseModel):
    out_path: str
    samples_written: int
    manifest: str | None = None


class SessionCreateRequest(BaseModel):
    frame_path: str
    init_box: list[float]
    seed: int = 0
    config: ConfigPayload = Field(default_factory=ConfigPayload)


class SessionStepRequest(BaseModel):
    frame_path: str | None = None            # None allowed with file-based features


class SessionStateResponse(BaseModel):
    session_id: str
    frame_index: int
    status: str                              # "ok" | "tracking_lost"
    bbox: list[float]


class HealthResponse(BaseModel):
    status: str
    version: str
