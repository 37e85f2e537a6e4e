"""Run manifests and the SQLite registry that indexes them."""

import datetime
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

from pydantic import Field as PydanticField
from sqlalchemy.engine import Engine
from sqlmodel import Field, Session, SQLModel, create_engine

from .models import FrozenModel
from .query import q_to_select

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def tool_version() -> str:
    try:
        return version("clicktree")
    except PackageNotFoundError:
        return "0.0.0"


def utcnow() -> datetime.datetime:
    if sys.version_info >= (3, 11):
        return datetime.datetime.now(datetime.UTC)

    return datetime.datetime.utcnow()


class RunManifest(FrozenModel):
    """Everything needed to repeat a command: its resolved config, options and files."""

    command: str
    config: dict[str, Any] = PydanticField(default_factory=dict)
    options: dict[str, Any] = PydanticField(default_factory=dict)
    seed: int | None = None
    version: str = PydanticField(default_factory=tool_version)
    inputs: dict[str, str] = PydanticField(default_factory=dict)
    outputs: dict[str, str] = PydanticField(default_factory=dict)
    duration_s: float = 0.0
    created_at: datetime.datetime = PydanticField(default_factory=utcnow)
    classification: str | None = None


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def write_manifest(manifest: RunManifest, output: str | Path) -> Path:
    path = manifest_path(output)
    path.write_text(manifest.model_dump_json(indent=2) + "\n")
    return path


def read_manifest(path: str | Path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text())


class RunRecord(SQLModel, table=True):  # type: ignore
    __tablename__ = "runs"  # type: ignore

    id: int | None = Field(default=None, primary_key=True)
    command: str = Field(index=True)
    created_at: datetime.datetime = Field(default_factory=utcnow)
    version: str
    seed: int | None = None
    m: int | None = None
    eta: float | None = None
    lam: float | None = None
    noise_rate_hz: float | None = None
    channels: int | None = None
    n_pulses: int | None = None
    classification: str | None = None
    duration_s: float = 0.0
    output: str | None = None
    manifest: str

    @classmethod
    def from_manifest(cls, manifest: RunManifest) -> "RunRecord":
        config = manifest.config
        return cls(
            command=manifest.command,
            created_at=manifest.created_at,
            version=manifest.version,
            seed=manifest.seed,
            m=config.get("m"),
            eta=config.get("eta"),
            lam=config.get("lam"),
            noise_rate_hz=config.get("noise_rate_hz"),
            channels=config.get("channels"),
            n_pulses=config.get("n_pulses"),
            classification=manifest.classification,
            duration_s=manifest.duration_s,
            output=next(iter(manifest.outputs.values()), None),
            manifest=manifest.model_dump_json(),
        )

    def to_manifest(self) -> RunManifest:
        return RunManifest.model_validate(json.loads(self.manifest))


DEFAULT_FIELDS = ("command", "classification", "output")


def open_registry(path: str | Path) -> Engine:
    engine = create_engine(f"sqlite:///{path}")
    SQLModel.metadata.create_all(engine)
    return engine


def record_run(engine: Engine, manifest: RunManifest) -> RunRecord:
    record = RunRecord.from_manifest(manifest)
    with Session(engine) as session:
        session.add(record)
        session.commit()
        session.refresh(record)

    logger.info("registered %s run #%s", record.command, record.id)
    return record


def query_runs(engine: Engine, q: str = "") -> list[RunRecord]:
    statement = q_to_select(q, RunRecord, default_fields=DEFAULT_FIELDS).order_by(RunRecord.id)  # type: ignore
    with Session(engine) as session:
        return list(session.exec(statement).all())
