from pathlib import Path

import pytest
from sqlalchemy.engine import Engine
from sqlmodel import Session, SQLModel, create_engine

from clicktree.models import DetectorTree, EmitterEnsemble, NoiseModel
from clicktree.registry import RunManifest, RunRecord  # noqa: F401

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def golden_path() -> Path:
    return FIXTURES / "golden.txt"


@pytest.fixture
def pair_tree() -> DetectorTree:
    return DetectorTree.uniform(2, 0.4)


@pytest.fixture
def paper_tree() -> DetectorTree:
    return DetectorTree.uniform(4, 0.6)


@pytest.fixture
def cluster() -> EmitterEnsemble:
    return EmitterEnsemble(m=3, eta=0.5)


@pytest.fixture
def noise() -> NoiseModel:
    return NoiseModel(lam=0.1)


@pytest.fixture(scope="session")
def engine():
    return create_engine("sqlite://")


@pytest.fixture(scope="session")
def _setup_metadata(engine: Engine):
    SQLModel.metadata.create_all(engine)


@pytest.fixture(scope="session")
def session(engine: Engine, _setup_metadata):
    with Session(engine) as session:
        yield session


@pytest.fixture(autouse=True, scope="session")
def _setup_runs(session: Session):
    manifests = [
        RunManifest(
            command="simulate",
            config={"m": 1, "eta": 0.1, "lam": 0.0, "channels": 4, "n_pulses": 1000},
            seed=1,
            outputs={"counts": "single.json"},
        ),
        RunManifest(
            command="simulate",
            config={"m": 3, "eta": 0.1, "lam": 0.002, "channels": 4, "n_pulses": 1000},
            seed=7,
            outputs={"counts": "cluster.json"},
        ),
        RunManifest(
            command="analyze",
            seed=0,
            inputs={"input": "cluster.json"},
            outputs={"report": "cluster-report.json"},
            classification="nonclassical",
        ),
        RunManifest(command="oracle-check", seed=0, classification="pass"),
    ]

    for manifest in manifests:
        session.add(RunRecord.from_manifest(manifest))

    session.commit()
