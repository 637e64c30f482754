import json
from pathlib import Path

import pytest

from d4c.cli import main

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"
SCHEMAS = REPO / "schemas"


def build_pipeline(artifacts: Path) -> None:
    """Run every pipeline stage against the shipped fixtures."""
    steps = [
        ["ingest", "--input", str(FIXTURES / "corpus")],
        ["annotate", "--atc", str(FIXTURES / "gazetteers" / "atc.csv"),
         "--mesh", str(FIXTURES / "gazetteers" / "mesh.csv")],
        ["topics-train"],
        ["drugs-cluster"],
        ["diseases-train"],
        ["kg-export"],
        ["kg-build", "--mapping", str(FIXTURES / "mapping.yml")],
    ]
    for step in steps:
        code = main(["--artifacts", str(artifacts)] + step)
        assert code == 0, f"stage {step[0]} exited {code}"


@pytest.fixture(scope="session")
def built_artifacts(tmp_path_factory) -> Path:
    artifacts = tmp_path_factory.mktemp("artifacts")
    build_pipeline(artifacts)
    return artifacts


@pytest.fixture(scope="session")
def schemas() -> dict[str, dict]:
    return {path.stem: json.loads(path.read_text(encoding="utf-8"))
            for path in SCHEMAS.glob("*.json")}
