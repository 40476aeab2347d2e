from __future__ import annotations

import pathlib

import pytest

from backchain.session import ArtifactTexts, load_artifact_files, parse_artifacts

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> pathlib.Path:
    return FIXTURES


@pytest.fixture(scope="session")
def zoey_paths() -> dict[str, str]:
    return {
        "kb": str(FIXTURES / "zoey.bkb"),
        "templates": str(FIXTURES / "zoey.btl"),
        "taxonomy": str(FIXTURES / "zoey.tax"),
        "similarity": str(FIXTURES / "zoey.tsv"),
        "canned": str(FIXTURES / "zoey_canned.bkb"),
    }


@pytest.fixture(scope="session")
def zoey_texts(zoey_paths) -> ArtifactTexts:
    texts, diags = load_artifact_files(
        zoey_paths["kb"],
        zoey_paths["templates"],
        zoey_paths["taxonomy"],
        zoey_paths["similarity"],
        zoey_paths["canned"],
    )
    assert texts is not None, diags.render()
    return texts


@pytest.fixture(scope="session")
def zoey_artifacts(zoey_texts):
    artifacts, diags = parse_artifacts(zoey_texts)
    assert artifacts is not None, diags.render()
    return artifacts


@pytest.fixture(scope="session")
def events_kb():
    texts, _ = load_artifact_files(str(FIXTURES / "events.bkb"))
    artifacts, diags = parse_artifacts(texts)
    assert artifacts is not None, diags.render()
    return artifacts.kb
