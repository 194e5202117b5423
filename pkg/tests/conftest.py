from __future__ import annotations

import pathlib

import pytest

from ctrd.parser import parse_program
from ctrd.runtime_cloud import initial_config
from ctrd.typecheck import check_program

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "corpus"


def corpus_files(group: str) -> list[pathlib.Path]:
    return sorted((CORPUS / group).glob("*.ctrd"))


def load(path) -> str:
    return pathlib.Path(path).read_text(encoding="utf-8")


def checked_config(src: str, servers: int | None = None):
    """Parse, typecheck, and build the initial configuration."""
    prog = parse_program(src)
    checked = check_program(prog)
    return prog, checked, initial_config(prog, checked.id_types, servers)


@pytest.fixture
def corpus():
    return CORPUS
