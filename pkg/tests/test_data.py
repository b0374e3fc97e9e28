"""Integrity checks for the data files installed with the package."""

from pathlib import Path

import rxnseq
from rxnseq.pipeline import ingest_file
from rxnseq.templates import (
    default_substrate_filter,
    enumerate_substrates,
    load_templates_file,
)

DATA = Path(rxnseq.__file__).parent / "data"


def test_templates_file_loads_with_unique_names():
    templates = load_templates_file(DATA / "templates.txt")
    names = [t.name for t in templates]
    assert len(names) == len(set(names))
    assert "hydrochlorination" in names
    assert len(templates) == 18


def test_substrates_all_pass_the_default_filter():
    lines = (DATA / "substrates.smi").read_text().splitlines()
    raw = [line for line in lines if line.strip() and not line.startswith("#")]
    graphs, skipped = enumerate_substrates(raw, default_substrate_filter())
    assert skipped == []
    assert len(graphs) >= len(raw)  # halogen expansion never shrinks the set


def test_corpus_lines_are_unique_and_ingestible():
    lines = [
        line.strip()
        for line in (DATA / "corpus_mixed_1k.rsmi").read_text().splitlines()
        if line.strip()
    ]
    assert len(lines) == 1000
    assert len(set(lines)) == 1000
    records, report = ingest_file(DATA / "corpus_mixed_1k.rsmi")
    assert report.accepted == 1000
    assert report.total == 1000
    assert len(records) == 1000
