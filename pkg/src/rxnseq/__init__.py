"""Reaction product prediction toolkit.

Submodules:

- :mod:`rxnseq.smiles` -- SMILES lexing, validation, atom-map stripping
- :mod:`rxnseq.molgraph` -- molecular graphs, canonical SMILES, fingerprints
- :mod:`rxnseq.templates` -- reaction templates and dataset generation
- :mod:`rxnseq.pipeline` -- filtering, normalization, vocabularies, batching
- :mod:`rxnseq.model` -- GRU encoder-decoder with additive attention
- :mod:`rxnseq.evaluation` -- prediction scoring, reports, CSV exports
- :mod:`rxnseq.cli` -- the ``rxnseq`` command line tool
"""

__version__ = "0.1.0"
