"""Lexer, validation and atom-map stripping tests."""

import random

import pytest

from rxnseq.smiles import (
    BracketFields,
    MalformedReaction,
    Token,
    TokenKind,
    UnrecognizedCharacter,
    UnterminatedBracket,
    detokenize,
    split_reaction,
    strip_atom_maps,
    tokenize,
    validate,
    ValidationKind,
)


def texts(tokens):
    return [t.text for t in tokens]


def kinds(tokens):
    return [t.kind for t in tokens]


def test_tokenize_example_molecule():
    tokens = tokenize("CC=C(C)C.Cl")
    assert texts(tokens) == ["C", "C", "=", "C", "(", "C", ")", "C", ".", "Cl"]
    assert kinds(tokens) == [
        TokenKind.ORGANIC_ATOM,
        TokenKind.ORGANIC_ATOM,
        TokenKind.BOND,
        TokenKind.ORGANIC_ATOM,
        TokenKind.BRANCH_OPEN,
        TokenKind.ORGANIC_ATOM,
        TokenKind.BRANCH_CLOSE,
        TokenKind.ORGANIC_ATOM,
        TokenKind.DOT,
        TokenKind.ORGANIC_ATOM,
    ]


def test_tokenize_reaction_separators():
    tokens = tokenize("CC=C(C)C.Cl>>")
    assert texts(tokens)[-2:] == [">", ">"]
    assert kinds(tokens)[-2:] == [TokenKind.SEPARATOR, TokenKind.SEPARATOR]


@pytest.mark.parametrize(
    "text",
    [
        "CC=C(C)C.Cl",
        "c1ccccc1",
        "C/C=C\\C",
        "[CH3:1][CH2:2]O",
        "O=[N+]([O-])c1ccccc1",
        "C%12CCCCC%12",
        "[13CH4]",
        "F[C@@H](Cl)Br",
        "[nH]1cccc1",
        "CC(=O)O.OCC>O=S(=O)(O)O>CC(=O)OCC",
        "[Na+].[Cl-]",
        "C1=CC2=CC=CC=C2C=C1",
    ],
)
def test_round_trip(text):
    assert detokenize(tokenize(text)) == text


def test_bracket_fields():
    (tok,) = tokenize("[13C@@H2+2:45]")
    assert tok.bracket == BracketFields(
        element="C", isotope=13, chirality="@@", hcount=2, charge=2, atom_map=45
    )
    (tok,) = tokenize("[O-]")
    assert tok.bracket.charge == -1
    assert tok.bracket.hcount == 0
    (tok,) = tokenize("[nH]")
    assert tok.bracket.aromatic and tok.bracket.hcount == 1


def test_two_letter_greedy():
    assert texts(tokenize("ClBr")) == ["Cl", "Br"]
    # 'Sc' outside brackets is sulfur then aromatic carbon
    assert texts(tokenize("Sc1ccccc1")) == ["S", "c", "1", "c", "c", "c", "c", "c", "1"]


def test_percent_ring_closure():
    tokens = tokenize("C%10CC%10")
    assert tokens[1].ring_number() == 10
    with pytest.raises(UnrecognizedCharacter):
        tokenize("C%1C")


def test_unrecognized_and_unterminated():
    with pytest.raises(UnrecognizedCharacter) as err:
        tokenize("CCX")
    assert err.value.position == 2
    with pytest.raises(UnterminatedBracket):
        tokenize("C[CH3")
    with pytest.raises(UnrecognizedCharacter):
        tokenize("C[Cqq]C")
    with pytest.raises(UnrecognizedCharacter):
        tokenize("*")  # wildcard atoms only inside brackets


def test_empty_input_is_empty_part():
    assert tokenize("") == []
    assert detokenize([]) == ""


def test_split_reaction():
    parts = split_reaction("CC=C(C)C.Cl>>CCC(C)(C)Cl")
    assert parts.reactants == "CC=C(C)C.Cl"
    assert parts.reagents == ""
    assert parts.products == "CCC(C)(C)Cl"
    assert parts.join() == "CC=C(C)C.Cl>>CCC(C)(C)Cl"
    with pytest.raises(MalformedReaction):
        split_reaction("CC>O")
    with pytest.raises(MalformedReaction):
        split_reaction("C>C>C>C")


@pytest.mark.parametrize(
    "text",
    ["CCO", "c1ccccc1", "CC(C)(C)Br", "C/C=C/C", "C1CC1.C", "[NH4+]", "C=1CCCCC=1"],
)
def test_validate_accepts(text):
    assert validate(tokenize(text)).ok


@pytest.mark.parametrize(
    "text,kind",
    [
        ("C1CC", ValidationKind.UNPAIRED_RING_CLOSURE),
        ("C(C", ValidationKind.UNCLOSED_BRANCH),
        ("CC)C", ValidationKind.UNMATCHED_BRANCH_CLOSE),
        ("C()C", ValidationKind.EMPTY_BRANCH),
        ("(C)C", ValidationKind.MISPLACED_BRANCH),
        ("C=", ValidationKind.MISPLACED_BOND),
        ("=CC", ValidationKind.MISPLACED_BOND),
        ("C(=)C", ValidationKind.MISPLACED_BOND),
        ("C==C", ValidationKind.MISPLACED_BOND),
        (".CC", ValidationKind.MISPLACED_DOT),
        ("CC.", ValidationKind.MISPLACED_DOT),
        ("C..C", ValidationKind.MISPLACED_DOT),
        ("C11", ValidationKind.RING_SELF_BOND),
        ("C12CC12", ValidationKind.DUPLICATE_RING_BOND),
        ("C=1CCCCC#1", ValidationKind.CONFLICTING_RING_BOND),
        ("1CC", ValidationKind.MISPLACED_RING_CLOSURE),
        ("C>C", ValidationKind.UNEXPECTED_SEPARATOR),
    ],
)
def test_validate_rejects(text, kind):
    result = validate(tokenize(text))
    assert not result.ok
    assert kind in {f.kind for f in result.failures}


def test_strip_atom_maps_collapses_redundant_brackets():
    assert detokenize(strip_atom_maps(tokenize("[CH3:1][CH2:2]"))) == "C[CH2]"


def test_strip_atom_maps_keeps_charged_brackets():
    assert detokenize(strip_atom_maps(tokenize("[NH4+:5]"))) == "[NH4+]"


@pytest.mark.parametrize(
    "mapped,expected",
    [
        ("[CH3:1][OH:2]", "CO"),
        ("[cH:1]1[cH:2][cH:3][cH:4][cH:5][cH:6]1", "c1ccccc1"),
        ("[nH:1]1[cH:2][cH:3][cH:4][cH:5]1", "[nH]1cccc1"),
        ("[C:1](=[O:2])([OH:3])[CH3:4]", "C(=O)(O)C"),
        ("[S:1](=[O:2])(=[O:3])([OH:4])[OH:5]", "S(=O)(=O)(O)O"),
        ("[NH2:1]c1ccccc1", "Nc1ccccc1"),
        ("[CH2:1]=[CH:2][CH3:3]", "C=CC"),
        ("[OH2:1]", "O"),
        ("[H:1][H:2]", "[H][H]"),
        ("[13CH4:9]", "[13CH4]"),
        ("F[C@@H:3](Cl)Br", "F[C@@H](Cl)Br"),
    ],
)
def test_strip_atom_maps_cases(mapped, expected):
    assert detokenize(strip_atom_maps(tokenize(mapped))) == expected


def test_strip_atom_maps_sulfone_and_hypervalent():
    # bare S carries 6 bond orders here; bracket with 0 H collapses
    assert detokenize(strip_atom_maps(tokenize("C[S:1](=O)(=O)C"))) == "CS(=O)(=O)C"
    # explicit-H nitrogen at valence 3 with 3 bonds cannot collapse
    assert detokenize(strip_atom_maps(tokenize("C[NH2:1](C)C"))) == "C[NH2](C)C"


def test_strip_atom_maps_idempotent_random():
    corpus = [
        "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>[H+]>[CH3:1][C:2](=[O:3])[O:4][CH3:5]",
        "[CH2:1]=[CH2:2].[ClH:3]>>[CH3:1][CH2:2][Cl:3]",
        "c1ccccc1[N+](=O)[O-]>>c1ccccc1N",
    ]
    for line in corpus:
        once = strip_atom_maps(tokenize(line))
        twice = strip_atom_maps(once)
        assert detokenize(once) == detokenize(twice)
        assert ":" not in detokenize(once).replace(">", "")


def test_strip_preserves_reaction_shape():
    line = "[CH2:1]=[CH2:2].[ClH:3]>>[CH3:1][CH2:2][Cl:3]"
    stripped = detokenize(strip_atom_maps(tokenize(line)))
    assert stripped == "C=C.Cl>>CCCl"


def test_tokenize_never_merges_or_drops_characters():
    rng = random.Random(7)
    alphabet = ["C", "Cl", "Br", "O", "N", "(", ")", "=", "#", "1", ".", "c"]
    for _ in range(200):
        text = "C" + "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 30)))
        try:
            tokens = tokenize(text)
        except Exception:
            continue
        assert detokenize(tokens) == text
