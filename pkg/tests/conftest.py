"""Shared fixtures: deterministic hierarchies, backends, images.

Also prints one PASS/FAIL line per acceptance criterion at the end of a
run (see test_acceptance.py).
"""

from __future__ import annotations

import random

import numpy as np
import pytest

from convis.encoder import Image, MockHashBackend
from convis.lexdb import Hierarchy, Lexicon, Synset


def make_synset(sid, parents=(), definition=None, lemmas=None):
    return Synset(
        id=sid,
        lemmas=tuple(lemmas) if lemmas else (sid.split(".")[0],),
        definition=definition or f"definition of {sid}",
        hypernym_ids=tuple(parents),
    )


def build_hierarchy(spec: dict[str, tuple[str, ...]], definitions=None) -> Hierarchy:
    """spec maps synset id -> parent ids; definitions optionally override."""
    definitions = definitions or {}
    nodes = {
        sid: make_synset(sid, parents, definitions.get(sid)) for sid, parents in spec.items()
    }
    return Hierarchy(nodes)


def random_hierarchy(
    rng: random.Random,
    n_nodes: int,
    extra_parent_p: float = 0.25,
    duplicate_def_p: float = 0.15,
) -> Hierarchy:
    """Random connected DAG; node 0 is the root.

    Some definitions are duplicated on purpose so embedding ties occur.
    """
    ids = [f"node{k:03d}.n.01" for k in range(n_nodes)]
    definitions: list[str] = []
    nodes = {}
    for k, sid in enumerate(ids):
        parents: list[str] = []
        if k > 0:
            parents.append(ids[rng.randrange(k)])
            if k > 1 and rng.random() < extra_parent_p:
                other = ids[rng.randrange(k)]
                if other not in parents:
                    parents.append(other)
        if definitions and rng.random() < duplicate_def_p:
            definition = rng.choice(definitions)
        else:
            definition = f"meaning {rng.getrandbits(48):012x}"
            definitions.append(definition)
        nodes[sid] = make_synset(sid, parents, definition)
    return Hierarchy(nodes)


def random_image(rng: random.Random, width: int, height: int, channels: int = 1) -> Image:
    np_rng = np.random.default_rng(rng.getrandbits(63))
    return Image(np_rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))


@pytest.fixture
def small_hierarchy() -> Hierarchy:
    """Diamond-bearing DAG used across module tests.

    entity -> {animal, object}; animal -> {dog, cat}; object -> {toy};
    plushie has two parents (toy and animal).
    """
    return build_hierarchy(
        {
            "entity.n.01": (),
            "animal.n.01": ("entity.n.01",),
            "object.n.01": ("entity.n.01",),
            "dog.n.01": ("animal.n.01",),
            "cat.n.01": ("animal.n.01",),
            "toy.n.01": ("object.n.01",),
            "plushie.n.01": ("toy.n.01", "animal.n.01"),
        }
    )


@pytest.fixture
def mock_backend() -> MockHashBackend:
    return MockHashBackend(dimension=16)


OOD_LEXICON = [
    {"id": "entity.n.01", "lemmas": ["entity"], "definition": "def entity.n.01",
     "hypernyms": []},
    {"id": "animal.n.01", "lemmas": ["animal"], "definition": "def animal.n.01",
     "hypernyms": ["entity.n.01"]},
    {"id": "dog.n.01", "lemmas": ["dog"], "definition": "def dog.n.01",
     "hypernyms": ["animal.n.01"]},
    {"id": "furniture.n.01", "lemmas": ["furniture"], "definition": "def furniture.n.01",
     "hypernyms": ["entity.n.01"]},
    {"id": "chair.n.01", "lemmas": ["chair"], "definition": "def chair.n.01",
     "hypernyms": ["furniture.n.01"]},
]


def make_ood_fixture(tmp_path):
    """Separable two-class OOD environment, on disk and in memory.

    dog test images embed near the dog definition, chair images opposite,
    so every scoring method separates the sides perfectly.
    """
    import json as jsonlib

    from convis.encoder import FixtureTableBackend
    from convis.lexdb import full_hierarchy, load_lexicon
    from convis.simcore import build_definition_matrix

    lexicon_path = tmp_path / "lexicon.jsonl"
    lexicon_path.write_text(
        "\n".join(jsonlib.dumps(r) for r in OOD_LEXICON), encoding="utf-8"
    )
    text_vectors = {
        "def entity.n.01": [0.0, 0.0, 1.0],
        "def animal.n.01": [0.9, 0.1, 0.0],
        "def dog.n.01": [1.0, 0.0, 0.0],
        "def furniture.n.01": [-0.9, -0.1, 0.0],
        "def chair.n.01": [-1.0, 0.0, 0.0],
    }
    rng = random.Random(53)
    image_vectors = {}
    items = {"train": [], "test": []}
    for split, count_per_class in (("train", 2), ("test", 3)):
        for cls, direction in (("dog", 1.0), ("chair", -1.0)):
            if split == "train" and cls == "chair":
                continue
            for n in range(count_per_class):
                img = random_image(rng, 3, 3)
                path = tmp_path / f"{split}_{cls}_{n}.png"
                img.save(path)
                stored = Image.load(path)
                image_vectors[stored.content_hash()] = [direction, 0.05 * (n + 1), 0.0]
                items[split].append({"path": path.name, "class": cls})
    fixture_path = tmp_path / "fixture.json"
    fixture_path.write_text(
        jsonlib.dumps(
            {"dimension": 3, "text": text_vectors, "image_sha256": image_vectors}
        ),
        encoding="utf-8",
    )
    spec_path = tmp_path / "ood.json"
    spec_path.write_text(
        jsonlib.dumps(
            {
                "s_plus": "dog.n.01",
                "s_minus": "chair.n.01",
                "lambda_plus": ["dog"],
                "lambda_minus": ["chair"],
                "train": items["train"],
                "test": items["test"],
            }
        ),
        encoding="utf-8",
    )
    hier = full_hierarchy(load_lexicon(lexicon_path))
    backend = FixtureTableBackend.from_file(fixture_path)
    defmat = build_definition_matrix(hier, backend)
    return {
        "hier": hier,
        "backend": backend,
        "defmat": defmat,
        "lexicon_path": lexicon_path,
        "fixture_path": fixture_path,
        "spec_path": spec_path,
    }


ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    ACCEPTANCE_RESULTS[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"ACCEPTANCE {ACCEPTANCE_RESULTS[name]}: {name}")
