"""Lexicon loading, hierarchy filtering, and graph query tests."""

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convis.errors import LexiconError, NoPathError, UnknownSynsetError
from convis.lexdb import (
    Hierarchy,
    Lexicon,
    Synset,
    filter_hierarchy,
    full_hierarchy,
    load_lexicon,
    load_seed_list,
)

from conftest import build_hierarchy, make_synset, random_hierarchy
from oracles import all_pairs_distance_ref, descendants_ref


def write_lexicon(tmp_path, records, name="lex.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(r) for r in records), encoding="utf-8")
    return path


def record(sid, hypernyms=(), definition=None, lemmas=None):
    return {
        "id": sid,
        "lemmas": list(lemmas) if lemmas else [sid.split(".")[0]],
        "definition": definition or f"definition of {sid}",
        "hypernyms": list(hypernyms),
    }


class TestLoadLexicon:
    def test_minimal_graph(self, tmp_path):
        path = write_lexicon(
            tmp_path,
            [record("a.n.01"), record("b.n.01", ["a.n.01"]), record("c.n.01", ["a.n.01"])],
        )
        lex = load_lexicon(path)
        assert len(lex) == 3
        hier = full_hierarchy(lex)
        assert hier.children("a.n.01") == ("b.n.01", "c.n.01")

    def test_dangling_reference_names_id(self, tmp_path):
        path = write_lexicon(
            tmp_path, [record("a.n.01"), record("b.n.01", ["ghost.n.99"])]
        )
        with pytest.raises(LexiconError, match="ghost.n.99"):
            load_lexicon(path)

    def test_mutual_hypernyms_are_a_cycle(self, tmp_path):
        path = write_lexicon(
            tmp_path, [record("a.n.01", ["b.n.01"]), record("b.n.01", ["a.n.01"])]
        )
        with pytest.raises(LexiconError, match="cycle"):
            load_lexicon(path)

    def test_longer_cycle_detected(self, tmp_path):
        path = write_lexicon(
            tmp_path,
            [
                record("a.n.01", ["c.n.01"]),
                record("b.n.01", ["a.n.01"]),
                record("c.n.01", ["b.n.01"]),
            ],
        )
        with pytest.raises(LexiconError, match="cycle"):
            load_lexicon(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps(record("a.n.01")) + "\n{not json}\n", encoding="utf-8"
        )
        with pytest.raises(LexiconError, match=":2:"):
            load_lexicon(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        path.write_text('{"id": "a.n.01", "lemmas": []}', encoding="utf-8")
        with pytest.raises(LexiconError, match=":1:.*definition"):
            load_lexicon(path)

    def test_empty_definition_rejected(self, tmp_path):
        path = write_lexicon(tmp_path, [record("a.n.01", definition=" ") | {"definition": ""}])
        with pytest.raises(LexiconError, match="definition"):
            load_lexicon(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_lexicon(tmp_path, [record("a.n.01"), record("a.n.01")])
        with pytest.raises(LexiconError, match="duplicate"):
            load_lexicon(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "blank.jsonl"
        path.write_text("\n" + json.dumps(record("a.n.01")) + "\n\n", encoding="utf-8")
        assert len(load_lexicon(path)) == 1


class TestSeedList:
    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "seeds.txt"
        path.write_text(
            "# header\ncar.n.01\n\nboat.n.01  # inline\n", encoding="utf-8"
        )
        assert load_seed_list(path) == ["car.n.01", "boat.n.01"]


class TestFilterHierarchy:
    @pytest.fixture
    def lexicon(self):
        return Lexicon(
            [
                make_synset("root.n.01"),
                make_synset("mid.n.01", ["root.n.01"]),
                make_synset("leaf1.n.01", ["mid.n.01"]),
                make_synset("leaf2.n.01", ["root.n.01"]),
            ]
        )

    def test_ancestor_closure(self, lexicon):
        hier = filter_hierarchy(lexicon, ["leaf1.n.01"])
        assert set(hier.ids()) == {"leaf1.n.01", "mid.n.01", "root.n.01"}
        assert len(hier) == 3

    def test_all_leaves_saturates(self, lexicon):
        hier = filter_hierarchy(lexicon, ["leaf1.n.01", "leaf2.n.01"])
        assert len(hier) == len(lexicon)

    def test_unknown_seed(self, lexicon):
        with pytest.raises(UnknownSynsetError, match="nope.n.01"):
            filter_hierarchy(lexicon, ["nope.n.01"])

    def test_closed_under_parents(self, lexicon):
        hier = filter_hierarchy(lexicon, ["leaf1.n.01"])
        for sid in hier.ids():
            for parent in hier.synset(sid).hypernym_ids:
                assert parent in hier


class TestDescendants:
    def test_leaf_is_singleton(self, small_hierarchy):
        assert small_hierarchy.descendants("dog.n.01") == {"dog.n.01"}

    def test_root_subtree(self):
        hier = build_hierarchy(
            {"root.n.01": (), "a.n.01": ("root.n.01",), "b.n.01": ("a.n.01",), "c.n.01": ("root.n.01",)}
        )
        assert hier.descendants("root.n.01") == {"root.n.01", "a.n.01", "b.n.01", "c.n.01"}

    def test_diamond_counted_once(self, small_hierarchy):
        # plushie reaches animal via two routes but appears once (it's a set)
        descendants = small_hierarchy.descendants("entity.n.01")
        assert descendants == set(small_hierarchy.ids())

    def test_unknown_id(self, small_hierarchy):
        with pytest.raises(UnknownSynsetError):
            small_hierarchy.descendants("missing.n.01")

    def test_matches_brute_force(self):
        rng = random.Random(7)
        for _ in range(20):
            hier = random_hierarchy(rng, rng.randint(1, 25))
            parent_map = {sid: hier.synset(sid).hypernym_ids for sid in hier.ids()}
            for sid in hier.ids():
                assert hier.descendants(sid) == descendants_ref(parent_map, sid)


class TestAncestors:
    def test_root_empty(self, small_hierarchy):
        assert small_hierarchy.ancestors("entity.n.01") == []

    def test_chain(self):
        hier = build_hierarchy(
            {"root.n.01": (), "mid.n.01": ("root.n.01",), "leaf.n.01": ("mid.n.01",)}
        )
        assert hier.ancestors("leaf.n.01") == ["mid.n.01", "root.n.01"]

    def test_diamond_lexicographic_level_order(self, small_hierarchy):
        # plushie's direct parents sorted first, then grandparents.
        assert small_hierarchy.ancestors("plushie.n.01") == [
            "animal.n.01",
            "toy.n.01",
            "entity.n.01",
            "object.n.01",
        ]


class TestSearch:
    @pytest.fixture
    def cars(self):
        return Hierarchy(
            {
                "car.n.01": make_synset("car.n.01", lemmas=["car", "auto"]),
                "railcar.n.01": make_synset("railcar.n.01", lemmas=["railcar"]),
                "boat.n.01": make_synset("boat.n.01", lemmas=["boat", "watercraft"]),
            }
        )

    def test_exact_match_first(self, cars):
        assert cars.search("car") == ["car.n.01", "railcar.n.01"]

    def test_no_match(self, cars):
        assert cars.search("zzz") == []

    def test_lemma_only_match(self, cars):
        assert cars.search("watercraft") == ["boat.n.01"]

    def test_case_insensitive(self, cars):
        assert cars.search("CAR")[0] == "car.n.01"

    def test_limit(self, cars):
        assert len(cars.search("a", limit=2)) == 2


class TestSemanticDistance:
    def test_self_is_zero(self, small_hierarchy):
        assert small_hierarchy.semantic_distance("dog.n.01", "dog.n.01") == 0

    def test_parent_child(self, small_hierarchy):
        assert small_hierarchy.semantic_distance("dog.n.01", "animal.n.01") == 1

    def test_siblings(self, small_hierarchy):
        assert small_hierarchy.semantic_distance("dog.n.01", "cat.n.01") == 2

    def test_unknown(self, small_hierarchy):
        with pytest.raises(UnknownSynsetError):
            small_hierarchy.semantic_distance("dog.n.01", "ghost.n.01")

    def test_disconnected(self):
        hier = build_hierarchy({"a.n.01": (), "b.n.01": ()})
        with pytest.raises(NoPathError):
            hier.semantic_distance("a.n.01", "b.n.01")


@st.composite
def dag_specs(draw):
    n = draw(st.integers(min_value=1, max_value=14))
    primary = draw(st.lists(st.integers(0, 10**6), min_size=n, max_size=n))
    extra = draw(st.lists(st.integers(0, 10**6), min_size=n, max_size=n))
    spec: dict[str, tuple[str, ...]] = {}
    ids = [f"s{k:02d}.n.01" for k in range(n)]
    for k, sid in enumerate(ids):
        parents: list[str] = []
        if k > 0:
            parents.append(ids[primary[k] % k])
            if extra[k] % 3 == 0:
                other = ids[extra[k] % k]
                if other not in parents:
                    parents.append(other)
        spec[sid] = tuple(parents)
    return spec


class TestHierarchyProperties:
    @settings(max_examples=60, deadline=None)
    @given(dag_specs())
    def test_descendants_reflexive_and_monotone(self, spec):
        hier = build_hierarchy(spec)
        closures = {sid: hier.descendants(sid) for sid in hier.ids()}
        for sid in hier.ids():
            assert sid in closures[sid]
        for s2 in hier.ids():
            for s1 in closures[s2]:
                assert closures[s1] <= closures[s2]

    @settings(max_examples=60, deadline=None)
    @given(dag_specs())
    def test_distance_symmetric_and_triangular(self, spec):
        hier = build_hierarchy(spec)
        parent_map = {sid: hier.synset(sid).hypernym_ids for sid in hier.ids()}
        ref = all_pairs_distance_ref(parent_map)
        ids = list(hier.ids())
        for a in ids:
            for b in ids:
                assert hier.semantic_distance(a, b) == ref[(a, b)]
                assert ref[(a, b)] == ref[(b, a)]
        for a in ids:
            for b in ids:
                for c in ids[:4]:
                    assert ref[(a, c)] <= ref[(a, b)] + ref[(b, c)]

    @settings(max_examples=40, deadline=None)
    @given(dag_specs(), st.data())
    def test_filter_closed_under_parents(self, spec, data):
        hier = build_hierarchy(spec)
        lexicon = Lexicon(hier.nodes.values())
        ids = list(hier.ids())
        seeds = data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=len(ids)))
        filtered = filter_hierarchy(lexicon, seeds)
        for sid in filtered.ids():
            for parent in filtered.synset(sid).hypernym_ids:
                assert parent in filtered
            # every kept node is an (inclusive) ancestor of some seed
            assert any(seed in filtered.descendants(sid) for seed in seeds)


class TestDigest:
    def test_stable_and_content_sensitive(self, small_hierarchy):
        again = build_hierarchy(
            {sid: small_hierarchy.synset(sid).hypernym_ids for sid in small_hierarchy.ids()}
        )
        assert small_hierarchy.content_digest() == again.content_digest()
        changed = build_hierarchy(
            {sid: small_hierarchy.synset(sid).hypernym_ids for sid in small_hierarchy.ids()},
            definitions={"dog.n.01": "another definition"},
        )
        assert small_hierarchy.content_digest() != changed.content_digest()
