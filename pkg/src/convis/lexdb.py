"""Lexical concept hierarchy: loading, filtering, and graph queries.

The lexicon is a WordNet-style collection of synsets linked by "is a"
(hypernym) edges.  Real hypernym graphs are DAGs, not trees: a synset may
have several hypernyms, so all closure queries deduplicate.

File formats
------------
Lexicon: UTF-8, one JSON object per line::

    {"id": "car.n.01", "lemmas": ["car", "auto"], "definition": "...",
     "hypernyms": ["motor_vehicle.n.01"]}

Seed list: UTF-8, one synset id per line, ``#`` starts a comment.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import LexiconError, NoPathError, UnknownSynsetError

__all__ = [
    "Synset",
    "Lexicon",
    "Hierarchy",
    "load_lexicon",
    "load_seed_list",
    "filter_hierarchy",
    "full_hierarchy",
]


@dataclass(frozen=True)
class Synset:
    """One lexical concept: unique id, synonyms, textual definition, parents."""

    id: str
    lemmas: tuple[str, ...]
    definition: str
    hypernym_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.id:
            raise LexiconError("synset id must be non-empty")
        if not self.definition:
            raise LexiconError(f"synset {self.id!r} has an empty definition")


def _check_acyclic(parents: Mapping[str, Sequence[str]]) -> None:
    """Kahn's algorithm over child->parent edges; leftovers form a cycle."""
    out_degree = {sid: len(ps) for sid, ps in parents.items()}
    dependants: dict[str, list[str]] = {sid: [] for sid in parents}
    for sid, ps in parents.items():
        for p in ps:
            dependants[p].append(sid)
    ready = deque(sid for sid, deg in out_degree.items() if deg == 0)
    seen = 0
    while ready:
        sid = ready.popleft()
        seen += 1
        for child in dependants[sid]:
            out_degree[child] -= 1
            if out_degree[child] == 0:
                ready.append(child)
    if seen != len(parents):
        cyclic = sorted(sid for sid, deg in out_degree.items() if deg > 0)
        raise LexiconError(
            "hypernym graph contains a cycle involving: " + ", ".join(cyclic[:8])
        )


class Lexicon:
    """A validated set of synsets: ids unique, references resolve, acyclic."""

    def __init__(self, synsets: Iterable[Synset]):
        table: dict[str, Synset] = {}
        for syn in synsets:
            if syn.id in table:
                raise LexiconError(f"duplicate synset id: {syn.id!r}")
            table[syn.id] = syn
        for syn in table.values():
            for hid in syn.hypernym_ids:
                if hid not in table:
                    raise LexiconError(
                        f"synset {syn.id!r} references unknown hypernym {hid!r}"
                    )
        _check_acyclic({sid: syn.hypernym_ids for sid, syn in table.items()})
        self._table = table

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, synset_id: str) -> bool:
        return synset_id in self._table

    def __getitem__(self, synset_id: str) -> Synset:
        try:
            return self._table[synset_id]
        except KeyError:
            raise UnknownSynsetError(synset_id) from None

    def __iter__(self) -> Iterator[Synset]:
        return iter(self._table.values())

    def ids(self) -> list[str]:
        return sorted(self._table)


def load_lexicon(path: str | Path) -> Lexicon:
    """Parse a JSON-lines lexicon file and validate it.

    Raises LexiconError with the offending line number for malformed
    records, and for dangling references or cycles after parsing.
    """
    path = Path(path)
    synsets: list[Synset] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LexiconError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise LexiconError(f"{path}:{lineno}: record is not a JSON object")
            try:
                synset = Synset(
                    id=str(record["id"]),
                    lemmas=tuple(str(x) for x in record.get("lemmas", [])),
                    definition=str(record["definition"]),
                    hypernym_ids=tuple(str(x) for x in record.get("hypernyms", [])),
                )
            except KeyError as exc:
                raise LexiconError(
                    f"{path}:{lineno}: missing required field {exc.args[0]!r}"
                ) from exc
            except LexiconError as exc:
                raise LexiconError(f"{path}:{lineno}: {exc}") from exc
            synsets.append(synset)
    return Lexicon(synsets)


def load_seed_list(path: str | Path) -> list[str]:
    """Read a seed file: one synset id per line, '#' comments allowed."""
    seeds: list[str] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            entry = line.split("#", 1)[0].strip()
            if entry:
                seeds.append(entry)
    return seeds


class Hierarchy:
    """Immutable filtered "is a" DAG with closure and path queries.

    Construction is single-threaded; afterwards the structure is
    read-only and safe to share across worker threads.
    """

    def __init__(self, nodes: Mapping[str, Synset]):
        self.nodes: dict[str, Synset] = dict(nodes)
        parents: dict[str, tuple[str, ...]] = {}
        children: dict[str, list[str]] = {sid: [] for sid in self.nodes}
        for sid, syn in self.nodes.items():
            inside = tuple(sorted(h for h in syn.hypernym_ids if h in self.nodes))
            parents[sid] = inside
            for p in inside:
                children[p].append(sid)
        _check_acyclic(parents)
        self._parents = parents
        self._children = {sid: tuple(sorted(cs)) for sid, cs in children.items()}
        self.roots: tuple[str, ...] = tuple(
            sorted(sid for sid, ps in parents.items() if not ps)
        )
        self._ids: tuple[str, ...] = tuple(sorted(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, synset_id: str) -> bool:
        return synset_id in self.nodes

    def ids(self) -> tuple[str, ...]:
        """All synset ids, sorted."""
        return self._ids

    def synset(self, synset_id: str) -> Synset:
        try:
            return self.nodes[synset_id]
        except KeyError:
            raise UnknownSynsetError(synset_id) from None

    def parents(self, synset_id: str) -> tuple[str, ...]:
        self.synset(synset_id)
        return self._parents[synset_id]

    def children(self, synset_id: str) -> tuple[str, ...]:
        self.synset(synset_id)
        return self._children[synset_id]

    def descendants(self, synset_id: str) -> set[str]:
        """Reflexive transitive hyponym closure: every node whose "is a"
        chain reaches ``synset_id``, plus the node itself."""
        self.synset(synset_id)
        seen = {synset_id}
        stack = [synset_id]
        while stack:
            for child in self._children[stack.pop()]:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    def ancestors(self, synset_id: str) -> list[str]:
        """Transitive hypernyms, nearest-first.

        Breadth-first by hop distance; within one level ids are sorted, and
        a node reachable at several depths is listed at its nearest one.
        """
        self.synset(synset_id)
        ordered: list[str] = []
        seen = {synset_id}
        frontier = [synset_id]
        while frontier:
            level: set[str] = set()
            for sid in frontier:
                level.update(p for p in self._parents[sid] if p not in seen)
            frontier = sorted(level)
            ordered.extend(frontier)
            seen.update(level)
        return ordered

    def search(self, query: str, limit: int = 20) -> list[str]:
        """Case-insensitive substring search over ids and lemmas.

        Exact id/lemma matches come first; both groups are ordered
        lexicographically by id. At most ``limit`` results.
        """
        if limit <= 0:
            return []
        needle = query.lower()
        exact: list[str] = []
        partial: list[str] = []
        for sid in self._ids:
            syn = self.nodes[sid]
            haystacks = (sid.lower(), *(lm.lower() for lm in syn.lemmas))
            if needle in haystacks:
                exact.append(sid)
            elif any(needle in h for h in haystacks):
                partial.append(sid)
        return (exact + partial)[:limit]

    def semantic_distance(self, s1: str, s2: str) -> int:
        """Shortest path length treating "is a" edges as undirected."""
        self.synset(s1)
        self.synset(s2)
        if s1 == s2:
            return 0
        dist = {s1: 0}
        queue = deque([s1])
        while queue:
            sid = queue.popleft()
            for nxt in self._parents[sid] + self._children[sid]:
                if nxt not in dist:
                    dist[nxt] = dist[sid] + 1
                    if nxt == s2:
                        return dist[nxt]
                    queue.append(nxt)
        raise NoPathError(f"no undirected path between {s1!r} and {s2!r}")

    def content_digest(self) -> str:
        """SHA-256 hex over the canonical node content (id, lemmas,
        definition, hypernyms), order-independent."""
        h = hashlib.sha256()
        for sid in self._ids:
            syn = self.nodes[sid]
            h.update(
                json.dumps(
                    [syn.id, list(syn.lemmas), syn.definition, sorted(syn.hypernym_ids)],
                    ensure_ascii=False,
                    separators=(",", ":"),
                ).encode("utf-8")
            )
            h.update(b"\n")
        return h.hexdigest()


def filter_hierarchy(lexicon: Lexicon, seed_ids: Sequence[str]) -> Hierarchy:
    """Restrict the lexicon to the seeds plus all their "is a" ancestors.

    The result is closed under hypernym edges: every kept node is an
    ancestor (inclusive) of at least one seed.
    """
    keep: set[str] = set()
    stack: list[str] = []
    for sid in seed_ids:
        if sid not in lexicon:
            raise UnknownSynsetError(sid)
        if sid not in keep:
            keep.add(sid)
            stack.append(sid)
    while stack:
        syn = lexicon[stack.pop()]
        for hid in syn.hypernym_ids:
            if hid not in keep:
                keep.add(hid)
                stack.append(hid)
    return Hierarchy({sid: lexicon[sid] for sid in keep})


def full_hierarchy(lexicon: Lexicon) -> Hierarchy:
    """Hierarchy over every synset in the lexicon."""
    return Hierarchy({syn.id: syn for syn in lexicon})
