"""Metadata parsing and domain knowledge graph construction.

The graph has four entity kinds (director, title, cast, genre) and six
co-occurrence relation kinds.  Every field value of a training record becomes
an entity identified by ``(kind, surface)``; every within-record pair of
entities whose kinds form a relation becomes a triple.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import IDKGError, ValidationError
from .io import atomic_write_bytes, atomic_write_text, read_manifest, require_file, write_manifest

SPLITS = ("train", "valid", "test")
KGT_MAGIC = b"KGT1"
_TRIPLE_DTYPE = np.dtype([("head", "<u4"), ("rel", "u1"), ("tail", "<u4")])


class EntityKind(str, Enum):
    DIRECTOR = "director"
    TITLE = "title"
    CAST = "cast"
    GENRE = "genre"

    @property
    def code(self) -> int:
        return _KIND_ORDER.index(self)


_KIND_ORDER = [EntityKind.DIRECTOR, EntityKind.TITLE, EntityKind.CAST, EntityKind.GENRE]
ENTITY_KINDS = tuple(_KIND_ORDER)


class RelationKind(IntEnum):
    D_T = 0
    C_T = 1
    G_T = 2
    D_C = 3
    D_G = 4
    C_G = 5

    @property
    def head_kind(self) -> EntityKind:
        return _ENDPOINTS[self][0]

    @property
    def tail_kind(self) -> EntityKind:
        return _ENDPOINTS[self][1]

    @property
    def label(self) -> str:
        return f"{self.head_kind.value[0]}-{self.tail_kind.value[0]}"


_ENDPOINTS = {
    RelationKind.D_T: (EntityKind.DIRECTOR, EntityKind.TITLE),
    RelationKind.C_T: (EntityKind.CAST, EntityKind.TITLE),
    RelationKind.G_T: (EntityKind.GENRE, EntityKind.TITLE),
    RelationKind.D_C: (EntityKind.DIRECTOR, EntityKind.CAST),
    RelationKind.D_G: (EntityKind.DIRECTOR, EntityKind.GENRE),
    RelationKind.C_G: (EntityKind.CAST, EntityKind.GENRE),
}
N_RELATIONS = len(RelationKind)


@dataclass(frozen=True)
class MetadataRecord:
    movie_id: str
    title: str
    directors: tuple[str, ...]
    casts: tuple[str, ...]
    genres: tuple[str, ...]
    split: str

    def to_json(self) -> dict:
        return {
            "id": self.movie_id,
            "title": self.title,
            "directors": list(self.directors),
            "casts": list(self.casts),
            "genres": list(self.genres),
            "split": self.split,
        }


def _dedup(values: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for v in values:
        v = v.strip()
        if v:
            seen.setdefault(v, None)
    return tuple(seen)


def _string_list(obj: dict, key: str, where: str) -> tuple[str, ...]:
    value = obj.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValidationError(f"{where}: '{key}' must be a list of strings")
    return _dedup(value)


def record_from_json(obj, where: str = "record") -> MetadataRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    movie_id = obj.get("id")
    if not isinstance(movie_id, str) or not movie_id.strip():
        raise ValidationError(f"{where}: missing or empty 'id'")
    movie_id = movie_id.strip()
    title = obj.get("title")
    if not isinstance(title, str) or not title.strip():
        raise ValidationError(f"{where}: record {movie_id!r} has an empty title")
    split = obj.get("split")
    if split not in SPLITS:
        raise ValidationError(f"{where}: record {movie_id!r} has invalid split {split!r}")
    rec = MetadataRecord(
        movie_id=movie_id,
        title=title.strip(),
        directors=_string_list(obj, "directors", where),
        casts=_string_list(obj, "casts", where),
        genres=_string_list(obj, "genres", where),
        split=split,
    )
    if split == "train" and not rec.genres:
        raise ValidationError(f"{where}: train record {movie_id!r} has no genres")
    return rec


def parse_metadata(stream: IO[bytes] | IO[str] | bytes | str | Iterable) -> list[MetadataRecord]:
    """Parse newline-delimited JSON metadata.

    Accepts a binary or text stream, raw bytes/str, or any iterable of lines.
    Blank lines are skipped; errors carry the 1-based line number.
    """
    if isinstance(stream, (bytes, str)):
        stream = io.BytesIO(stream.encode("utf-8") if isinstance(stream, str) else stream)
    records: list[MetadataRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ValidationError(f"line {lineno}: not valid UTF-8 ({exc})") from None
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        rec = record_from_json(obj, where=f"line {lineno}")
        if rec.movie_id in seen_ids:
            raise ValidationError(f"line {lineno}: duplicate movie id {rec.movie_id!r}")
        seen_ids.add(rec.movie_id)
        records.append(rec)
    return records


def read_metadata(path: str | os.PathLike) -> list[MetadataRecord]:
    with open(require_file(path), "rb") as fh:
        return parse_metadata(fh)


def dump_metadata(records: Iterable[MetadataRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


@dataclass
class DomainKG:
    entities: list[tuple[EntityKind, str]] = field(default_factory=list)
    triples: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self._index = {ent: i for i, ent in enumerate(self.entities)}
        if len(self._index) != len(self.entities):
            raise IDKGError("duplicate (kind, surface) entity in entity table")
        self.kind_codes = np.array([k.code for k, _ in self.entities], dtype=np.int64)
        self.degree = np.bincount(
            self.triples[:, [0, 2]].ravel(), minlength=len(self.entities)
        ).astype(np.int64)
        self._members = {
            kind: np.flatnonzero(self.kind_codes == kind.code) for kind in _KIND_ORDER
        }
        self._triple_set: set[tuple[int, int, int]] | None = None

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def lookup(self, kind: EntityKind, surface: str) -> int | None:
        return self._index.get((kind, surface.strip()))

    def kind_of(self, index: int) -> EntityKind:
        return self.entities[index][0]

    def members(self, kind: EntityKind) -> np.ndarray:
        return self._members[kind]

    @property
    def triple_set(self) -> set[tuple[int, int, int]]:
        if self._triple_set is None:
            self._triple_set = set(map(tuple, self.triples.tolist()))
        return self._triple_set

    def match_people(self, record: MetadataRecord) -> tuple[list[int], int, int]:
        """Indices of the record's directors then casts present in the graph."""
        found: list[int] = []
        n_d = n_c = 0
        for name in record.directors:
            j = self.lookup(EntityKind.DIRECTOR, name)
            if j is not None:
                found.append(j)
                n_d += 1
        for name in record.casts:
            j = self.lookup(EntityKind.CAST, name)
            if j is not None:
                found.append(j)
                n_c += 1
        return found, n_d, n_c

    def genre_indices(self, genres: Iterable[str]) -> list[int]:
        out = []
        for g in genres:
            j = self.lookup(EntityKind.GENRE, g)
            if j is None:
                raise IDKGError(f"genre {g!r} is not an entity of the graph")
            out.append(j)
        return out

    def relation_counts(self) -> dict[str, int]:
        counts = np.bincount(self.triples[:, 1], minlength=N_RELATIONS)
        return {RelationKind(r).label: int(counts[r]) for r in range(N_RELATIONS)}

    def summary(self) -> dict:
        per_kind = {kind.value: int(len(self._members[kind])) for kind in _KIND_ORDER}
        return {
            "entities": self.n_entities,
            "triples": self.n_triples,
            "entities_per_kind": per_kind,
            "triples_per_relation": self.relation_counts(),
            "empty": self.n_triples == 0,
        }


_PAIRS = [
    (RelationKind.D_T, "directors", "title"),
    (RelationKind.C_T, "casts", "title"),
    (RelationKind.G_T, "genres", "title"),
    (RelationKind.D_C, "directors", "casts"),
    (RelationKind.D_G, "directors", "genres"),
    (RelationKind.C_G, "casts", "genres"),
]


def build_kg(records: Iterable[MetadataRecord]) -> DomainKG:
    """Build the domain KG from the train-split records (other splits are ignored).

    Entity indices follow first-seen order over the input; triples are
    deduplicated corpus-wide and kept in first-emitted order.
    """
    index: dict[tuple[EntityKind, str], int] = {}
    entities: list[tuple[EntityKind, str]] = []

    def intern(kind: EntityKind, surface: str) -> int:
        key = (kind, surface)
        j = index.get(key)
        if j is None:
            j = index[key] = len(entities)
            entities.append(key)
        return j

    triples: dict[tuple[int, int, int], None] = {}
    for rec in records:
        if rec.split != "train":
            continue
        fields = {
            "directors": [intern(EntityKind.DIRECTOR, d) for d in rec.directors],
            "title": [intern(EntityKind.TITLE, rec.title)],
            "casts": [intern(EntityKind.CAST, c) for c in rec.casts],
            "genres": [intern(EntityKind.GENRE, g) for g in rec.genres],
        }
        for rel, head_field, tail_field in _PAIRS:
            for h in fields[head_field]:
                for t in fields[tail_field]:
                    triples.setdefault((h, int(rel), t), None)
    arr = np.array(list(triples), dtype=np.int64).reshape(-1, 3)
    return DomainKG(entities=entities, triples=arr)


@dataclass(frozen=True)
class CorpusStats:
    W: int
    mean_dc: float
    mean_V: float


def corpus_stats(records: Iterable[MetadataRecord], kg: DomainKG) -> CorpusStats:
    counts = []
    degree_sums = []
    for rec in records:
        if rec.split != "train":
            continue
        found, _, _ = kg.match_people(rec)
        counts.append(len(found))
        degree_sums.append(int(kg.degree[found].sum()) if found else 0)
    if not counts:
        raise IDKGError("corpus statistics need at least one train record")
    return CorpusStats(
        W=len(counts),
        mean_dc=float(np.mean(counts)),
        mean_V=float(np.mean(degree_sums)),
    )


# -- persistence -----------------------------------------------------------


def encode_triples(triples: np.ndarray) -> bytes:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    packed = np.empty(len(triples), dtype=_TRIPLE_DTYPE)
    packed["head"] = triples[:, 0]
    packed["rel"] = triples[:, 1]
    packed["tail"] = triples[:, 2]
    return KGT_MAGIC + struct.pack("<I", len(triples)) + packed.tobytes()


def decode_triples(data: bytes) -> np.ndarray:
    if data[:4] != KGT_MAGIC:
        raise IDKGError("not a triple file (bad magic)")
    (count,) = struct.unpack_from("<I", data, 4)
    expected = 8 + count * _TRIPLE_DTYPE.itemsize
    if len(data) != expected:
        raise IDKGError(f"triple file length {len(data)} != expected {expected}")
    packed = np.frombuffer(data, dtype=_TRIPLE_DTYPE, count=count, offset=8)
    return np.stack(
        [packed["head"].astype(np.int64), packed["rel"].astype(np.int64), packed["tail"].astype(np.int64)],
        axis=1,
    ).reshape(-1, 3)


def encode_entities(entities: list[tuple[EntityKind, str]]) -> str:
    return "".join(
        json.dumps({"index": i, "kind": kind.value, "surface": surface}, ensure_ascii=False) + "\n"
        for i, (kind, surface) in enumerate(entities)
    )


def decode_entities(text: str) -> list[tuple[EntityKind, str]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj["index"] != len(out):
            raise IDKGError(f"entity table line {lineno}: index {obj['index']} out of order")
        out.append((EntityKind(obj["kind"]), obj["surface"]))
    return out


def save_kg(kg: DomainKG, directory: str | os.PathLike, source: dict | None = None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write_text(directory / "entities.jsonl", encode_entities(kg.entities))
    atomic_write_bytes(directory / "triples.kgt", encode_triples(kg.triples))
    payload = {"kind": "domain-kg", "summary": kg.summary(), "source": source or {}}
    return write_manifest(directory, payload, ["entities.jsonl", "triples.kgt"])


def load_kg(directory: str | os.PathLike) -> tuple[DomainKG, dict]:
    directory = require_file(directory)
    manifest = read_manifest(directory)
    entities = decode_entities((directory / "entities.jsonl").read_text(encoding="utf-8"))
    triples = decode_triples((directory / "triples.kgt").read_bytes())
    return DomainKG(entities=entities, triples=triples), manifest
