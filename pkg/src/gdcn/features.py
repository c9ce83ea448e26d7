"""Tabular CTR ingestion: vocabularies, numeric discretization, encoding, splits.

Raw records are sequences of strings whose first element is the label and
whose remaining elements are one token per field, in declaration order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from itertools import chain
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ArityError, ConfigError, EncodeError, FormatError, SchemaError

SCHEMA_VERSION = 1
DATASET_MAGIC = b"GDCN"
DATASET_VERSION = 1

MISSING_TOKEN = "<missing>"
UNKNOWN_TOKEN = "<unknown>"

CATEGORICAL = "categorical"
NUMERIC = "numeric"
KINDS = (CATEGORICAL, NUMERIC)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str = CATEGORICAL

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class FieldDescriptor:
    name: str
    kind: str
    vocabulary: dict[str, int]
    unknown_index: int

    @property
    def size(self) -> int:
        return len(self.vocabulary) + 1

    def index_of(self, token: str) -> int:
        return self.vocabulary.get(token, self.unknown_index)


@dataclass
class DatasetSchema:
    fields: list[FieldDescriptor]
    threshold: int = 1

    @property
    def F(self) -> int:
        return len(self.fields)

    @property
    def sizes(self) -> list[int]:
        return [f.size for f in self.fields]

    @property
    def T(self) -> int:
        return sum(self.sizes)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "threshold": self.threshold,
            "F": self.F,
            "T": self.T,
            "fields": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "size": f.size,
                    "unknown_index": f.unknown_index,
                    "vocabulary": f.vocabulary,
                }
                for f in self.fields
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSchema":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(
                f"unsupported schema_version {obj.get('schema_version')!r}")
        fields = [
            FieldDescriptor(f["name"], f["kind"], dict(f["vocabulary"]),
                            int(f["unknown_index"]))
            for f in obj["fields"]
        ]
        return cls(fields, int(obj.get("threshold", 1)))

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a schema file ({exc})") from exc
        return cls.from_json(obj)


@dataclass
class EncodedInstance:
    indices: list[int]
    label: int


@dataclass
class EncodedDataset:
    """Column-major batch of encoded instances."""

    indices: np.ndarray  # (N, F) int64
    labels: np.ndarray  # (N,) float64 in {0, 1}

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def F(self) -> int:
        return self.indices.shape[1]

    def take(self, rows) -> "EncodedDataset":
        return EncodedDataset(self.indices[rows], self.labels[rows])

    def instance(self, i: int) -> EncodedInstance:
        return EncodedInstance([int(v) for v in self.indices[i]], int(self.labels[i]))


def discretize_numeric(z) -> str:
    """Map a numeric value to its token.

    Values above 2 become ``floor(log2(z))``; values in ``[0, 2]`` are floored.
    Missing, NaN and infinite values share :data:`MISSING_TOKEN`. Negative
    values are floored as well.
    """
    if z is None:
        return MISSING_TOKEN
    if isinstance(z, str):
        z = z.strip()
        if not z:
            return MISSING_TOKEN
        try:
            z = float(z)
        except ValueError:
            return MISSING_TOKEN
    z = float(z)
    if not math.isfinite(z):
        return MISSING_TOKEN
    if z > 2:
        # frexp gives z = m * 2**e with 0.5 <= m < 1, so floor(log2 z) = e - 1 exactly
        return str(math.frexp(z)[1] - 1)
    return str(math.floor(z))


def _tokenize(value: str, kind: str) -> str:
    return discretize_numeric(value) if kind == NUMERIC else value


def count_tokens(rows: Iterable[Sequence[str]], specs: Sequence[FieldSpec],
                 start: int = 0) -> list[Counter]:
    """Per-field token counts for one shard; merge shards by adding Counters."""
    arity = len(specs) + 1
    counts = [Counter() for _ in specs]
    for pos, record in enumerate(rows, start=start):
        if len(record) != arity:
            raise ArityError(pos, arity, len(record))
        for f, spec in enumerate(specs):
            counts[f][_tokenize(record[f + 1], spec.kind)] += 1
    return counts


def schema_from_counts(counts: Sequence[Counter], specs: Sequence[FieldSpec],
                       threshold: int) -> DatasetSchema:
    fields = []
    for spec, counter in zip(specs, counts):
        kept = [tok for tok, c in counter.items() if c >= threshold]
        # frequency order, ties by token, so merged shards give the same schema
        kept.sort(key=lambda tok: (-counter[tok], tok))
        vocab = {tok: i for i, tok in enumerate(kept)}
        fields.append(FieldDescriptor(spec.name, spec.kind, vocab, len(vocab)))
    return DatasetSchema(fields, threshold)


def build_schema(rows: Iterable[Sequence[str]], specs: Sequence[FieldSpec],
                 threshold: int = 1) -> DatasetSchema:
    """Scan records and build per-field vocabularies.

    Tokens seen fewer than ``threshold`` times in a field collapse into that
    field's unknown index, which is always the last index of the field.
    """
    if int(threshold) < 1:
        raise ConfigError(f"threshold must be a positive integer, got {threshold}")
    if not specs:
        raise SchemaError("schema needs at least one field")
    rows = iter(rows)
    first = next(rows, None)
    if first is None:
        raise SchemaError("cannot build a schema from zero records")
    counts = count_tokens(chain([first], rows), specs)
    return schema_from_counts(counts, specs, int(threshold))


def parse_label(value: str, position=None) -> int:
    try:
        y = float(value)
    except (TypeError, ValueError):
        y = None
    if y not in (0.0, 1.0):
        where = "" if position is None else f" at record {position}"
        raise EncodeError(f"unparseable label {value!r}{where}")
    return int(y)


def encode_instance(record: Sequence[str], schema: DatasetSchema,
                    position=None) -> EncodedInstance:
    if len(record) != schema.F + 1:
        raise ArityError(position, schema.F + 1, len(record))
    label = parse_label(record[0], position)
    indices = [
        fd.index_of(_tokenize(record[f + 1], fd.kind))
        for f, fd in enumerate(schema.fields)
    ]
    return EncodedInstance(indices, label)


def encode_rows(rows: Iterable[Sequence[str]], schema: DatasetSchema) -> EncodedDataset:
    idx, labels = [], []
    for pos, record in enumerate(rows):
        inst = encode_instance(record, schema, pos)
        idx.append(inst.indices)
        labels.append(inst.label)
    indices = np.asarray(idx, dtype=np.int64).reshape(len(labels), schema.F)
    return EncodedDataset(indices, np.asarray(labels, dtype=np.float64))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def row_keys(n: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-random key per row ordinal."""
    salt = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return _splitmix64(np.arange(n, dtype=np.uint64) ^ salt)


def split_indices(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Row ordinals of each partition, each in ascending order.

    Rows are ranked by a hash of ``(seed, ordinal)`` and cut at the rounded
    cumulative ratio boundaries, so sizes match the ratios to within one row.
    """
    ratios = tuple(float(r) for r in ratios)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be nonnegative and sum to 1, got {ratios}")
    order = np.argsort(row_keys(n, seed), kind="stable")
    bounds = [0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        bounds.append(int(round(n * acc)))
    bounds.append(n)
    return tuple(np.sort(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))


def split_dataset(rows, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Partition ``rows`` (a sequence or an :class:`EncodedDataset`)."""
    parts = split_indices(len(rows), ratios, seed)
    if isinstance(rows, EncodedDataset):
        return tuple(rows.take(p) for p in parts)
    return tuple([rows[i] for i in p] for p in parts)


# --- files ---------------------------------------------------------------

def read_declaration(path) -> list[FieldSpec]:
    """Read ``name,kind`` lines; blank lines and ``#`` comments are ignored."""
    specs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise SchemaError(f"{path}:{lineno}: expected 'name,kind', got {line!r}")
        try:
            specs.append(FieldSpec(parts[0], parts[1]))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    if not specs:
        raise SchemaError(f"{path}: no fields declared")
    return specs


def read_csv(path, specs: Sequence[FieldSpec] | None = None) -> tuple[list[str], Iterator[list[str]]]:
    """Open a header-declared CSV; returns (field names, record iterator)."""
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        fh.close()
        raise SchemaError(f"{path}: empty file")
    if header[0].strip() != "label":
        fh.close()
        raise SchemaError(f"{path}: first column must be 'label', got {header[0]!r}")
    names = [h.strip() for h in header[1:]]
    if specs is not None and names != [s.name for s in specs]:
        fh.close()
        raise SchemaError(
            f"{path}: header fields {names} do not match declaration "
            f"{[s.name for s in specs]}")

    def records():
        with fh:
            yield from reader

    return names, records()


def _row_dtype(F: int) -> np.dtype:
    return np.dtype([("label", "u1"), ("idx", "<u4", (F,))])


def write_encoded(path, data: EncodedDataset) -> None:
    F = data.F
    rows = np.zeros(len(data), dtype=_row_dtype(F))
    rows["label"] = data.labels.astype(np.uint8)
    rows["idx"] = data.indices.astype(np.uint32)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, F))
        fh.write(rows.tobytes())


def read_encoded(path) -> EncodedDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC or len(raw) < 12:
        raise FormatError(f"{path}: not an encoded dataset")
    version, F = struct.unpack("<II", raw[4:12])
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    dtype = _row_dtype(F)
    body = raw[12:]
    if len(body) % dtype.itemsize:
        raise FormatError(f"{path}: truncated body ({len(body)} bytes, row size {dtype.itemsize})")
    rows = np.frombuffer(body, dtype=dtype)
    return EncodedDataset(rows["idx"].astype(np.int64).reshape(len(rows), F),
                          rows["label"].astype(np.float64))


def check_encoded(data: EncodedDataset, schema: DatasetSchema) -> None:
    if data.F != schema.F:
        raise FormatError(f"dataset has {data.F} fields, schema has {schema.F}")
    if len(data):
        hi = data.indices.max(axis=0)
        for f, (m, size) in enumerate(zip(hi, schema.sizes)):
            if m >= size or data.indices[:, f].min() < 0:
                raise FormatError(
                    f"field {schema.fields[f].name!r}: index {m} outside [0, {size})")
