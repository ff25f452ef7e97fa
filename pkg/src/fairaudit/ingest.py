"""Schema-driven ingestion of delimited audit tables.

A SchemaConfig declares which columns carry the prediction, label, and group,
and which raw values map to the positive / protected sides. Ingestion is
lossless modulo declared drops: every raw row either becomes an AuditRecord
or increments the drop counter (or raises, under the error policy).

Dataset presets live in a JSON registry (presets/registry.json) that pins a
source URL, a sha256 digest, and a schema per preset. fetch_dataset verifies
the digest of the cached or downloaded file before parsing; offline mode
never touches the network. The cache directory defaults to $FAIRAUDIT_DATA
or ~/.cache/fairaudit.
"""

from __future__ import annotations

import csv
import fcntl
import hashlib
import io
import json
import os
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import (
    DigestMismatch,
    EmptyFile,
    EmptyInput,
    InvalidSchema,
    IoError,
    MissingColumn,
    NetworkError,
    RaggedRow,
    UnknownPreset,
    UnmappableValue,
)
from .metrics import AuditRecord

_POLICIES = ("drop", "error")


@dataclass(frozen=True)
class SchemaConfig:
    """Declarative mapping from raw columns and values to (g, Y, S).

    Values found in a positive/negative (or protected/favored) set map to
    1/0; the protected set maps to S=0. Rows whose group value is in neither
    group set are always dropped (that is how a binary audit is carved out
    of a multi-group column). Prediction or label values outside the
    declared sets follow missing_policy: silently dropped with a count, or
    a hard UnmappableValue error. When a negative value set is omitted,
    every non-positive value counts as negative.
    """

    prediction_column: str
    group_column: str
    positive_prediction_values: frozenset[str]
    protected_group_values: frozenset[str]
    favored_group_values: frozenset[str]
    label_column: str | None = None
    positive_label_values: frozenset[str] = frozenset()
    negative_prediction_values: frozenset[str] | None = None
    negative_label_values: frozenset[str] | None = None
    missing_policy: str = "drop"

    def __post_init__(self) -> None:
        if self.missing_policy not in _POLICIES:
            raise InvalidSchema(f"missing_policy must be one of {_POLICIES}")
        if not self.positive_prediction_values:
            raise InvalidSchema("positive_prediction_values must be nonempty")
        if self.label_column is not None and not self.positive_label_values:
            raise InvalidSchema("positive_label_values must be nonempty with a label column")
        if self.protected_group_values & self.favored_group_values:
            raise InvalidSchema("protected and favored value sets overlap")
        if not self.protected_group_values or not self.favored_group_values:
            raise InvalidSchema("group value sets must be nonempty")

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaConfig":
        known = {
            "prediction_column", "label_column", "group_column",
            "positive_prediction_values", "negative_prediction_values",
            "positive_label_values", "negative_label_values",
            "protected_group_values", "favored_group_values", "missing_policy",
        }
        unknown = set(doc) - known
        if unknown:
            raise InvalidSchema(f"unknown schema keys: {sorted(unknown)}")
        def fset(key, default=None):
            if key not in doc or doc[key] is None:
                return default
            return frozenset(str(v) for v in doc[key])
        try:
            return cls(
                prediction_column=doc["prediction_column"],
                group_column=doc["group_column"],
                positive_prediction_values=fset("positive_prediction_values", frozenset()),
                protected_group_values=fset("protected_group_values", frozenset()),
                favored_group_values=fset("favored_group_values", frozenset()),
                label_column=doc.get("label_column"),
                positive_label_values=fset("positive_label_values", frozenset()),
                negative_prediction_values=fset("negative_prediction_values"),
                negative_label_values=fset("negative_label_values"),
                missing_policy=doc.get("missing_policy", "drop"),
            )
        except KeyError as err:
            raise InvalidSchema(f"schema missing required key {err.args[0]!r}") from err

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SchemaConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                doc = json.load(handle)
        except OSError as err:
            raise IoError(f"cannot read schema {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise InvalidSchema(f"schema {path} is not valid JSON: {err}") from err
        return cls.from_dict(doc)


@dataclass(frozen=True)
class RawTable:
    """Parsed text rows with resolved header names."""

    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    n_dropped: int = 0


@dataclass(frozen=True)
class AuditTable:
    """Mapped audit records plus ingestion bookkeeping."""

    records: tuple[AuditRecord, ...]
    n_dropped: int
    source: str
    checksum: str | None = None

    def __post_init__(self) -> None:
        if not self.records:
            raise EmptyInput(f"no usable records after ingesting {self.source}")


def parse_table(
    source,
    delimiter: str = ",",
    has_header: bool = True,
    ragged_policy: str = "drop",
) -> RawTable:
    """Read RFC-4180-style delimited text into rows of strings.

    source is a path or an open text/binary stream. Without a header the
    columns are named c0, c1, ... in file order. Rows with the wrong field
    count are dropped and counted, or raise RaggedRow under the error
    policy. Blank lines are skipped.
    """
    if ragged_policy not in _POLICIES:
        raise InvalidSchema(f"ragged_policy must be one of {_POLICIES}")
    if isinstance(source, (str, Path)):
        try:
            with open(source, encoding="utf-8", newline="") as handle:
                return _parse_stream(handle, str(source), delimiter, has_header, ragged_policy)
        except OSError as err:
            raise IoError(f"cannot read {source}: {err}") from err
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")
        return _parse_stream(text, "<stream>", delimiter, has_header, ragged_policy)
    return _parse_stream(source, "<stream>", delimiter, has_header, ragged_policy)


def _parse_stream(handle, name, delimiter, has_header, ragged_policy) -> RawTable:
    reader = csv.reader(handle, delimiter=delimiter)
    rows: list[tuple[str, ...]] = []
    columns: tuple[str, ...] | None = None
    dropped = 0
    for row in reader:
        if not row:
            continue
        if columns is None:
            if has_header:
                columns = tuple(row)
                continue
            columns = tuple(f"c{i}" for i in range(len(row)))
        if len(row) != len(columns):
            if ragged_policy == "error":
                raise RaggedRow(
                    f"{name} line {reader.line_num}: {len(row)} fields, expected {len(columns)}"
                )
            dropped += 1
            continue
        rows.append(tuple(row))
    if columns is None or (not rows and dropped == 0):
        raise EmptyFile(f"{name} contains no rows")
    return RawTable(columns=columns, rows=tuple(rows), n_dropped=dropped)


def _classify(value: str, positive: frozenset[str], negative: frozenset[str] | None):
    if value in positive:
        return 1
    if negative is None or value in negative:
        return 0
    return None  # outside the declared sets


def apply_schema(raw: RawTable, schema: SchemaConfig, source: str = "<memory>") -> AuditTable:
    """Map raw rows to AuditRecords under a schema.

    Raises MissingColumn when a referenced column is absent from the header.
    Group values outside both group sets are dropped; unmappable prediction
    or label values follow the schema's missing_policy.
    """
    index = {name: i for i, name in enumerate(raw.columns)}
    needed = [schema.prediction_column, schema.group_column]
    if schema.label_column is not None:
        needed.append(schema.label_column)
    for column in needed:
        if column not in index:
            raise MissingColumn(f"column {column!r} not in header {list(raw.columns)}")

    pred_i = index[schema.prediction_column]
    group_i = index[schema.group_column]
    label_i = index[schema.label_column] if schema.label_column is not None else None

    records: list[AuditRecord] = []
    dropped = raw.n_dropped
    for row in raw.rows:
        group_value = row[group_i]
        if group_value in schema.protected_group_values:
            group = 0
        elif group_value in schema.favored_group_values:
            group = 1
        else:
            dropped += 1
            continue
        prediction = _classify(
            row[pred_i], schema.positive_prediction_values, schema.negative_prediction_values
        )
        if prediction is None:
            if schema.missing_policy == "error":
                raise UnmappableValue(
                    f"prediction value {row[pred_i]!r} outside declared sets"
                )
            dropped += 1
            continue
        label = None
        if label_i is not None:
            label = _classify(
                row[label_i], schema.positive_label_values, schema.negative_label_values
            )
            if label is None:
                if schema.missing_policy == "error":
                    raise UnmappableValue(
                        f"label value {row[label_i]!r} outside declared sets"
                    )
                dropped += 1
                continue
        records.append(AuditRecord(prediction=prediction, group=group, label=label))
    return AuditTable(records=tuple(records), n_dropped=dropped, source=source)


def apply_schema_multigroup(
    raw: RawTable, schema: SchemaConfig, group_column: str | None = None
) -> list[tuple[int, int | None, str]]:
    """Multi-class variant for pairwise audits: group values are kept
    verbatim instead of being mapped to {0, 1}."""
    column = group_column or schema.group_column
    index = {name: i for i, name in enumerate(raw.columns)}
    if column not in index:
        raise MissingColumn(f"column {column!r} not in header {list(raw.columns)}")
    if schema.prediction_column not in index:
        raise MissingColumn(f"column {schema.prediction_column!r} not in header")
    pred_i = index[schema.prediction_column]
    label_i = index[schema.label_column] if schema.label_column is not None else None
    group_i = index[column]

    out: list[tuple[int, int | None, str]] = []
    for row in raw.rows:
        prediction = _classify(
            row[pred_i], schema.positive_prediction_values, schema.negative_prediction_values
        )
        if prediction is None:
            if schema.missing_policy == "error":
                raise UnmappableValue(f"prediction value {row[pred_i]!r} outside declared sets")
            continue
        label = None
        if label_i is not None:
            label = _classify(
                row[label_i], schema.positive_label_values, schema.negative_label_values
            )
            if label is None:
                if schema.missing_policy == "error":
                    raise UnmappableValue(f"label value {row[label_i]!r} outside declared sets")
                continue
        out.append((prediction, label, row[group_i]))
    if not out:
        raise EmptyInput("no usable records after multi-group mapping")
    return out


def load_table(
    path: str | Path,
    schema: SchemaConfig,
    delimiter: str = ",",
    has_header: bool = True,
) -> AuditTable:
    """parse_table followed by apply_schema, with the file's digest recorded."""
    raw = parse_table(path, delimiter=delimiter, has_header=has_header,
                      ragged_policy=schema.missing_policy)
    table = apply_schema(raw, schema, source=str(path))
    digest = _sha256_file(path)
    return AuditTable(table.records, table.n_dropped, table.source, digest)


def canonical_schema(has_labels: bool) -> SchemaConfig:
    """Schema of the canonical CSV emitted by write_canonical_csv."""
    return SchemaConfig(
        prediction_column="prediction",
        group_column="group",
        positive_prediction_values=frozenset({"1"}),
        negative_prediction_values=frozenset({"0"}),
        protected_group_values=frozenset({"0"}),
        favored_group_values=frozenset({"1"}),
        label_column="label" if has_labels else None,
        positive_label_values=frozenset({"1"}) if has_labels else frozenset(),
        negative_label_values=frozenset({"0"}) if has_labels else None,
        missing_policy="error",
    )


def write_canonical_csv(table: AuditTable, path: str | Path) -> None:
    """Serialize records as prediction[,label],group rows; re-ingesting the
    file with canonical_schema reproduces the records exactly."""
    has_labels = table.records[0].label is not None
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        if has_labels:
            writer.writerow(["prediction", "label", "group"])
            writer.writerows(
                (r.prediction, r.label, r.group) for r in table.records
            )
        else:
            writer.writerow(["prediction", "group"])
            writer.writerows((r.prediction, r.group) for r in table.records)


# ---- preset registry -------------------------------------------------------


def load_registry(path: str | Path | None = None) -> dict:
    """The preset registry: preset id -> {url, digest, filename, schema, ...}."""
    if path is None:
        text = resources.files("fairaudit").joinpath("presets/registry.json").read_text("utf-8")
    else:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as err:
            raise IoError(f"cannot read registry {path}: {err}") from err
    doc = json.loads(text)
    return doc["presets"]


def default_cache_dir() -> Path:
    env = os.environ.get("FAIRAUDIT_DATA")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fairaudit"


def _sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _download(url: str, destination: Path, expected_digest: str) -> None:
    """Fetch url into destination, verifying the digest before the file is
    moved into place; a concurrent fetch of the same file is serialized by
    an advisory lock so no partial write is ever visible."""
    destination.parent.mkdir(parents=True, exist_ok=True)
    lock_path = destination.with_suffix(destination.suffix + ".lock")
    with open(lock_path, "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            if destination.exists():  # another process already fetched it
                return
            try:
                with urllib.request.urlopen(url, timeout=60) as response:
                    payload = response.read()
            except (urllib.error.URLError, OSError, ValueError) as err:
                raise NetworkError(f"cannot fetch {url}: {err}") from err
            actual = hashlib.sha256(payload).hexdigest()
            if actual != expected_digest:
                raise DigestMismatch(
                    f"{url}: digest {actual} does not match pinned {expected_digest}"
                )
            with tempfile.NamedTemporaryFile(
                dir=destination.parent, delete=False
            ) as handle:
                handle.write(payload)
                temp_name = handle.name
            os.replace(temp_name, destination)
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def fetch_dataset(
    preset: str,
    cache_dir: str | Path | None = None,
    offline: bool = False,
    registry_path: str | Path | None = None,
) -> AuditTable:
    """Resolve a preset to a verified local file and parse it.

    Cache hits are digest-checked before use; a mismatch is an error, never
    a silent refetch. In offline mode a cache miss raises NetworkError.
    """
    registry = load_registry(registry_path)
    if preset not in registry:
        raise UnknownPreset(
            f"unknown preset {preset!r}; available: {sorted(registry)}"
        )
    entry = registry[preset]
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    local = cache / entry["filename"]

    if local.exists():
        actual = _sha256_file(local)
        if actual != entry["digest"]:
            raise DigestMismatch(
                f"{local}: digest {actual} does not match pinned {entry['digest']}"
            )
    elif offline:
        raise NetworkError(f"offline and {local} is not cached")
    elif not entry.get("url"):
        raise NetworkError(
            f"preset {preset!r} has no source URL (derived extract, see its "
            f"registry notes) and {local} is not cached"
        )
    else:
        _download(entry["url"], local, entry["digest"])

    schema = SchemaConfig.from_dict(entry["schema"])
    table = load_table(
        local, schema,
        delimiter=entry.get("delimiter", ","),
        has_header=entry.get("has_header", True),
    )
    return AuditTable(table.records, table.n_dropped, f"preset:{preset}", table.checksum)
