"""Query spec files and delimiter-separated relation files.

A query spec is a JSON object::

    {"attributes": ["A", "B", "C"],
     "relations": [["A", "B"], ["B", "C"]],
     "output": ["A", "C"]}

A dataset directory holds one file per relation named after its schema with
attributes joined by ``_`` (``A_B.csv`` or ``A_B.tsv``). The first line lists
the attribute names in any order; every later line is one row. Values are
opaque strings interned to dense integer ids.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import Instance, JoinSketchError, QuerySpec, QuerySpecError, Relation, check_instance


class ParseError(JoinSketchError):
    def __init__(self, path: Path | str, line: int | None, message: str):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


def parse_query_spec(text: str, source: str = "<query>") -> QuerySpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(source, e.lineno, f"invalid JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(source, None, "the query spec must be a JSON object")
    missing = [k for k in ("attributes", "relations", "output") if k not in doc]
    if missing:
        raise ParseError(source, None, f"missing key(s): {', '.join(missing)}")
    attrs, rels, out = doc["attributes"], doc["relations"], doc["output"]
    if not (_str_list(attrs) and isinstance(rels, list) and all(_str_list(r) for r in rels)
            and _str_list(out)):
        raise ParseError(source, None, "attributes/output must be string lists and relations a list of them")
    try:
        return QuerySpec(tuple(attrs), tuple(tuple(r) for r in rels), tuple(out))
    except QuerySpecError as e:
        raise ParseError(source, None, str(e)) from None


def _str_list(x) -> bool:
    return isinstance(x, list) and all(isinstance(v, str) for v in x)


def load_query_spec(path: str | Path) -> QuerySpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ParseError(p, None, f"cannot read query spec: {e.strerror}") from None
    return parse_query_spec(text, str(p))


def dump_query_spec(spec: QuerySpec) -> str:
    return json.dumps({"attributes": list(spec.attributes),
                       "relations": [list(e) for e in spec.schemas],
                       "output": list(spec.output)}, indent=2)


def relation_filename(schema: Iterable[str], suffix: str = ".csv") -> str:
    return "_".join(schema) + suffix


def _find_file(directory: Path, schema: tuple[str, ...]) -> Path:
    for suffix in (".csv", ".tsv", ".txt"):
        p = directory / relation_filename(schema, suffix)
        if p.is_file():
            return p
    raise ParseError(directory / relation_filename(schema), None,
                     f"missing file for relation {{{','.join(schema)}}}")


def _delimiter(path: Path, header: str, delimiter: str | None) -> str:
    if delimiter:
        return delimiter
    if path.suffix == ".tsv" or "\t" in header:
        return "\t"
    return ","


def ingest(directory: str | Path, spec: QuerySpec, delimiter: str | None = None,
           dedup: bool = False) -> Instance:
    """Read one file per schema, intern values, and validate the instance."""
    d = Path(directory)
    if not d.is_dir():
        raise ParseError(d, None, "not a directory")
    labels: dict[str, int] = {}
    rels = []
    for schema in spec.schemas:
        path = _find_file(d, schema)
        with path.open(newline="") as fh:
            first = fh.readline()
            delim = _delimiter(path, first, delimiter)
            header = [h.strip() for h in next(csv.reader([first], delimiter=delim), [])]
            if sorted(header) != sorted(schema) or len(set(header)) != len(header):
                raise ParseError(path, 1, f"header {header} does not match schema {list(schema)}")
            perm = [header.index(a) for a in schema]
            rows = []
            for lineno, fields in enumerate(csv.reader(fh, delimiter=delim), start=2):
                if not fields or all(not f.strip() for f in fields):
                    continue
                if len(fields) != len(header):
                    raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(fields)}")
                rows.append([labels.setdefault(fields[j].strip(), len(labels)) for j in perm])
        arr = np.array(rows, dtype=np.int64).reshape(-1, len(schema))
        if dedup and len(arr):
            arr = np.unique(arr, axis=0)
        rels.append(Relation(tuple(schema), arr))
    names = [""] * len(labels)
    for s, i in labels.items():
        names[i] = s
    inst = Instance(tuple(rels), tuple(names))
    check_instance(inst, spec)
    return inst


def emit(inst: Instance, spec: QuerySpec, directory: str | Path, write_spec: bool = True) -> Path:
    """Write one CSV per relation (and ``query.json``); inverse of :func:`ingest`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for schema in spec.schemas:
        rel = inst.relation(schema).reordered(schema)
        with (d / relation_filename(schema)).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(schema)
            for row in rel.rows.tolist():
                w.writerow([inst.label(v) for v in row])
    if write_spec:
        (d / "query.json").write_text(dump_query_spec(spec) + "\n")
    return d
