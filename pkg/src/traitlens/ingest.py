"""Readers for MediaWiki export XML, generic event logs, trait labels and theme maps.

The dump reader is a single streaming pass: memory stays bounded by one
revision element plus parser buffers regardless of dump size. Every revision
that is not emitted as an Event lands in exactly one skip counter, so

    events_emitted + skip counters + parse_errors == revisions_scanned
"""

from __future__ import annotations

import bz2
import csv
import gzip
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import (
    ConflictError,
    MalformedXml,
    RowError,
    SchemaError,
    UnknownTheme,
    UnmappedNamespace,
)
from .trace import (
    BasicCategory,
    Event,
    THEMES,
    TimeGrid,
    TraitLabel,
    format_utc,
    frame_of,
    map_namespace,
    parse_utc,
)

__all__ = [
    "IngestReport",
    "read_wiki_dump",
    "read_event_log",
    "write_event_log",
    "read_trait_labels",
    "write_trait_labels",
    "read_page_theme_map",
    "read_side_table",
    "write_side_table",
]


@dataclass
class IngestReport:
    """Bookkeeping for one ingest pass.

    ``first_edit`` maps every named contributor seen anywhere in the input to
    the timestamp of their earliest revision (the join side table); it covers
    the full input, including revisions outside the study window.
    """

    events_emitted: int = 0
    pages_seen: int = 0
    skipped_unmapped_namespace: int = 0
    skipped_anonymous: int = 0
    skipped_out_of_range: int = 0
    skipped_excluded: int = 0
    parse_errors: int = 0
    revisions_scanned: int = 0
    first_edit: dict = field(default_factory=dict)

    @property
    def users_seen(self) -> int:
        return len(self.first_edit)

    def conserved(self) -> bool:
        skipped = (
            self.skipped_unmapped_namespace
            + self.skipped_anonymous
            + self.skipped_out_of_range
            + self.skipped_excluded
            + self.parse_errors
        )
        return self.events_emitted + skipped == self.revisions_scanned

    def to_dict(self) -> dict:
        return {
            "events_emitted": self.events_emitted,
            "pages_seen": self.pages_seen,
            "users_seen": self.users_seen,
            "skipped_unmapped_namespace": self.skipped_unmapped_namespace,
            "skipped_anonymous": self.skipped_anonymous,
            "skipped_out_of_range": self.skipped_out_of_range,
            "skipped_excluded": self.skipped_excluded,
            "parse_errors": self.parse_errors,
            "revisions_scanned": self.revisions_scanned,
        }


class _CountingReader(io.RawIOBase):
    """Binary reader wrapper that tracks how many bytes the parser consumed."""

    def __init__(self, raw):
        self.raw = raw
        self.bytes_read = 0

    def readable(self):
        return True

    def read(self, size=-1):
        chunk = self.raw.read(size)
        self.bytes_read += len(chunk)
        return chunk


def _open_binary(source):
    """Accept a path or binary file object; decompress .bz2/.gz paths."""
    if hasattr(source, "read"):
        return source, False
    path = str(source)
    if path.endswith(".bz2"):
        return bz2.open(path, "rb"), True
    if path.endswith(".gz"):
        return gzip.open(path, "rb"), True
    return open(path, "rb"), True


def _localname(tag):
    return tag.rpartition("}")[2]


def read_wiki_dump(source, grid: TimeGrid, theme_map=None, exclude_users=None):
    """Stream Events out of a stub-meta-history export.

    Returns ``(events, report)`` where ``events`` is a generator; the report's
    counters update as the generator is consumed and are complete once it is
    exhausted. One Event is emitted per revision by a named contributor whose
    namespace maps and whose timestamp falls inside ``grid``; everything else
    is counted and skipped. ``first_edit`` is tracked for named contributors
    across the whole dump (including skipped revisions) so join frames can be
    computed for pre-window joiners.

    Raises MalformedXml (fatal) on XML-level errors, with the approximate
    byte offset of the failing read window.
    """
    report = IngestReport()
    theme_map = theme_map or {}
    exclude_users = exclude_users or frozenset()

    def events():
        stream, owned = _open_binary(source)
        counter = _CountingReader(stream)
        buffered = io.BufferedReader(counter, buffer_size=1 << 16)
        page_ns = None
        page_id = None
        in_revision = False
        page_elem = None
        root = None
        try:
            parser = ET.iterparse(buffered, events=("start", "end"))
            for ev, elem in parser:
                local = _localname(elem.tag)
                if ev == "start":
                    if root is None:
                        root = elem
                    elif local == "page":
                        page_ns = None
                        page_id = None
                        page_elem = elem
                    elif local == "revision":
                        in_revision = True
                    continue
                if local == "revision":
                    in_revision = False
                    out = _handle_revision(
                        elem, page_ns, page_id, grid, theme_map,
                        exclude_users, report,
                    )
                    if page_elem is not None:
                        page_elem.clear()  # drop processed revisions
                    if out is not None:
                        yield out
                elif in_revision:
                    continue
                elif local == "ns":
                    try:
                        page_ns = int(elem.text.strip())
                    except (TypeError, ValueError):
                        page_ns = None
                elif local == "id" and page_id is None:
                    page_id = (elem.text or "").strip()
                elif local == "page":
                    report.pages_seen += 1
                    page_elem = None
                    if root is not None:
                        root.clear()
        except ET.ParseError as exc:
            line, column = getattr(exc, "position", (None, None))
            raise MalformedXml(
                f"XML parse failure: {exc.msg if hasattr(exc, 'msg') else exc}",
                byte_offset=counter.bytes_read,
                line=line,
                column=column,
            ) from exc
        finally:
            if owned:
                stream.close()

    return events(), report


def _handle_revision(rev, page_ns, page_id, grid, theme_map, exclude_users, report):
    report.revisions_scanned += 1
    ts_text = None
    username = None
    anonymous = False
    saw_contributor = False
    for child in rev:
        local = _localname(child.tag)
        if local == "timestamp":
            ts_text = child.text
        elif local == "contributor":
            saw_contributor = True
            if child.get("deleted") is not None:
                anonymous = True
            for sub in child:
                sublocal = _localname(sub.tag)
                if sublocal == "username":
                    username = (sub.text or "").strip()
                elif sublocal == "ip":
                    anonymous = True
    if ts_text is None or not saw_contributor:
        report.parse_errors += 1
        return None
    try:
        ts = parse_utc(ts_text)
    except ValueError:
        report.parse_errors += 1
        return None
    if anonymous or not username:
        report.skipped_anonymous += 1
        return None
    prev = report.first_edit.get(username)
    if prev is None or ts < prev:
        report.first_edit[username] = ts
    if username in exclude_users:
        report.skipped_excluded += 1
        return None
    if page_ns is None:
        report.skipped_unmapped_namespace += 1
        return None
    try:
        category = map_namespace(page_ns)
    except UnmappedNamespace:
        report.skipped_unmapped_namespace += 1
        return None
    if frame_of(grid, ts) is None:
        report.skipped_out_of_range += 1
        return None
    report.events_emitted += 1
    themes = theme_map.get(page_id, frozenset()) if page_id is not None else frozenset()
    return Event(
        user_id=username,
        timestamp=ts,
        basic_category=category,
        namespace_code=page_ns,
        themes=themes,
    )


_EVENT_COLUMNS = ("user_id", "timestamp", "category", "themes")
_CATEGORY_BY_NAME = {c.value: c for c in BasicCategory}
_THEME_SET = frozenset(THEMES)


def _open_text(source, mode="r"):
    if hasattr(source, "read") or hasattr(source, "write"):
        return source, False
    return open(source, mode, encoding="utf-8", newline=""), True


def _sniff_dialect(header_line):
    return "\t" if "\t" in header_line else ","


def read_event_log(source):
    """Yield Events from a delimited log with header user_id,timestamp,category[,themes].

    Comma- or tab-delimited; timestamps ISO-8601 UTC; themes ';'-separated.
    Raises SchemaError for a bad header, RowError (with the line number) for a
    bad row.
    """
    stream, owned = _open_text(source)
    try:
        header_line = stream.readline()
        if not header_line:
            raise SchemaError("empty file (no header)")
        delim = _sniff_dialect(header_line)
        names = [c.strip() for c in header_line.rstrip("\r\n").split(delim)]
        required = ("user_id", "timestamp", "category")
        if tuple(names[:3]) != required or len(names) > 4 or (
            len(names) == 4 and names[3] != "themes"
        ):
            raise SchemaError(
                f"expected header user_id{delim}timestamp{delim}category"
                f"[{delim}themes], got {names}"
            )
        has_themes = len(names) == 4
        reader = csv.reader(stream, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise RowError(f"expected {len(names)} fields, got {len(row)}", lineno)
            user_id = row[0].strip()
            if not user_id:
                raise RowError("empty user_id", lineno)
            try:
                ts = parse_utc(row[1])
            except ValueError as exc:
                raise RowError(f"bad timestamp {row[1]!r}: {exc}", lineno) from None
            category = _CATEGORY_BY_NAME.get(row[2].strip())
            if category is None:
                raise RowError(f"unknown category {row[2]!r}", lineno)
            themes = frozenset()
            if has_themes and row[3].strip():
                parts = frozenset(p.strip() for p in row[3].split(";") if p.strip())
                unknown = parts - _THEME_SET
                if unknown:
                    raise RowError(f"unknown themes {sorted(unknown)}", lineno)
                themes = parts
            yield Event(user_id=user_id, timestamp=ts,
                        basic_category=category, themes=themes)
    finally:
        if owned:
            stream.close()


def write_event_log(events, dest):
    """Write events in the canonical comma-delimited log format."""
    stream, owned = _open_text(dest, "w")
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(_EVENT_COLUMNS)
        n = 0
        for ev in events:
            writer.writerow(
                (
                    ev.user_id,
                    format_utc(ev.timestamp),
                    ev.basic_category.value,
                    ";".join(sorted(ev.themes)),
                )
            )
            n += 1
        return n
    finally:
        if owned:
            stream.close()


def read_trait_labels(source):
    """Load user_id,trait,class rows into {user_id: {trait: class_value}}.

    Exact duplicates collapse; a conflicting duplicate (same user and trait,
    different class) raises ConflictError.
    """
    stream, owned = _open_text(source)
    try:
        header_line = stream.readline()
        if not header_line:
            raise SchemaError("empty file (no header)")
        delim = _sniff_dialect(header_line)
        names = [c.strip() for c in header_line.rstrip("\r\n").split(delim)]
        if names != ["user_id", "trait", "class"]:
            raise SchemaError(f"expected header user_id,trait,class, got {names}")
        labels = {}
        reader = csv.reader(stream, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise RowError(f"expected 3 fields, got {len(row)}", lineno)
            user_id, trait, class_value = (c.strip() for c in row)
            try:
                TraitLabel(user_id, trait, class_value)
            except ValueError as exc:
                raise RowError(str(exc), lineno) from None
            existing = labels.setdefault(user_id, {}).get(trait)
            if existing is not None and existing != class_value:
                raise ConflictError(
                    f"user {user_id!r} has conflicting {trait} labels: "
                    f"{existing!r} vs {class_value!r}"
                )
            labels[user_id][trait] = class_value
        return labels
    finally:
        if owned:
            stream.close()


def write_trait_labels(labels, dest):
    stream, owned = _open_text(dest, "w")
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(("user_id", "trait", "class"))
        for user_id in sorted(labels):
            for trait in sorted(labels[user_id]):
                writer.writerow((user_id, trait, labels[user_id][trait]))
    finally:
        if owned:
            stream.close()


def read_page_theme_map(source):
    """Load page_id,theme rows into {page_id: frozenset(themes)}."""
    stream, owned = _open_text(source)
    try:
        header_line = stream.readline()
        if not header_line:
            raise SchemaError("empty file (no header)")
        delim = _sniff_dialect(header_line)
        names = [c.strip() for c in header_line.rstrip("\r\n").split(delim)]
        if names != ["page_id", "theme"]:
            raise SchemaError(f"expected header page_id,theme, got {names}")
        mapping = {}
        reader = csv.reader(stream, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise RowError(f"expected 2 fields, got {len(row)}", lineno)
            page_id, theme = row[0].strip(), row[1].strip()
            if theme not in _THEME_SET:
                raise UnknownTheme(f"line {lineno}: unknown theme {theme!r}")
            mapping.setdefault(page_id, set()).add(theme)
        return {page: frozenset(themes) for page, themes in mapping.items()}
    finally:
        if owned:
            stream.close()


def read_side_table(source):
    """Load the user_id,first_edit_timestamp side table into a dict."""
    stream, owned = _open_text(source)
    try:
        header_line = stream.readline()
        if not header_line:
            raise SchemaError("empty file (no header)")
        delim = _sniff_dialect(header_line)
        names = [c.strip() for c in header_line.rstrip("\r\n").split(delim)]
        if names != ["user_id", "first_edit_timestamp"]:
            raise SchemaError(
                f"expected header user_id,first_edit_timestamp, got {names}"
            )
        table = {}
        reader = csv.reader(stream, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise RowError(f"expected 2 fields, got {len(row)}", lineno)
            try:
                table[row[0].strip()] = parse_utc(row[1])
            except ValueError as exc:
                raise RowError(f"bad timestamp {row[1]!r}: {exc}", lineno) from None
        return table
    finally:
        if owned:
            stream.close()


def write_side_table(first_edit: dict, dest):
    stream, owned = _open_text(dest, "w")
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(("user_id", "first_edit_timestamp"))
        for user_id in sorted(first_edit):
            writer.writerow((user_id, format_utc(first_edit[user_id])))
    finally:
        if owned:
            stream.close()
