"""Core domain types: events, the quarterly time grid, category schemes, trait labels.

Everything here is immutable after construction and safe to share across threads.
Frame indices are 0-based throughout the Python API; user-facing exports (CSV
columns, CLI flags) number frames from 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .errors import UnmappedNamespace

__all__ = [
    "BasicCategory",
    "BASIC_CATEGORIES",
    "THEMES",
    "TRAIT_VOCABULARY",
    "Event",
    "TimeGrid",
    "CategoryScheme",
    "TraitLabel",
    "map_namespace",
    "frame_of",
    "quarter_index",
    "parse_utc",
    "format_utc",
]


class BasicCategory(Enum):
    """The six coarse activity categories derived from page namespaces."""

    CONTENT = "CONTENT"
    TALK_C = "TALK-C"
    USER = "USER"
    TALK_U = "TALK-U"
    WIKI = "WIKI"
    INFRA = "INFRA"

    def __str__(self):
        return self.value


#: Fixed feature-column order for the basic scheme.
BASIC_CATEGORIES = tuple(c.value for c in BasicCategory)

#: The 23 thematic page categories, in fixed column order.
THEMES = (
    "AGRICULTURE",
    "APPLIED-SCIENCES",
    "ARTS",
    "BELIEF",
    "BUSINESS",
    "CHRONOLOGY",
    "CULTURE",
    "EDUCATION",
    "ENVIRONMENT",
    "GEOGRAPHY",
    "HEALTH",
    "HISTORY",
    "HUMANITIES",
    "LANGUAGE",
    "LAW",
    "LIFE",
    "MATHEMATICS",
    "NATURE",
    "PEOPLE",
    "POLITICS",
    "SCIENCE",
    "SOCIETY",
    "TECHNOLOGY",
)

_THEME_SET = frozenset(THEMES)

#: Declared class vocabulary per supported trait.
TRAIT_VOCABULARY = {
    "gender": ("male", "female"),
    "education": ("undergrads", "grads", "phd"),
    "religion": ("christian", "muslim", "atheist", "jewish"),
}

# namespace code -> category, per the documented six-way grouping
_NAMESPACE_MAP = {}
for _code in (0, 6):
    _NAMESPACE_MAP[_code] = BasicCategory.CONTENT
for _code in (1, 7):
    _NAMESPACE_MAP[_code] = BasicCategory.TALK_C
_NAMESPACE_MAP[2] = BasicCategory.USER
_NAMESPACE_MAP[3] = BasicCategory.TALK_U
for _code in (4, 5):
    _NAMESPACE_MAP[_code] = BasicCategory.WIKI
for _code in (8, 9, 10, 11, 12, 13, 14, 15, 100, 101):
    _NAMESPACE_MAP[_code] = BasicCategory.INFRA


def map_namespace(namespace_code: int) -> BasicCategory:
    """Map a raw namespace code to its basic category.

    Raises UnmappedNamespace for any code outside the 16 documented ones;
    callers choose whether that is fatal or a counted skip.
    """
    try:
        return _NAMESPACE_MAP[namespace_code]
    except KeyError:
        raise UnmappedNamespace(namespace_code) from None


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp ('Z' or '+00:00' suffix) to second resolution."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=0)


def format_utc(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Event:
    """One atomic edit: who, when, and what kind of page.

    ``themes`` is only meaningful for CONTENT edits; ``namespace_code`` is
    optional so generic (non-wiki) logs can supply the category directly.
    """

    user_id: str
    timestamp: datetime
    basic_category: BasicCategory
    namespace_code: int | None = None
    themes: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "themes", frozenset(self.themes))
        unknown = self.themes - _THEME_SET
        if unknown:
            raise ValueError(f"unknown themes: {sorted(unknown)}")
        if self.namespace_code is not None:
            expected = map_namespace(self.namespace_code)
            if expected is not self.basic_category:
                raise ValueError(
                    f"namespace {self.namespace_code} maps to {expected}, "
                    f"not {self.basic_category}"
                )

    def to_json(self) -> str:
        rec = {
            "user_id": self.user_id,
            "timestamp": format_utc(self.timestamp),
            "category": self.basic_category.value,
        }
        if self.namespace_code is not None:
            rec["namespace"] = self.namespace_code
        if self.themes:
            rec["themes"] = sorted(self.themes)
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Event":
        rec = json.loads(text)
        return cls(
            user_id=rec["user_id"],
            timestamp=parse_utc(rec["timestamp"]),
            basic_category=BasicCategory(rec["category"]),
            namespace_code=rec.get("namespace"),
            themes=frozenset(rec.get("themes", ())),
        )


_QUARTER_MONTHS = (1, 4, 7, 10)


@dataclass(frozen=True)
class TimeGrid:
    """A study window partitioned into half-open calendar quarters.

    The origin must sit on a quarter boundary (Jan/Apr/Jul/Oct 1st, midnight
    UTC). The default window covers 2007-01-01 up to (not including)
    2013-07-01: 26 quarters.
    """

    origin: datetime = datetime(2007, 1, 1, tzinfo=timezone.utc)
    frames: int = 26

    def __post_init__(self):
        origin = self.origin
        if origin.tzinfo is None:
            origin = origin.replace(tzinfo=timezone.utc)
            object.__setattr__(self, "origin", origin)
        origin = origin.astimezone(timezone.utc)
        if (
            origin.month not in _QUARTER_MONTHS
            or origin.day != 1
            or origin.hour or origin.minute or origin.second or origin.microsecond
        ):
            raise ValueError("grid origin must be a quarter boundary (UTC midnight)")
        if self.frames < 1:
            raise ValueError("frames must be positive")

    def frame_start(self, index: int) -> datetime:
        months = self.origin.month - 1 + 3 * index
        year = self.origin.year + months // 12
        return datetime(year, months % 12 + 1, 1, tzinfo=timezone.utc)

    @property
    def end(self) -> datetime:
        return self.frame_start(self.frames)


def quarter_index(grid: TimeGrid, ts: datetime) -> int:
    """Signed quarter offset of ``ts`` from the grid origin (no bounds check)."""
    ts = ts.astimezone(timezone.utc)
    months = (ts.year - grid.origin.year) * 12 + (ts.month - grid.origin.month)
    # floor division: pre-origin instants land in negative quarters
    return months // 3


def frame_of(grid: TimeGrid, ts: datetime) -> int | None:
    """0-based frame index of ``ts``, or None when outside the study window."""
    idx = quarter_index(grid, ts)
    if 0 <= idx < grid.frames:
        return idx
    return None


@dataclass(frozen=True)
class CategoryScheme:
    """Ordered count-category list: 6 basic names, or 6 + 23 themes (extended)."""

    mode: str = "basic"
    categories: tuple = field(init=False)

    def __post_init__(self):
        if self.mode == "basic":
            cats = BASIC_CATEGORIES
        elif self.mode == "extended":
            cats = BASIC_CATEGORIES + THEMES
        else:
            raise ValueError(f"unknown scheme mode {self.mode!r}")
        object.__setattr__(self, "categories", cats)

    def __len__(self):
        return len(self.categories)

    def index(self, name: str) -> int:
        return self.categories.index(name)


@dataclass(frozen=True)
class TraitLabel:
    """A self-declared class value for one (user, trait) pair."""

    user_id: str
    trait: str
    class_value: str

    def __post_init__(self):
        vocab = TRAIT_VOCABULARY.get(self.trait)
        if vocab is None:
            raise ValueError(f"unknown trait {self.trait!r}")
        if self.class_value not in vocab:
            raise ValueError(
                f"{self.class_value!r} is not in the {self.trait} vocabulary {vocab}"
            )
