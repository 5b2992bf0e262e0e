# ============================================
# utils/keyvalue.py
# ============================================

"""
Line-oriented key-value grammar shared by `.morph` robot files and run configs.

Grammar:
    # comment                     (from '#' to end of line, anywhere)
    [section]                     (configs only, column 1)
    key: value                    (column 1, scope = current section)
    kind name:                    (column 1, opens a block, e.g. `joint hip:`)
        key: value                (indented, belongs to the open block)

Values stay raw strings here; the typed helpers at the bottom convert them and
report malformed values with line and column.
"""

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from utils.errors import KeyValueSyntaxError


_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_BLOCK_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s+([A-Za-z0-9_.\-]+)\s*:$")
_ENTRY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:(.*)$")

_TRUE_WORDS = {"true", "yes", "on", "1"}
_FALSE_WORDS = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class Entry:
    """One `key: value` line; `column` points at the first value character."""

    key: str
    value: str
    line: int
    column: int


@dataclass
class Block:
    kind: str
    name: str
    line: int
    entries: List[Entry] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Entry]:
        return {entry.key: entry for entry in self.entries}


@dataclass
class Section:
    name: str
    line: int
    entries: List[Entry] = field(default_factory=list)
    blocks: List[Block] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Entry]:
        return {entry.key: entry for entry in self.entries}


@dataclass
class Document:
    """Parsed file. The first section is the unnamed top level ('')."""

    sections: List[Section]

    @property
    def top(self) -> Section:
        return self.sections[0]

    def section(self, name: str) -> Optional[Section]:
        for section in self.sections:
            if section.name == name:
                return section
        return None


def _strip_comment(raw: str) -> str:
    cut = raw.find("#")
    if cut >= 0:
        raw = raw[:cut]
    return raw.rstrip()


def parse_document(text: str, allow_sections: bool = False) -> Document:
    """
    Split a file into sections, top-level entries and indented blocks.

    Args:
        text: Whole file content
        allow_sections: Accept `[section]` headers (run configs)

    Returns:
        Document with every line attributed to its scope

    Raises:
        KeyValueSyntaxError: on any line that fits no production
    """
    sections = [Section(name="", line=0)]
    current_block: Optional[Block] = None
    seen_keys: Dict[Tuple[str, str, str], int] = {}
    seen_sections = {""}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        if "\t" in raw[: len(raw) - len(raw.lstrip())]:
            raise KeyValueSyntaxError(line_no, 1, "tabs are not allowed for indentation")
        line = _strip_comment(raw)
        if not line.strip():
            continue

        indent = len(line) - len(line.lstrip(" "))
        body = line.strip()
        section = sections[-1]

        if indent > 0:
            if current_block is None:
                raise KeyValueSyntaxError(line_no, indent + 1, "indented line outside of a block")
            entry = _parse_entry(body, line_no, indent)
            scope = (section.name, f"{current_block.kind} {current_block.name}", entry.key)
            _check_duplicate(seen_keys, scope, entry)
            current_block.entries.append(entry)
            continue

        current_block = None
        section_match = _SECTION_RE.match(body)
        if section_match:
            if not allow_sections:
                raise KeyValueSyntaxError(line_no, 1, "sections are not allowed in this file")
            name = section_match.group(1)
            if name in seen_sections:
                raise KeyValueSyntaxError(line_no, 2, f"duplicate section [{name}]")
            seen_sections.add(name)
            sections.append(Section(name=name, line=line_no))
            continue
        if body.startswith("["):
            raise KeyValueSyntaxError(line_no, 1, "malformed section header")

        block_match = _BLOCK_RE.match(body)
        if block_match:
            current_block = Block(kind=block_match.group(1), name=block_match.group(2), line=line_no)
            section.blocks.append(current_block)
            continue

        entry = _parse_entry(body, line_no, 0)
        _check_duplicate(seen_keys, (section.name, "", entry.key), entry)
        section.entries.append(entry)

    return Document(sections=sections)


def _parse_entry(body: str, line_no: int, indent: int) -> Entry:
    match = _ENTRY_RE.match(body)
    if not match:
        raise KeyValueSyntaxError(line_no, indent + 1, "expected 'key: value'")
    key = match.group(1)
    rest = match.group(2)
    value = rest.strip()
    if not value:
        raise KeyValueSyntaxError(line_no, indent + len(body) + 1, f"missing value for '{key}'")
    offset = match.start(2) + (len(rest) - len(rest.lstrip()))
    return Entry(key=key, value=value, line=line_no, column=indent + offset + 1)


def _check_duplicate(seen: Dict[Tuple[str, str, str], int], scope: Tuple[str, str, str], entry: Entry) -> None:
    if scope in seen:
        raise KeyValueSyntaxError(
            entry.line, 1, f"duplicate key '{entry.key}' (first given on line {seen[scope]})"
        )
    seen[scope] = entry.line


# ---------------------------------------------------------------------------
# Typed value helpers
# ---------------------------------------------------------------------------

def to_float(entry: Entry) -> float:
    """Parse a finite real number."""
    try:
        value = float(entry.value)
    except ValueError:
        raise KeyValueSyntaxError(entry.line, entry.column, f"'{entry.value}' is not a number") from None
    if not math.isfinite(value):
        raise KeyValueSyntaxError(entry.line, entry.column, f"'{entry.value}' is not a finite number")
    return value


def to_int(entry: Entry) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise KeyValueSyntaxError(entry.line, entry.column, f"'{entry.value}' is not an integer") from None


def to_bool(entry: Entry) -> bool:
    word = entry.value.lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise KeyValueSyntaxError(entry.line, entry.column, f"'{entry.value}' is not a boolean")


def to_vector(entry: Entry, size: int) -> Tuple[float, ...]:
    """Parse `(x, y, ...)` with exactly `size` finite components."""
    text = entry.value
    if not (text.startswith("(") and text.endswith(")")):
        raise KeyValueSyntaxError(entry.line, entry.column, "vectors are written as '(x, y, z)'")
    parts = [part.strip() for part in text[1:-1].split(",")]
    if len(parts) != size:
        raise KeyValueSyntaxError(
            entry.line, entry.column, f"expected {size} components, found {len(parts)}"
        )
    values = []
    column = entry.column + 1
    for part in parts:
        try:
            value = float(part)
        except ValueError:
            raise KeyValueSyntaxError(entry.line, column, f"'{part}' is not a number") from None
        if not math.isfinite(value):
            raise KeyValueSyntaxError(entry.line, column, f"'{part}' is not a finite number")
        values.append(value)
        column += len(part) + 2
    return tuple(values)


def to_list(entry: Entry) -> List[str]:
    """Comma-separated list of non-empty words (paths, names)."""
    items = [item.strip() for item in entry.value.split(",")]
    if any(not item for item in items):
        raise KeyValueSyntaxError(entry.line, entry.column, "empty item in list")
    return items


def format_float(value: float) -> str:
    """Canonical float text: at most 9 significant digits, trailing zeros dropped."""
    text = format(float(value), ".9g")
    if text == "-0":
        text = "0"
    return text


def format_vector(values) -> str:
    return "(" + ", ".join(format_float(v) for v in values) + ")"
