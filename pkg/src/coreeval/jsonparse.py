"""Helpers for digging JSON values out of free-form generator output."""

from __future__ import annotations

import json


def find_balanced(text: str, open_char: str, close_char: str) -> str | None:
    """Return the first balanced ``open_char``...``close_char`` block,
    ignoring brackets inside JSON string literals."""
    start = text.find(open_char)
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == open_char:
            depth += 1
        elif ch == close_char:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def parse_json_array(text: str) -> list | None:
    """Parse the first balanced ``[...]`` block, or None."""
    block = find_balanced(text, "[", "]")
    if block is None:
        return None
    try:
        value = json.loads(block)
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, list) else None


def parse_json_object(text: str) -> dict | None:
    """Parse the first balanced ``{...}`` block, or None."""
    block = find_balanced(text, "{", "}")
    if block is None:
        return None
    try:
        value = json.loads(block)
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, dict) else None
