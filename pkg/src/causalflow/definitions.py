"""Block splitting for model and guard definition files.

Both files share one shape::

    model M_Color { type: Attribute; schema { color: enum(red,blue,green) required } }
    guard CheckLimit { when: exists p: (type='payment'); emit { model: limit_ok; ... } }

Items are separated by ``;`` at nesting depth zero; quotes, parentheses and
braces nest. ``//`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re

from .errors import DefinitionError

_OPEN = {"(": ")", "{": "}", "[": "]"}


def strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        quote = None
        for i, ch in enumerate(line):
            if quote:
                if ch == quote and line[i - 1] != "\\":
                    quote = None
            elif ch in "'\"":
                quote = ch
            elif line.startswith("//", i):
                line = line[:i]
                break
        out.append(line)
    return "\n".join(out)


def split_top(text: str, seps: str = ";") -> list[str]:
    """Split on any of ``seps`` where nesting depth is zero; drops empty parts."""
    parts, buf, stack, quote = [], [], [], None
    i = 0
    while i < len(text):
        ch = text[i]
        if quote:
            buf.append(ch)
            if ch == "\\" and i + 1 < len(text):
                buf.append(text[i + 1])
                i += 1
            elif ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
            buf.append(ch)
        elif ch in _OPEN:
            stack.append(_OPEN[ch])
            buf.append(ch)
        elif stack and ch == stack[-1]:
            stack.pop()
            buf.append(ch)
        elif ch in ")}]":
            raise DefinitionError(f"unbalanced {ch!r} in {text.strip()[:60]!r}")
        elif ch in seps and not stack:
            parts.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
        i += 1
    if quote or stack:
        raise DefinitionError(f"unterminated quote or bracket in {text.strip()[:60]!r}")
    parts.append("".join(buf).strip())
    return [p for p in parts if p]


def matching_brace(text: str, start: int) -> int:
    """Index of the ``}`` closing the ``{`` at ``start``."""
    depth, quote = 0, None
    i = start
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 1
            elif ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    raise DefinitionError("missing closing '}'")


_HEAD = re.compile(r"\s*(\w+)\s+([^\s{]+)\s*\{")


def parse_blocks(text: str, keyword: str) -> list[tuple[str, str, str]]:
    """Return ``(name, body, raw_block)`` for each ``<keyword> <name> { ... }``."""
    text = strip_comments(text)
    blocks = []
    pos = 0
    while text[pos:].strip():
        m = _HEAD.match(text, pos)
        if m is None or m.group(1) != keyword:
            snippet = text[pos:].strip()[:40]
            raise DefinitionError(f"expected '{keyword} <id> {{', found {snippet!r}")
        end = matching_brace(text, m.end() - 1)
        blocks.append((m.group(2), text[m.end():end], text[m.start():end + 1].strip()))
        pos = end + 1
    return blocks


def sub_block(item: str, keyword: str) -> str | None:
    """Body of ``keyword { ... }`` if ``item`` has that form."""
    m = re.match(rf"{keyword}\s*\{{", item)
    if m is None:
        return None
    end = matching_brace(item, m.end() - 1)
    if item[end + 1:].strip():
        raise DefinitionError(f"trailing text after {keyword} block: {item[end + 1:].strip()!r}")
    return item[m.end():end]


def key_value(item: str) -> tuple[str, str]:
    key, sep, value = item.partition(":")
    if not sep:
        raise DefinitionError(f"expected 'name: value', got {item!r}")
    return key.strip(), value.strip()
