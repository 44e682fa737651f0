"""Plain-text `key = value` configuration format.

One assignment per line, `#` starts a comment, blank lines ignored.
Keys are case-sensitive; later assignments override earlier ones.
Shared by scheme-config serialization and the command line tool.
"""

from __future__ import annotations


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines into a dict; malformed lines raise."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_kv(pairs: dict[str, str]) -> str:
    """Render a dict as `key = value` lines in insertion order."""
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")
