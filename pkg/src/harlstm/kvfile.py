"""Line-oriented ``key = value`` files with ``#`` comments (UTF-8)."""
from __future__ import annotations

from pathlib import Path


class KVSyntaxError(ValueError):
    pass


def parse_kv(text, source="<string>"):
    """Ordered dict of raw string values. Duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise KVSyntaxError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KVSyntaxError(f"{source}:{lineno}: empty key")
        if key in out:
            raise KVSyntaxError(f"{source}:{lineno}: duplicate key {key!r}")
        # inline comments only when separated by whitespace, so '#' can appear in values
        value = value.split(" #", 1)[0].strip()
        out[key] = value
    return out


def read_kv(path):
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(items, header=None):
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in items]
    return "\n".join(lines) + "\n"
