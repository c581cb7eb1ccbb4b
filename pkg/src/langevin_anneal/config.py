"""Flat ``key = value`` configuration files with dotted section keys.

::

    # comment
    experiment = invariance
    schedule.A = 1.0
    run.record_at = 0.25, 0.5, 1.0

Values are parsed as int, float, bool (``true``/``false``), a
comma-separated list of those, or left as strings.
"""
from pathlib import Path


class ConfigError(ValueError):
    """Unparseable or inconsistent configuration."""


def _scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "'\"":
        return t[1:-1]
    return t


def parse_value(text):
    if "," in text:
        return [_scalar(p) for p in text.split(",") if p.strip()]
    return _scalar(text)


def parse_text(text, source="<string>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text(), str(p))


def section(flat, prefix):
    """Sub-dictionary of keys under ``prefix.`` with the prefix stripped."""
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}


def dumps(flat):
    """Canonical text form (sorted keys, ``repr`` floats)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return ", ".join(fmt(x) for x in v)
        if v is None:
            return "none"
        if isinstance(v, str) and (_scalar(v) != v or "," in v):
            return f'"{v}"'
        return repr(v) if isinstance(v, float) else str(v)
    return "".join(f"{k} = {fmt(flat[k])}\n" for k in sorted(flat))
