"""Flat key=value config files and their stable hash.

One `key=value` pair per line; blank lines and lines starting with '#'
are ignored. Values are parsed as int, then float, then bool literals
(true/false), falling back to plain strings. The hash sorts lines by
key first, so field order never changes it.
"""

import hashlib


def parse_value(s):
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    if s.lower() == "true":
        return True
    if s.lower() == "false":
        return False
    return s


def parse_config(text):
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        cfg[key] = parse_value(value)
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg):
    return "".join(f"{k}={format_value(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg):
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()
