"""Key-value text configuration files.

Format: one ``key = value`` pair per line; ``#`` starts a comment.  Values
are parsed as bool / int / float / comma-separated list / string, in that
order.  Pairs like ``snr_range = -2, 8`` become tuples of numbers.
"""

from .errors import ConfigError


def _parse_scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_kv_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if "," in value:
            out[key] = tuple(_parse_scalar(v) for v in value.split(","))
        else:
            out[key] = _parse_scalar(value)
    return out


def parse_kv_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_kv_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_kv(mapping):
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (tuple, list)):
            lines.append(f"{key} = " + ", ".join(str(v) for v in value))
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_kv_file(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(mapping))
