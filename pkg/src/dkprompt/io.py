"""File formats: box annotations, binary PPM/PGM images and flat
``key = value`` run configurations."""

from __future__ import annotations

import dataclasses
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BBox
from .pipeline import ModelConfig

SEED_ENV = "DKPROMPT_SEED"


class AnnotationError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def atomic_write_bytes(path, data):
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- annotations ------------------------------------------------------

_SEP = re.compile(r"\s*[,\t]\s*")


def parse_annotation_line(line, lineno=0):
    fields = _SEP.split(line.strip())
    if len(fields) != 4:
        raise AnnotationError(f"line {lineno}: expected 4 values x,y,w,h, got {len(fields)}: {line.strip()!r}")
    try:
        x, y, w, h = (float(v) for v in fields)
    except ValueError:
        raise AnnotationError(f"line {lineno}: non-numeric value in {line.strip()!r}") from None
    if not all(np.isfinite((x, y, w, h))):
        raise AnnotationError(f"line {lineno}: non-finite value in {line.strip()!r}")
    if w <= 0 or h <= 0:
        raise AnnotationError(f"line {lineno}: box size must be positive, got w={w:g} h={h:g}")
    return BBox(x, y, w, h)


def parse_annotation_text(text):
    return [parse_annotation_line(line, i)
            for i, line in enumerate(text.splitlines(), start=1) if line.strip()]


def parse_annotation_file(path):
    """One box per nonempty line; errors name the 1-based line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationError(f"{path}: {exc.strerror}") from None
    try:
        return parse_annotation_text(text)
    except AnnotationError as exc:
        raise AnnotationError(f"{path}: {exc}") from None


def format_number(v):
    """Shortest round-tripping decimal; integral values print without a point."""
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)


def format_annotations(boxes):
    return "".join(",".join(format_number(v) for v in b.as_tuple()) + "\n" for b in boxes)


def write_annotation_file(path, boxes):
    atomic_write_text(path, format_annotations(boxes))


# -- images -----------------------------------------------------------

def _header_tokens(data):
    """Magic, width, height, maxval and the payload offset of a P5/P6 file."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ImageFormatError("header must end with a single whitespace byte")
    return tokens, pos + 1


def decode_pnm(data):
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {data[:2]!r}; expected P5 or P6")
    tokens, offset = _header_tokens(data)
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"non-integer header field in {tokens[1:]!r}") from None
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"bad image size {w}x{h}")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"maxval {maxval} outside 1..65535")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = w * h * channels * dtype.itemsize
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise ImageFormatError(f"truncated payload: {len(payload)} of {expected} bytes")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    img = raw.reshape(h, w, channels).transpose(2, 0, 1) / maxval
    if channels == 1:
        img = np.repeat(img, 3, axis=0)
    return np.ascontiguousarray(img)


def load_image(path):
    """Binary PPM/PGM as a (3, H, W) float tensor in [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc.strerror}") from None
    try:
        return decode_pnm(data)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def encode_pnm(img, maxval=255):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"image must be (1|3, H, W), got {img.shape}")
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} outside 1..65535")
    c, h, w = img.shape
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    body = q.transpose(1, 2, 0).astype(dtype).tobytes()
    magic = "P6" if c == 3 else "P5"
    return f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii") + body


def save_image(path, img, maxval=255):
    atomic_write_bytes(path, encode_pnm(img, maxval))


# -- run configuration ------------------------------------------------

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}


@dataclass(frozen=True)
class RunConfig:
    """Model settings plus the paths and sizes a CLI run needs."""

    model: ModelConfig = field(default_factory=ModelConfig)
    gt: str | None = None
    pred: str | None = None
    out: str | None = None
    frame: str | None = None
    frames: int = 20

    def __post_init__(self):
        if self.frames < 2:
            raise ConfigError(f"frames must be at least 2, got {self.frames}")


_IO_KEYS = ("gt", "pred", "out", "frame", "frames")


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_blocks(text):
    low = text.lower()
    if low == "all":
        return None
    if low in ("none", ""):
        return ()
    return tuple(int(v) for v in text.split(","))


def _model_value(name, text):
    if name == "inject_after":
        return _parse_blocks(text)
    default = _MODEL_FIELDS[name].default
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_run_config(text, source="<config>"):
    model, run = {}, {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key in _MODEL_FIELDS:
                model[key] = _model_value(key, value)
            elif key == "frames":
                run[key] = int(value)
            elif key in _IO_KEYS:
                run[key] = value or None
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        return RunConfig(ModelConfig(**model), **run)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_run_config(cfg):
    """Every key written explicitly, in declaration order."""
    lines = []
    for name in _MODEL_FIELDS:
        v = getattr(cfg.model, name)
        if name == "inject_after":
            text = "all" if v is None else (",".join(str(i) for i in v) or "none")
        else:
            text = _format_value(v)
        lines.append(f"{name} = {text}")
    for key in _IO_KEYS:
        v = getattr(cfg, key)
        if v is not None:
            lines.append(f"{key} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def apply_env(cfg, environ=None):
    """Apply the seed override from ``DKPROMPT_SEED`` if set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return dataclasses.replace(cfg, model=cfg.model.replace(seed=seed))


def load_run_config(path=None, environ=None):
    if path is None:
        cfg = RunConfig()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        cfg = parse_run_config(text, str(path))
    return apply_env(cfg, environ)
