"""Versioned binary checkpoints: a text header plus little-endian f64 blocks.

Layout::

    KGCAST-CKPT\n
    u64 little-endian header length
    header (UTF-8): format_version, locations, config text, block table
    payload: each block's values as <f8 in block-table order
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .config import ForecastConfig
from .errors import CompatibilityError, ConfigurationError, IntegrityError

MAGIC = b"KGCAST-CKPT\n"
FORMAT_VERSION = 1


def _header(model):
    state = model.state_dict()
    lines = [f"format_version = {FORMAT_VERSION}", "[locations]"]
    lines += list(model.locations)
    lines.append("[config]")
    lines += model.config.to_text().splitlines()
    lines.append("[blocks]")
    for name in sorted(state):
        shape = ",".join(str(s) for s in state[name].shape)
        lines.append(f"{name} {shape}")
    return "\n".join(lines) + "\n", state


def dumps(model):
    header, state = _header(model)
    for name, arr in state.items():
        if not np.all(np.isfinite(arr)):
            raise IntegrityError(f"refusing to save non-finite values in {name}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    raw = header.encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    for name in sorted(state):
        buf.write(np.ascontiguousarray(state[name], dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def _sections(text):
    head, sections, current = [], {}, None
    for line in text.splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            head.append(line)
        else:
            sections[current].append(line)
    return head, sections


def loads(data):
    from .model import ForecastModel

    if not data.startswith(MAGIC):
        raise IntegrityError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise IntegrityError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    try:
        text = data[pos : pos + n].decode("utf-8")
    except UnicodeDecodeError:
        raise IntegrityError("checkpoint header is not UTF-8") from None
    pos += n
    head, sections = _sections(text)
    version = None
    for line in head:
        key, _, value = line.partition("=")
        if key.strip() == "format_version":
            version = value.strip()
    if version != str(FORMAT_VERSION):
        raise CompatibilityError(f"checkpoint format version {version!r}, this build reads {FORMAT_VERSION}")
    for name in ("locations", "config", "blocks"):
        if name not in sections:
            raise IntegrityError(f"checkpoint header lacks [{name}]")
    try:
        config = ForecastConfig.from_text("\n".join(sections["config"]))
    except ConfigurationError as exc:
        raise IntegrityError(f"checkpoint config: {exc}") from None
    blocks = []
    for line in sections["blocks"]:
        name, _, shape = line.rpartition(" ")
        try:
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        except ValueError:
            raise IntegrityError(f"bad shape field for block {name!r}: {shape!r}") from None
        blocks.append((name, dims))
    model = ForecastModel(config, sections["locations"], np.random.default_rng(0))
    expected = model.expected_shapes()
    names = [b[0] for b in blocks]
    if sorted(names) != sorted(expected):
        raise IntegrityError(f"block names {sorted(set(names) ^ set(expected))} do not match the config")
    state = {}
    for name, dims in blocks:
        if dims != expected[name]:
            raise IntegrityError(f"block {name}: shape {dims} but config implies {expected[name]}")
        size = int(np.prod(dims, dtype=np.int64)) * 8
        if pos + size > len(data):
            raise IntegrityError(f"payload truncated in block {name}")
        state[name] = np.frombuffer(data[pos : pos + size], dtype="<f8").astype(np.float64).reshape(dims)
        pos += size
    if pos != len(data):
        raise IntegrityError(f"{len(data) - pos} trailing bytes after the last block")
    model.load_state_dict(state)
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
