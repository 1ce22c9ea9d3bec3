"""Binary checkpoint container and atomic file writes.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | JSON header | raw <f8 arrays

The header lists every array with its shape and byte offset into the data
section, a format version, and the sha256 of the data section. Loading
verifies magic, version, sizes and checksum before building anything.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LINRZR\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write to a temp file in the target directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class Checkpoint:
    kind: str
    model: dict
    arrays: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries = []
        chunks = []
        offset = 0
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f8")
            raw = arr.tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        body = b"".join(chunks)
        header = {
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "model": self.model,
            "arrays": entries,
            "config": self.config,
            "rng": self.rng,
            "extra": self.extra,
            "data_bytes": len(body),
            "sha256": hashlib.sha256(body).hexdigest(),
        }
        head = canonical_json(header).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Checkpoint":
        if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])
        start = len(MAGIC) + 8
        if start + hlen > len(blob):
            raise CheckpointError(f"{source}: truncated header")
        try:
            header = json.loads(blob[start: start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: corrupt header ({exc})") from None
        version = header.get("version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: format version {version!r} is not supported "
                                  f"(expected {FORMAT_VERSION})")
        body = blob[start + hlen:]
        if len(body) != header["data_bytes"]:
            raise CheckpointError(f"{source}: checksum mismatch (data section is {len(body)} bytes, "
                                  f"header says {header['data_bytes']})")
        if hashlib.sha256(body).hexdigest() != header["sha256"]:
            raise CheckpointError(f"{source}: checksum mismatch")
        arrays = {}
        for e in header["arrays"]:
            raw = body[e["offset"]: e["offset"] + e["nbytes"]]
            arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        return cls(header["kind"], header["model"], arrays, header["config"], header["rng"], header["extra"])

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read {path}: {exc.strerror}") from exc
        return cls.from_bytes(blob, str(path))


# model <-> checkpoint ----------------------------------------------------------

def _model_class(kind: str):
    from .flow import FlowModel
    from .ign import IGNModel
    from .style import StyleLinearizer

    classes = {"flow": FlowModel, "ign": IGNModel, "linearizer": StyleLinearizer}
    if kind not in classes:
        raise CheckpointError(f"checkpoint holds a {kind!r}, not a model")
    return classes[kind]


def model_kind(model) -> str:
    from .flow import FlowModel
    from .ign import IGNModel
    from .style import StyleLinearizer

    for kind, cls in (("flow", FlowModel), ("ign", IGNModel), ("linearizer", StyleLinearizer)):
        if isinstance(model, cls):
            return kind
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(model, path: str | Path, config: dict | None = None, rng=None,
                    extra: dict | None = None) -> Checkpoint:
    ckpt = Checkpoint(model_kind(model), model.config(), model.state_dict(), config or {},
                      rng.state() if rng is not None else {},
                      {"map_checksum": model.g.fingerprint(), **(extra or {})})
    ckpt.save(path)
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint, expect: str | None = None):
    if expect is not None and ckpt.kind != expect:
        raise CheckpointError(f"expected a {expect!r} checkpoint, found {ckpt.kind!r}")
    model = _model_class(ckpt.kind).from_config(ckpt.model)
    try:
        model.load_state_dict(ckpt.arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the model: {exc}") from exc
    if model.g.fingerprint() != ckpt.extra.get("map_checksum", model.g.fingerprint()):
        raise CheckpointError("map checksum mismatch after loading")
    return model


def load_checkpoint(path: str | Path, expect: str | None = None):
    return model_from_checkpoint(Checkpoint.load(path), expect)


def save_operator(op, path: str | Path, config: dict | None = None) -> Checkpoint:
    """Persist a collapsed operator B together with its provenance."""
    ckpt = Checkpoint("collapsed", {}, {"B": op.matrix}, config or {}, {}, op.provenance())
    ckpt.save(path)
    return ckpt


def load_operator(path: str | Path):
    from .flow import CollapsedOperator

    ckpt = Checkpoint.load(path)
    if ckpt.kind != "collapsed":
        raise CheckpointError(f"{path}: expected a collapsed operator, found {ckpt.kind!r}")
    e = ckpt.extra
    return CollapsedOperator(ckpt.arrays["B"], e["scheme"], e["steps"], e["model_checksum"])
