"""Dataset CSV files and binary model ("TIPM") / projection ("TIPP") checkpoints."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from ..ckks.errors import MalformedFrame, VersionMismatch
from .kfac import LayerProjection, ProjectionOperator
from .model import Activation, Dataset, Dense, Head, Model

CHECKPOINT_VERSION = 1
_ACTS = list(Activation)
_HEADS = list(Head)


def read_dataset(path) -> Dataset:
    """CSV with a header row: feature columns, then the label column last."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: missing header row")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    if not body:
        return Dataset(np.zeros((0, len(header) - 1)), np.zeros(0))
    try:
        arr = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric cell ({exc})") from None
    if arr.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the header width")
    return Dataset(arr[:, :-1], arr[:, -1])


def write_dataset(path, data: Dataset, feature_names=None) -> None:
    d = data.X.shape[1]
    names = list(feature_names) if feature_names else [f"x{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["label"])
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


class _Buf:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise MalformedFrame("truncated checkpoint")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def floats(self, count: int) -> np.ndarray:
        if self.pos + 8 * count > len(self.data):
            raise MalformedFrame("truncated checkpoint")
        out = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(float)
        self.pos += 8 * count
        return out


def _check_head(buf: _Buf, magic: bytes):
    got, version = buf.unpack("<4sH")
    if got != magic:
        raise MalformedFrame(f"bad magic {got!r}, expected {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}")


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def model_to_bytes(model: Model) -> bytes:
    out = [struct.pack("<4sHBBBdI", b"TIPM", CHECKPOINT_VERSION, _ACTS.index(model.activation),
                       _HEADS.index(model.head), int(model.theta_hat), model.l2, len(model.layers))]
    for L in model.layers:
        out.append(struct.pack("<II", L.d_out, L.d_in))
        out.append(_f8(L.W) + _f8(L.b))
    return b"".join(out)


def model_from_bytes(data: bytes) -> Model:
    buf = _Buf(data)
    _check_head(buf, b"TIPM")
    act, head, hat, l2, nlayers = buf.unpack("<BBBdI")
    if act >= len(_ACTS) or head >= len(_HEADS) or nlayers == 0:
        raise MalformedFrame("bad model header")
    layers = []
    for _ in range(nlayers):
        d_out, d_in = buf.unpack("<II")
        W = buf.floats(d_out * d_in).reshape(d_out, d_in)
        layers.append(Dense(W, buf.floats(d_out)))
    if buf.pos != len(data):
        raise MalformedFrame("trailing bytes in model checkpoint")
    return Model(tuple(layers), _ACTS[act], _HEADS[head], bool(hat), l2)


def projection_to_bytes(proj: ProjectionOperator) -> bytes:
    out = [struct.pack("<4sHI", b"TIPP", CHECKPOINT_VERSION, len(proj.layers))]
    for L in proj.layers:
        k_in, d_in = L.p_in.shape
        k_out, d_out = L.p_out.shape
        out.append(struct.pack("<IIII", k_in, d_in, k_out, d_out))
        out.append(_f8(L.p_in) + _f8(L.p_out) + _f8(L.mu_in) + _f8(L.mu_out))
    return b"".join(out)


def projection_from_bytes(data: bytes) -> ProjectionOperator:
    buf = _Buf(data)
    _check_head(buf, b"TIPP")
    (nlayers,) = buf.unpack("<I")
    layers = []
    for _ in range(nlayers):
        k_in, d_in, k_out, d_out = buf.unpack("<IIII")
        p_in = buf.floats(k_in * d_in).reshape(k_in, d_in)
        p_out = buf.floats(k_out * d_out).reshape(k_out, d_out)
        layers.append(LayerProjection(p_in, p_out, buf.floats(k_in), buf.floats(k_out)))
    if buf.pos != len(data):
        raise MalformedFrame("trailing bytes in projection checkpoint")
    return ProjectionOperator(tuple(layers))


def save_model(path, model: Model) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def save_projection(path, proj: ProjectionOperator) -> None:
    Path(path).write_bytes(projection_to_bytes(proj))


def load_projection(path) -> ProjectionOperator:
    return projection_from_bytes(Path(path).read_bytes())
