"""
Model Store Module.
Binary model files and resumable training checkpoints. All integers and
floats are little-endian; every write goes through a temp file + rename.

ModelFile (version 1):

    offset 0   4s   magic b"DRBN"
    offset 4   u32  format version
    offset 8   u64  payload length in bytes
    offset 16  ...  payload
    trailer    u32  CRC32 of the payload

    payload:
      u32  layer count L (≥ 1)
      u32  input rank R, then R × u32 input dims
      L × layer:
        u8   kind (0 dense, 1 conv)
        dense: u32 D, u32 P                        then f64 W[D·P], b[D], c[P]
        conv:  u32 H, W, Cin, K, Nw, stride        then f64 W[K·Nw·Nw·Cin], b[1], c[K]
      arrays are row-major in the order W, b, c.

    Beyond magic, version, layers and checksum, the header carries the payload
    length (truncation is detected before the checksum is read) and the
    payload carries the input dims (flat and image models rebuild alike).

Checkpoint (version 1):

    4s magic b"DRCK", u32 version, u32 section count,
    sections: 4s tag, u64 length, bytes;  trailer u32 CRC32 of all section bytes.

    MODL  a complete ModelFile
    PCDS  u64 t, u32 N, u32 R, R × u32 dims, f64 particles, u32 len, rng state JSON
    OPTM  u32 L, per layer: f64 lr, beta1, beta2, epsilon, u64 t, f64 m[W,b,c], v[W,b,c]
    TRST  JSON {step, epoch, batch_index, batch_size, seed, data_rng}
"""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from drbn.core.conv_rbm import ConvRbmParams
from drbn.core.errors import (
    BadMagicError,
    ChecksumError,
    MissingSectionError,
    ModelFileError,
    ShapeError,
    ShapeInconsistencyError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from drbn.core.math_core import default_dtype, rng_from_state
from drbn.core.network import Drbn, LayerParams
from drbn.core.optim import AdamState
from drbn.core.rbm import RbmParams
from drbn.core.trainer import PcdState, TrainingState
from drbn.utils.file_utils import atomic_write_bytes
from drbn.utils.logger import logger

MODEL_MAGIC = b"DRBN"
CHECKPOINT_MAGIC = b"DRCK"
FORMAT_VERSION = 1
KIND_DENSE = 0
KIND_CONV = 1

_HEADER = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")
_F64 = np.dtype("<f8")
REQUIRED_SECTIONS = ("MODL", "PCDS", "OPTM", "TRST")


# ─── Byte Cursor ──────────────────────────────────────────────────────────────
@dataclass
class _Reader:
    """Sequential little-endian reader that turns overruns into TruncatedFileError."""
    data: bytes
    pos: int = 0
    what: str = "payload"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.what} ends at byte {len(self.data)}, needed {n} more bytes at {self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def u32(self) -> int:
        return self.unpack("I")[0]

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * _F64.itemsize)
        return np.frombuffer(raw, dtype=_F64).reshape(shape).copy()

    def done(self) -> bool:
        return self.pos == len(self.data)


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=_F64).tobytes()


# ─── Model Payload ────────────────────────────────────────────────────────────
def _encode_layer(layer: LayerParams) -> bytes:
    if isinstance(layer, RbmParams):
        header = struct.pack("<BII", KIND_DENSE, layer.n_visible, layer.n_hidden)
    elif isinstance(layer, ConvRbmParams):
        h, w, cin = layer.input_shape
        header = struct.pack(
            "<BIIIIII", KIND_CONV, h, w, cin, layer.n_filters, layer.filter_size, layer.stride
        )
    else:
        raise ModelFileError(f"cannot serialize layer of type {type(layer).__name__}")
    return header + _f64(layer.W) + _f64(layer.b) + _f64(layer.c)


def _encode_payload(net: Drbn) -> bytes:
    if not net.layers:
        raise ModelFileError("refusing to save a network without layers")
    parts = [struct.pack("<I", net.n_layers), struct.pack("<I", len(net.input_shape))]
    parts.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    parts.extend(_encode_layer(layer) for layer in net.layers)
    return b"".join(parts)


def _decode_layer(reader: _Reader, index: int, dtype: np.dtype) -> LayerParams:
    (kind,) = reader.unpack("B")
    if kind == KIND_DENSE:
        n_visible, n_hidden = reader.unpack("II")
        W = reader.array((n_visible, n_hidden))
        b = reader.array((n_visible,))
        c = reader.array((n_hidden,))
        return RbmParams(W=W.astype(dtype, copy=False), b=b.astype(dtype, copy=False), c=c.astype(dtype, copy=False))
    if kind == KIND_CONV:
        h, w, cin, k, nw, stride = reader.unpack("IIIIII")
        W = reader.array((k, nw, nw, cin))
        b = reader.array(())
        c = reader.array((k,))
        return ConvRbmParams(
            W=W.astype(dtype, copy=False), b=b.astype(dtype, copy=False), c=c.astype(dtype, copy=False),
            input_shape=(h, w, cin), stride=stride,
        )
    raise ShapeInconsistencyError(f"layer {index}: unknown kind tag {kind}")


def _decode_payload(payload: bytes) -> Drbn:
    reader = _Reader(payload)
    dtype = default_dtype()
    n_layers = reader.u32()
    if n_layers < 1:
        raise ShapeInconsistencyError("model file declares zero layers")
    rank = reader.u32()
    input_shape = reader.unpack(f"{rank}I")
    try:
        layers = [_decode_layer(reader, i, dtype) for i in range(n_layers)]
        if not reader.done():
            raise ShapeInconsistencyError(
                f"{len(payload) - reader.pos} bytes left after {n_layers} layers"
            )
        return Drbn(layers=layers, input_shape=input_shape)
    except ShapeError as exc:
        raise ShapeInconsistencyError(str(exc)) from exc


def encode_model(net: Drbn) -> bytes:
    """Full ModelFile bytes for `net`."""
    payload = _encode_payload(net)
    return _HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, len(payload)) + payload + _CRC.pack(zlib.crc32(payload))


def decode_model(data: bytes, source: str = "<bytes>") -> Drbn:
    """Validate and parse ModelFile bytes; each failure mode has its own error type."""
    if len(data) < len(MODEL_MAGIC):
        raise TruncatedFileError(f"{source}: {len(data)} bytes is shorter than the magic")
    if data[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{source}: header truncated at {len(data)} bytes")
    _, version, length = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: format version {version}, supported {FORMAT_VERSION}")
    expected = _HEADER.size + length + _CRC.size
    if len(data) < expected:
        raise TruncatedFileError(f"{source}: {len(data)} bytes, header promises {expected}")
    if len(data) > expected:
        raise ShapeInconsistencyError(f"{source}: {len(data) - expected} trailing bytes after checksum")
    payload = data[_HEADER.size:_HEADER.size + length]
    (stored,) = _CRC.unpack_from(data, _HEADER.size + length)
    actual = zlib.crc32(payload)
    if stored != actual:
        raise ChecksumError(f"{source}: checksum 0x{stored:08x} does not match payload 0x{actual:08x}")
    return _decode_payload(payload)


def describe_layout(net: Drbn) -> str:
    """The byte layout `save` produces for `net`, as one line."""
    payload = len(_encode_payload(net))
    return (
        f"ModelFile v{FORMAT_VERSION}: {_HEADER.size}-byte header (magic, u32 version, u64 payload length), "
        f"{payload:,}-byte payload (layer count, input rank + dims, layers), u32 CRC32 trailer"
    )


def save(net: Drbn, path: Path) -> Path:
    """Write `net` as a ModelFile, atomically."""
    data = encode_model(net)
    atomic_write_bytes(Path(path), data)
    logger.info(f"Saved {net.n_layers}-layer model ({len(data)} bytes) to {path}")
    return Path(path)


def load(path: Path) -> Drbn:
    net = decode_model(Path(path).read_bytes(), str(path))
    logger.info(f"Loaded {net.n_layers}-layer model from {path}")
    return net


# ─── Checkpoint Sections ──────────────────────────────────────────────────────
def encode_sections(sections: dict[str, bytes]) -> bytes:
    body = b"".join(
        struct.pack("<4sQ", tag.encode("ascii"), len(blob)) + blob for tag, blob in sections.items()
    )
    head = struct.pack("<4sII", CHECKPOINT_MAGIC, FORMAT_VERSION, len(sections))
    return head + body + _CRC.pack(zlib.crc32(body))


def decode_sections(data: bytes, source: str = "<bytes>") -> dict[str, bytes]:
    if len(data) < 4:
        raise TruncatedFileError(f"{source}: {len(data)} bytes is shorter than the magic")
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    reader = _Reader(data, 4, what=source)
    version, count = reader.unpack("II")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: checkpoint version {version}, supported {FORMAT_VERSION}")
    body_start = reader.pos
    sections: dict[str, bytes] = {}
    for _ in range(count):
        tag, length = reader.unpack("4sQ")
        sections[tag.decode("ascii", errors="replace")] = reader.take(length)
    body_end = reader.pos
    (stored,) = reader.unpack("I")
    if not reader.done():
        raise ShapeInconsistencyError(f"{source}: trailing bytes after checkpoint checksum")
    actual = zlib.crc32(data[body_start:body_end])
    if stored != actual:
        raise ChecksumError(f"{source}: checksum 0x{stored:08x} does not match sections 0x{actual:08x}")
    return sections


def read_sections(path: Path) -> dict[str, bytes]:
    return decode_sections(Path(path).read_bytes(), str(path))


def write_sections(path: Path, sections: dict[str, bytes]) -> Path:
    return atomic_write_bytes(Path(path), encode_sections(sections))


def _rng_json(rng: np.random.Generator) -> bytes:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")


def _encode_pcd(pcd: PcdState) -> bytes:
    particles = pcd.particles
    state = _rng_json(pcd.rng)
    return (
        struct.pack("<QII", pcd.t, particles.shape[0], particles.ndim - 1)
        + struct.pack(f"<{particles.ndim - 1}I", *particles.shape[1:])
        + _f64(particles)
        + struct.pack("<I", len(state)) + state
    )


def _decode_pcd(blob: bytes, dtype: np.dtype) -> PcdState:
    reader = _Reader(blob, what="PCDS section")
    t, n, rank = reader.unpack("QII")
    dims = reader.unpack(f"{rank}I")
    particles = reader.array((n,) + tuple(dims)).astype(dtype, copy=False)
    (length,) = reader.unpack("I")
    state = json.loads(reader.take(length).decode("utf-8"))
    return PcdState(particles=particles, rng=rng_from_state(state), t=t)


def _encode_optimizers(optimizers: list[AdamState], net: Drbn) -> bytes:
    parts = [struct.pack("<I", len(optimizers))]
    for opt, layer in zip(optimizers, net.layers):
        parts.append(struct.pack("<ddddQ", opt.lr, opt.beta1, opt.beta2, opt.epsilon, opt.t))
        for moments in (opt.m, opt.v):
            for name in layer.PARAM_NAMES:
                parts.append(_f64(moments[name]))
    return b"".join(parts)


def _decode_optimizers(blob: bytes, net: Drbn) -> list[AdamState]:
    reader = _Reader(blob, what="OPTM section")
    count = reader.u32()
    if count != net.n_layers:
        raise ShapeInconsistencyError(f"{count} optimizer states for {net.n_layers} layers")
    optimizers = []
    for layer in net.layers:
        lr, beta1, beta2, epsilon, t = reader.unpack("ddddQ")
        shapes = {name: getattr(layer, name).shape for name in layer.PARAM_NAMES}
        m = {name: reader.array(shapes[name]) for name in layer.PARAM_NAMES}
        v = {name: reader.array(shapes[name]) for name in layer.PARAM_NAMES}
        optimizers.append(AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, t=t, m=m, v=v))
    if not reader.done():
        raise ShapeInconsistencyError("unexpected bytes after optimizer states")
    return optimizers


def encode_checkpoint(state: TrainingState) -> bytes:
    progress = {
        "step": state.step,
        "epoch": state.epoch,
        "batch_index": state.batch_index,
        "batch_size": state.batch_size,
        "seed": state.seed,
        "data_rng": state.rng.bit_generator.state,
    }
    return encode_sections({
        "MODL": encode_model(state.net),
        "PCDS": _encode_pcd(state.pcd),
        "OPTM": _encode_optimizers(state.optimizers, state.net),
        "TRST": json.dumps(progress, sort_keys=True).encode("utf-8"),
    })


def checkpoint(state: TrainingState, path: Path) -> Path:
    """Persist everything `fit` needs to continue bit-for-bit."""
    atomic_write_bytes(Path(path), encode_checkpoint(state))
    logger.info(f"Checkpoint at step {state.step} (epoch {state.epoch}) written to {path}")
    return Path(path)


def restore(path: Path) -> TrainingState:
    sections = read_sections(path)
    for tag in REQUIRED_SECTIONS:
        if tag not in sections:
            raise MissingSectionError(f"{path}: checkpoint has no {tag} section")
    net = decode_model(sections["MODL"], f"{path}:MODL")
    dtype = net.layers[0].W.dtype
    pcd = _decode_pcd(sections["PCDS"], dtype)
    if tuple(pcd.particles.shape[1:]) != net.input_shape:
        raise ShapeInconsistencyError(
            f"particles of shape {pcd.particles.shape[1:]} do not match input {net.input_shape}"
        )
    optimizers = _decode_optimizers(sections["OPTM"], net)
    progress = json.loads(sections["TRST"].decode("utf-8"))
    state = TrainingState(
        net=net,
        pcd=pcd,
        optimizers=optimizers,
        rng=rng_from_state(progress["data_rng"]),
        seed=int(progress["seed"]),
        batch_size=progress.get("batch_size"),
        epoch=int(progress["epoch"]),
        batch_index=int(progress["batch_index"]),
        step=int(progress["step"]),
    )
    logger.info(f"Restored checkpoint {path} at step {state.step} (epoch {state.epoch})")
    return state

