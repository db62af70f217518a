"""Bit-exact binary serialization.

Model files (".gq") hold quantized tensors; tensor containers (".gqt")
hold plain named f32 arrays for weights and calibration data. Everything
is little-endian; bit fields pack LSB-first; code rows and metadata rows
are padded to whole bytes so the byte layout matches the quantizer's
storage accounting exactly. See docs/FORMAT.md for a hex walkthrough.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError
from .lattice import lattice_from_id, lattice_id
from .quantizer import (
    QuantConfig,
    QuantizedTensor,
    macro_spans,
    micro_layout,
    storage_accounting,
)

MODEL_MAGIC = b"GOQT"
TENSOR_MAGIC = b"GQTL"
FORMAT_VERSION = 1

_MODE_IDS = {"geo": 0, "ref": 1}
_MODES = {v: k for k, v in _MODE_IDS.items()}
_SCOPE_IDS = {"channel": 0, "macroblock": 1}
_SCOPES = {v: k for k, v in _SCOPE_IDS.items()}

CONFIG_STRUCT = struct.Struct("<HHBBBBffB")  # N G K mode b_a b_c alpha lam scope


@dataclass
class ModelFile:
    tensors: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"unexpected EOF: needed {n} bytes at offset {self.pos}",
                code="eof",
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))


def _pack_bit_rows(values, bit_width):
    """Pack [d_out, n] small ints into per-row byte-padded LSB-first rows."""
    values = np.asarray(values, dtype=np.uint8)
    bits = (values[..., None] >> np.arange(bit_width, dtype=np.uint8)) & 1
    flat = bits.reshape(values.shape[0], -1)
    return np.packbits(flat, axis=-1, bitorder="little")


def _unpack_bit_rows(packed, bit_width, n_cols):
    bits = np.unpackbits(packed, axis=-1, bitorder="little",
                         count=n_cols * bit_width)
    bits = bits.reshape(packed.shape[0], n_cols, bit_width)
    weights = (1 << np.arange(bit_width, dtype=np.uint16))
    return (bits.astype(np.uint16) * weights).sum(axis=-1)


def _micro_bit_matrix(qt):
    """[d_out, n_micro, 4 + G/2] bit matrix: stride-1 nibble, then signs."""
    G = qt.config.micro
    n_micro = qt.n_micro
    bits_per = 4 + G // 2
    out = np.zeros((qt.d_out, n_micro, bits_per), dtype=np.uint8)
    if qt.config.k == 2:
        stride_field = (qt.strides.astype(np.uint16) - 1).astype(np.uint8)
        for bit in range(4):
            out[:, :, bit] = (stride_field >> bit) & 1
        out[:, :, 4:] = qt.sign_bits
    return out


def _write_record(parts, name, qt):
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise DataError(f"tensor name too long: {name!r}")
    cfg = qt.config
    parts.append(struct.pack("<H", len(name_bytes)))
    parts.append(name_bytes)
    parts.append(struct.pack("<II", qt.d_out, qt.d_in))
    parts.append(struct.pack("<B", lattice_id(cfg.lattice)))
    parts.append(
        CONFIG_STRUCT.pack(
            cfg.macro, cfg.micro, cfg.k, _MODE_IDS[cfg.mode],
            cfg.bits_act, cfg.bits_scale, cfg.alpha, cfg.lam,
            _SCOPE_IDS[cfg.norm_scope],
        )
    )
    parts.append(np.ascontiguousarray(qt.s_norm, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(qt.s_vec, dtype="<f4").tobytes())
    parts.append(struct.pack("<ff", qt.s_c1, qt.s_c2))
    parts.append(_pack_bit_rows(qt.b1_codes, cfg.bits).tobytes())
    micro_bits = _micro_bit_matrix(qt)
    flat = micro_bits.reshape(qt.d_out, -1)
    parts.append(np.packbits(flat, axis=-1, bitorder="little").tobytes())
    parts.append(np.ascontiguousarray(qt.ct1, dtype=np.int8).tobytes())
    parts.append(np.ascontiguousarray(qt.ct2, dtype=np.int8).tobytes())


def _read_record(rd):
    (name_len,) = rd.unpack(struct.Struct("<H"))
    name = rd.take(name_len).decode("utf-8")
    d_out, d_in = rd.unpack(struct.Struct("<II"))
    (lat_id,) = rd.unpack(struct.Struct("<B"))
    spec = lattice_from_id(lat_id)
    N, G, K, mode_id, b_a, b_c, alpha, lam, scope_id = rd.unpack(CONFIG_STRUCT)
    if mode_id not in _MODES:
        raise FormatError(f"unknown mode byte {mode_id}", code="bad_mode")
    if scope_id not in _SCOPES:
        raise FormatError(f"unknown norm scope byte {scope_id}", code="bad_scope")
    if K not in (1, 2):
        raise FormatError(f"invalid K {K}", code="bad_config")
    try:
        cfg = QuantConfig(
            bits=spec.bits, topology=spec.topology, mode=_MODES[mode_id],
            k=K, macro=N, micro=G, alpha=float(alpha), lam=float(lam),
            bits_scale=b_c, bits_act=b_a, norm_scope=_SCOPES[scope_id],
        )
    except DataError as exc:
        raise FormatError(f"invalid config: {exc}", code="bad_config") from exc

    n_mac = len(macro_spans(d_in, N))
    widths = micro_layout(d_in, N, G)
    n_micro = len(widths)
    norm_entries = d_out if cfg.norm_scope == "channel" else d_out * n_mac
    s_norm = np.frombuffer(rd.take(4 * norm_entries), dtype="<f4").copy()
    if cfg.norm_scope == "macroblock":
        s_norm = s_norm.reshape(d_out, n_mac)
    s_vec = np.frombuffer(rd.take(4 * d_in), dtype="<f4").copy()
    s_c1, s_c2 = rd.unpack(struct.Struct("<ff"))

    code_row_bytes = (d_in * cfg.bits + 7) // 8
    raw = np.frombuffer(rd.take(d_out * code_row_bytes), dtype=np.uint8)
    codes = _unpack_bit_rows(raw.reshape(d_out, code_row_bytes), cfg.bits, d_in)
    if codes.size and codes.max() >= spec.n_codes:
        raise FormatError("lattice code out of range", code="bad_code")
    codes = codes.astype(np.uint8)

    bits_per = 4 + G // 2
    micro_row_bytes = (n_micro * bits_per + 7) // 8
    raw = np.frombuffer(rd.take(d_out * micro_row_bytes), dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(d_out, micro_row_bytes), axis=-1,
                         bitorder="little", count=n_micro * bits_per)
    bits = bits.reshape(d_out, n_micro, bits_per)
    strides = sign_bits = None
    if K == 2:
        weights_ = (1 << np.arange(4, dtype=np.uint8))
        stride_field = (bits[:, :, :4] * weights_).sum(axis=-1)
        strides = (stride_field + 1).astype(np.uint8)
        for mi, width in enumerate(widths):
            limit = max(width // 2, 1)
            if (strides[:, mi] > limit).any():
                raise FormatError(
                    f"stride exceeds {limit} for micro-block width {width}",
                    code="bad_stride",
                )
        sign_bits = bits[:, :, 4:].astype(np.uint8)

    ct1 = np.frombuffer(rd.take(d_out * n_mac), dtype=np.int8)
    ct2 = np.frombuffer(rd.take(d_out * n_mac), dtype=np.int8)
    qt = QuantizedTensor(
        d_out=d_out, d_in=d_in, config=cfg,
        s_norm=s_norm, s_vec=s_vec, b1_codes=codes,
        strides=strides, sign_bits=sign_bits,
        ct1=ct1.reshape(d_out, n_mac).copy(),
        ct2=ct2.reshape(d_out, n_mac).copy(),
        s_c1=float(s_c1), s_c2=float(s_c2),
    )
    return name, qt


def save(model):
    """Serialize a ModelFile to bytes (deterministic)."""
    parts = [MODEL_MAGIC, struct.pack("<HI", model.version, len(model.tensors))]
    for name, qt in model.tensors.items():
        _write_record(parts, name, qt)
    return b"".join(parts)


def load(data):
    rd = _Reader(bytes(data))
    magic = rd.take(4)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}", code="bad_magic")
    version, count = rd.unpack(struct.Struct("<HI"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", code="bad_version")
    model = ModelFile(version=version)
    for _ in range(count):
        name, qt = _read_record(rd)
        model.tensors[name] = qt
    if rd.pos != len(rd.data):
        raise FormatError(
            f"{len(rd.data) - rd.pos} trailing bytes", code="trailing"
        )
    return model


def expected_file_size(model):
    """Analytic byte size of save(model); must match exactly."""
    total = 4 + 2 + 4
    for name, qt in model.tensors.items():
        acc = storage_accounting(qt.d_out, qt.d_in, qt.config)
        total += 2 + len(name.encode("utf-8"))
        total += 8 + 1 + CONFIG_STRUCT.size
        total += acc["norm_bytes"] + acc["svec_bytes"] + 8
        total += acc["code_bytes"] + acc["micro_meta_bytes"] + acc["scale_bytes"]
    return total


def save_file(model, path):
    data = save(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_file(path):
    with open(path, "rb") as fh:
        return load(fh.read())


def save_tensor_container(tensors):
    """Serialize named f32 arrays (weights / calibration activations)."""
    parts = [TENSOR_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_tensor_container(data):
    rd = _Reader(bytes(data))
    magic = rd.take(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}", code="bad_magic")
    version, count = rd.unpack(struct.Struct("<HI"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", code="bad_version")
    out = {}
    for _ in range(count):
        (name_len,) = rd.unpack(struct.Struct("<H"))
        name = rd.take(name_len).decode("utf-8")
        (ndim,) = rd.unpack(struct.Struct("<B"))
        shape = rd.unpack(struct.Struct(f"<{ndim}I"))
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(rd.take(4 * n), dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float64)
    if rd.pos != len(rd.data):
        raise FormatError(
            f"{len(rd.data) - rd.pos} trailing bytes", code="trailing"
        )
    return out


def save_tensor_file(tensors, path):
    with open(path, "wb") as fh:
        fh.write(save_tensor_container(tensors))


def load_tensor_file(path):
    with open(path, "rb") as fh:
        return load_tensor_container(fh.read())
