"""RPAH dataset container for EM-CSI tensors.

Layout (all integers little-endian)::

    64-byte header   magic "RPAH", version u32, float width u8, endianness u8,
                     Nc u32, K u32, Nt u32, M u32, sample count u64, seed u64,
                     zero padding
    metadata         u32 byte length + UTF-8 JSON of the SystemConfig
    payload          interleaved real/imag floats, row-major
                     (sample, subcarrier, user, antenna, mode)

Sample ``i`` is drawn from ``np.random.default_rng([seed, i])`` so a subset,
a parallel run, or a serial run all produce identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (ArrayGeometry, ConfigError, EmCsiTensor, PatternCodebook,
                      SystemConfig, sample_emcsi, subcarrier_frequencies)

MAGIC = b"RPAH"
VERSION = 1
HEADER = struct.Struct("<4sIBBIIIIQQ22x")
assert HEADER.size == 64

DEFAULT_MAX_BYTES = 4 << 30


class DatasetError(IOError):
    """Malformed or oversized dataset container."""


@dataclass(frozen=True)
class DatasetHeader:
    version: int
    float_width: int
    endianness: int
    num_subcarriers: int
    num_users: int
    num_antennas: int
    num_patterns: int
    count: int
    seed: int

    @property
    def sample_shape(self) -> tuple[int, int, int, int]:
        return (self.num_subcarriers, self.num_users, self.num_antennas, self.num_patterns)


@dataclass
class Dataset:
    header: DatasetHeader
    config: SystemConfig
    data: np.ndarray  # (count, Nc, K, Nt, M) complex128

    def __len__(self) -> int:
        return self.data.shape[0]

    def tensor(self, index: int) -> EmCsiTensor:
        freqs = subcarrier_frequencies(self.config.num_subcarriers, self.config.bandwidth_hz)
        return EmCsiTensor(self.data[index], freqs)

    def __iter__(self):
        for i in range(len(self)):
            yield self.tensor(i)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _draw(args) -> np.ndarray:
    cfg, seed, index = args
    return sample_emcsi(cfg, sample_rng(seed, index)).data


def generate_samples(cfg: SystemConfig, count: int, seed: int, workers: int = 1) -> np.ndarray:
    """Draw ``count`` EM-CSI tensors as one ``(count, Nc, K, Nt, M)`` array."""
    if count < 0:
        raise ValueError("count must be >= 0")
    shape = (count, cfg.num_subcarriers, cfg.num_users, cfg.num_antennas, cfg.num_patterns)
    out = np.empty(shape, dtype=complex)
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, sample in enumerate(pool.map(_draw, [(cfg, seed, i) for i in range(count)],
                                                chunksize=16)):
                out[i] = sample
    else:
        geom = ArrayGeometry.from_config(cfg)
        codebook = PatternCodebook.default(cfg.num_patterns)
        for i in range(count):
            out[i] = sample_emcsi(cfg, sample_rng(seed, i), geom, codebook).data
    return out


def write_dataset(path, cfg: SystemConfig, data: np.ndarray, seed: int,
                  float_width: int = 8, max_bytes: int = DEFAULT_MAX_BYTES) -> Path:
    data = np.asarray(data)
    expected = (cfg.num_subcarriers, cfg.num_users, cfg.num_antennas, cfg.num_patterns)
    if data.shape[1:] != expected:
        raise ConfigError(f"sample shape {data.shape[1:]} does not match config {expected}")
    if float_width not in (4, 8):
        raise ValueError("float_width must be 4 or 8")
    payload_bytes = data.size * 2 * float_width
    if payload_bytes > max_bytes:
        raise OverflowError(f"payload of {payload_bytes} bytes exceeds cap of {max_bytes}")

    meta = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    header = HEADER.pack(MAGIC, VERSION, float_width, 0, *expected, data.shape[0], int(seed))
    real = np.empty(data.shape + (2,), dtype=f"<f{float_width}")
    real[..., 0] = data.real
    real[..., 1] = data.imag
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(real.tobytes(order="C"))
    return path


def generate_dataset(cfg: SystemConfig, count: int, seed: int, path, float_width: int = 8,
                     max_bytes: int = DEFAULT_MAX_BYTES, workers: int | None = None) -> Path:
    """Write ``count`` independent samples drawn from ``(cfg, seed)`` to ``path``."""
    payload_bytes = count * cfg.num_subcarriers * cfg.num_users * cfg.num_antennas \
        * cfg.num_patterns * 2 * float_width
    if payload_bytes > max_bytes:
        raise OverflowError(f"payload of {payload_bytes} bytes exceeds cap of {max_bytes}")
    if workers is None:
        workers = int(os.environ.get("RPAHBF_WORKERS", "1"))
    data = generate_samples(cfg, count, seed, workers=workers)
    return write_dataset(path, cfg, data, seed, float_width=float_width, max_bytes=max_bytes)


def read_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    return _parse_header(raw)


def _parse_header(raw: bytes) -> DatasetHeader:
    if len(raw) != HEADER.size:
        raise DatasetError("truncated header")
    magic, version, width, endian, nc, k, nt, m, count, seed = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}")
    if width not in (4, 8) or endian != 0:
        raise DatasetError(f"unsupported float width {width} / endianness {endian}")
    return DatasetHeader(version, width, endian, nc, k, nt, m, count, seed)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header = _parse_header(fh.read(HEADER.size))
        (meta_len,) = struct.unpack("<I", fh.read(4))
        cfg = SystemConfig.from_dict(json.loads(fh.read(meta_len).decode("utf-8")))
        shape = (header.count,) + header.sample_shape
        n = int(np.prod(shape)) * 2
        real = np.frombuffer(fh.read(n * header.float_width), dtype=f"<f{header.float_width}")
    if real.size != n:
        raise DatasetError(f"payload holds {real.size} floats, expected {n}")
    real = real.reshape(shape + (2,)).astype(np.float64)
    data = real[..., 0] + 1j * real[..., 1]
    return Dataset(header, cfg, data)
