"""Single-file dataset/state container: JSON header plus raw arrays.

Layout: 6-byte magic "PTYD1\n", an unsigned little-endian 64-bit header
byte length, a UTF-8 JSON header, then the payload, which is a plain
concatenation of little-endian arrays described by the header's ordered
manifest ({name, dtype, shape, byte_offset from payload start}). Complex
arrays are stored as interleaved (re, im) float pairs ("c64" = float32
pairs, "c128" = float64 pairs).

The header carries its own CRC32 in the field "header_crc32", computed
over the header bytes with that field zeroed, so any single corrupted
header byte is detected as a data error instead of being silently
misread. Writes go to a temp file and are renamed into place.
"""

from __future__ import annotations

import json
import os
import re
import struct
import tempfile
import zlib

import numpy as np

from .fields import ComplexField
from .model import (Propagator, PtychoDataset, PtychoGeometry,
                    ReconstructionState, ScanPosition)

MAGIC = b"PTYD1\n"
FORMAT_VERSION = 1
_CRC_PLACEHOLDER = "00000000"
_CRC_RE = re.compile(rb'"header_crc32": "([0-9a-f]{8})"')

_DTYPES = {"f32": (np.dtype("<f4"), False), "f64": (np.dtype("<f8"), False),
           "c64": (np.dtype("<c8"), True), "c128": (np.dtype("<c16"), True)}


class DataError(Exception):
    """Base class for container format errors."""


class BadMagicError(DataError):
    pass


class VersionError(DataError):
    pass


class TruncatedError(DataError):
    pass


class ManifestError(DataError):
    pass


class HeaderError(DataError):
    pass


def _encode_header(header: dict) -> bytes:
    header = dict(header)
    header["header_crc32"] = _CRC_PLACEHOLDER
    raw = json.dumps(header, sort_keys=True, separators=(", ", ": ")).encode()
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    return raw.replace(f'"header_crc32": "{_CRC_PLACEHOLDER}"'.encode(),
                       f'"header_crc32": "{crc:08x}"'.encode(), 1)


def _decode_header(raw: bytes) -> dict:
    match = _CRC_RE.search(raw)
    if match is None:
        raise HeaderError("header integrity field missing")
    stated = match.group(1)
    zeroed = raw[: match.start(1)] + _CRC_PLACEHOLDER.encode() + raw[match.end(1):]
    crc = zlib.crc32(zeroed) & 0xFFFFFFFF
    if stated != f"{crc:08x}".encode():
        raise HeaderError("header checksum mismatch (corrupted header)")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("header must be a JSON object")
    return header


def _write_container(path, header: dict, arrays: list[tuple[str, str, np.ndarray]]) -> None:
    """Write named arrays; entries are (name, dtype string, array)."""
    manifest = []
    blobs = []
    offset = 0
    for name, dtype_name, arr in arrays:
        np_dtype, _ = _DTYPES[dtype_name]
        blob = np.ascontiguousarray(arr, dtype=np_dtype).tobytes()
        manifest.append({"name": name, "dtype": dtype_name,
                         "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["manifest"] = manifest
    raw = _encode_header(header)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ptyd.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != MAGIC:
        raise BadMagicError(f"bad magic {data[:6]!r}")
    if len(data) < 14:
        raise TruncatedError("file shorter than prelude")
    (hlen,) = struct.unpack("<Q", data[6:14])
    if hlen == 0 or 14 + hlen > len(data):
        raise TruncatedError(f"header length {hlen} exceeds file size {len(data)}")
    header = _decode_header(data[14: 14 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported format_version {header.get('format_version')!r}")
    payload = data[14 + hlen:]
    arrays = {}
    try:
        manifest = header["manifest"]
        prev_end = 0
        for entry in manifest:
            np_dtype, _ = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            start = int(entry["byte_offset"])
            nbytes = int(np.prod(shape)) * np_dtype.itemsize
            if start < prev_end:
                raise ManifestError("manifest offsets overlap or decrease")
            if start + nbytes > len(payload):
                raise TruncatedError(f"payload truncated for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(
                payload[start: start + nbytes], dtype=np_dtype).reshape(shape)
            prev_end = start + nbytes
    except DataError:
        raise
    except Exception as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    return header, arrays


def _geometry_header(geom: PtychoGeometry) -> dict:
    return {"wavelength_m": geom.wavelength, "z_m": geom.z,
            "detector_pitch_m": geom.detector_pitch,
            "object_pitch_m": geom.object_pitch,
            "frame_shape": [geom.frame_size, geom.frame_size],
            "propagator": geom.propagator.value}


def _geometry_from_header(header: dict) -> PtychoGeometry:
    shape = header["frame_shape"]
    if shape[0] != shape[1]:
        raise HeaderError("frame_shape must be square")
    return PtychoGeometry(wavelength=float(header["wavelength_m"]),
                          z=float(header["z_m"]),
                          detector_pitch=float(header["detector_pitch_m"]),
                          object_pitch=float(header["object_pitch_m"]),
                          frame_size=int(shape[0]),
                          propagator=Propagator(header.get("propagator",
                                                           "angular_spectrum")))


def write_dataset(dataset: PtychoDataset, path, frame_dtype: str = "f32") -> None:
    """Serialize a dataset; frames stored as f32 unless f64 is requested."""
    if frame_dtype not in ("f32", "f64"):
        raise DataError(f"frame_dtype must be f32 or f64, got {frame_dtype!r}")
    header = _geometry_header(dataset.geometry)
    header.update({"num_positions": dataset.num_positions,
                   "positions_m": [[p.offset[0], p.offset[1]] for p in dataset.positions],
                   "frame_dtype": frame_dtype,
                   "normalization_scale": dataset.normalization_scale,
                   "kind": "dataset"})
    for key in ("noise", "rng"):
        if key in dataset.meta:
            header[key] = dataset.meta[key]
    extra = {k: v for k, v in dataset.meta.items() if k not in ("noise", "rng")}
    if extra:
        header["meta"] = extra
    _write_container(path, header, [("frames", frame_dtype, dataset.frames)])


def read_dataset(path) -> PtychoDataset:
    header, arrays = _read_container(path)
    try:
        geom = _geometry_from_header(header)
        if "frames" not in arrays:
            raise ManifestError("dataset file has no frames array")
        frames = np.asarray(arrays["frames"], dtype=np.float64)
        positions = header["positions_m"]
        if len(positions) != int(header["num_positions"]) or len(positions) != frames.shape[0]:
            raise ManifestError("num_positions, positions_m, and frames disagree")
        scan = [ScanPosition.from_offset(i, (float(p[0]), float(p[1])),
                                         geom.object_pitch)
                for i, p in enumerate(positions)]
        meta = dict(header.get("meta", {}))
        for key in ("noise", "rng"):
            if key in header:
                meta[key] = header[key]
        return PtychoDataset(geom, scan, frames,
                             normalization_scale=float(header["normalization_scale"]),
                             meta=meta)
    except DataError:
        raise
    except Exception as exc:
        raise HeaderError(f"invalid dataset header: {exc}") from exc


def write_state(state: ReconstructionState, geometry: PtychoGeometry, path) -> None:
    """Serialize a reconstruction (object, probe, distance estimate)."""
    header = _geometry_header(geometry)
    header.update({"num_positions": 0, "positions_m": [], "frame_dtype": "f64",
                   "normalization_scale": 1.0, "kind": "state",
                   "z_estimate_m": state.z_estimate, "epoch": state.epoch})
    _write_container(path, header, [("object", "c128", state.obj.data),
                                    ("probe", "c128", state.probe.data)])


def read_state(path) -> tuple[ReconstructionState, PtychoGeometry]:
    header, arrays = _read_container(path)
    try:
        geom = _geometry_from_header(header)
        obj = ComplexField(np.asarray(arrays["object"], dtype=np.complex128),
                           geom.object_pitch)
        probe = ComplexField(np.asarray(arrays["probe"], dtype=np.complex128),
                             geom.object_pitch)
        z = float(header.get("z_estimate_m", geom.z))
        return ReconstructionState(obj, probe, z, int(header.get("epoch", 0))), geom
    except DataError:
        raise
    except Exception as exc:
        raise HeaderError(f"invalid state header: {exc}") from exc


def read_header(path) -> dict:
    """Header JSON of any container file."""
    header, _ = _read_container(path)
    return header
