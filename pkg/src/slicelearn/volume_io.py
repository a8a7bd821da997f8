"""Volume ingestion: a minimal NIfTI-1 reader, the RAWVOL fixture format,
and the JSON-lines subject manifest.

Voxels are held as float64 in x-fastest order regardless of the on-disk
datatype. Orientation codes in NIfTI headers are not applied; the axial
plane is defined structurally as the array's Z axis (see slice_select).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CdrOutOfRange,
    DuplicateSubject,
    MalformedLine,
    NonVolumetric,
    TruncatedData,
    UnsupportedDatatype,
)

NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"
RAWVOL_MAGIC = b"RVOL"
RAWVOL_VERSION = 1

# NIfTI-1 datatype codes we accept -> numpy dtype characters.
_NIFTI_DTYPES = {2: "u1", 4: "i2", 16: "f4"}


class Label(IntEnum):
    """Classification target: healthy control vs Alzheimer's disease."""

    HC = 0
    AD = 1


@dataclass
class Volume:
    """A 3D scalar field.

    dims is (nx, ny, nz); voxels is a flat float64 array of length
    nx*ny*nz in x-fastest order. value_range is computed from the data
    when not supplied. source_id never participates in equality.
    """

    dims: tuple[int, int, int]
    voxels: np.ndarray
    value_range: tuple[float, float] | None = None
    source_id: str = field(default="", compare=False)

    def __post_init__(self):
        nx, ny, nz = self.dims
        if nx < 1 or ny < 1 or nz < 1:
            raise ValueError(f"volume dims must be positive, got {self.dims}")
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float64).reshape(-1)
        if self.voxels.size != nx * ny * nz:
            raise ValueError(
                f"voxel count {self.voxels.size} != nx*ny*nz = {nx * ny * nz}"
            )
        if self.value_range is None:
            self.value_range = (float(self.voxels.min()), float(self.voxels.max()))
        vmin, vmax = self.value_range
        if vmin > vmax:
            raise ValueError(f"value_range {self.value_range} has vmin > vmax")

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.value_range == other.value_range
            and np.array_equal(self.voxels, other.voxels)
        )

    def as_zyx(self) -> np.ndarray:
        """View the voxels as an array indexed [z, y, x]."""
        nx, ny, nz = self.dims
        return self.voxels.reshape(nz, ny, nx)


@dataclass(frozen=True)
class SubjectRecord:
    """One manifest row: a subject, its CDR score and derived label."""

    subject_id: str
    cdr: float
    label: Label
    volume_path: str


def label_from_cdr(cdr: float) -> Label:
    """Map a Clinical Dementia Rating in [0, 2] to a class label.

    A rating of exactly 0 is a healthy control; anything greater is AD.
    """
    if not np.isfinite(cdr) or cdr < 0 or cdr > 2:
        raise CdrOutOfRange(f"CDR must lie in [0, 2], got {cdr}")
    return Label.HC if cdr == 0 else Label.AD


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def parse_nifti(data: bytes, source_id: str = "") -> Volume:
    """Parse a single-file NIfTI-1 byte stream into a Volume.

    Supports 3D images with datatype uint8, int16 or float32, either byte
    order (detected via the sizeof_hdr field), data located at vox_offset.
    Scaling (scl_slope/scl_inter) and orientation are read but not applied.
    """
    if len(data) < NIFTI_HEADER_SIZE:
        raise BadMagic(f"stream too short for a NIfTI-1 header ({len(data)} bytes)")
    if data[344:348] != NIFTI_MAGIC:
        raise BadMagic(f"magic {data[344:348]!r} is not {NIFTI_MAGIC!r}")

    if struct.unpack("<i", data[:4])[0] == NIFTI_HEADER_SIZE:
        order = "<"
    elif struct.unpack(">i", data[:4])[0] == NIFTI_HEADER_SIZE:
        order = ">"
    else:
        raise BadMagic("sizeof_hdr is not 348 under either byte order")

    dim = struct.unpack(order + "8h", data[40:56])
    if dim[0] != 3:
        raise NonVolumetric(f"dim[0] = {dim[0]}, expected 3")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if nx < 1 or ny < 1 or nz < 1:
        raise NonVolumetric(f"non-positive extent in dims ({nx}, {ny}, {nz})")

    datatype = struct.unpack(order + "h", data[70:72])[0]
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatype(f"NIfTI datatype code {datatype} not supported")
    dtype = np.dtype(order + _NIFTI_DTYPES[datatype])

    vox_offset = struct.unpack(order + "f", data[108:112])[0]
    offset = max(int(vox_offset), NIFTI_HEADER_SIZE)

    count = nx * ny * nz
    if len(data) < offset + count * dtype.itemsize:
        raise TruncatedData(
            f"need {count * dtype.itemsize} data bytes at offset {offset}, "
            f"stream has {len(data) - offset}"
        )
    voxels = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return Volume(dims=(nx, ny, nz), voxels=voxels.astype(np.float64),
                  source_id=source_id)


# ---------------------------------------------------------------------------
# RAWVOL fixture format
# ---------------------------------------------------------------------------
# "RVOL" | u8 version=1 | u8 endianness flag (0 = little) |
# u32 nx, ny, nz | f32 voxels * (nx*ny*nz), x-fastest. Little-endian.

_RAWVOL_HEADER = struct.Struct("<4sBBIII")


def write_raw_volume(volume: Volume) -> bytes:
    header = _RAWVOL_HEADER.pack(RAWVOL_MAGIC, RAWVOL_VERSION, 0, *volume.dims)
    return header + volume.voxels.astype("<f4").tobytes()


def parse_raw_volume(data: bytes, source_id: str = "") -> Volume:
    """Parse a RAWVOL stream; bit-exact inverse of write_raw_volume."""
    if len(data) < 4 or data[:4] != RAWVOL_MAGIC:
        raise BadMagic("stream does not start with RVOL magic")
    if len(data) < _RAWVOL_HEADER.size:
        raise TruncatedData("RAWVOL header incomplete")
    _, version, endianness, nx, ny, nz = _RAWVOL_HEADER.unpack_from(data)
    if version != RAWVOL_VERSION or endianness != 0:
        raise BadMagic(
            f"unsupported RAWVOL variant (version={version}, endianness={endianness})"
        )
    count = nx * ny * nz
    payload = data[_RAWVOL_HEADER.size:]
    if len(payload) < count * 4:
        raise TruncatedData(f"need {count * 4} voxel bytes, got {len(payload)}")
    voxels = np.frombuffer(payload, dtype="<f4", count=count)
    return Volume(dims=(nx, ny, nz), voxels=voxels.astype(np.float64),
                  source_id=source_id)


def load_volume(path: str | Path) -> Volume:
    """Read a volume file, dispatching on content (RAWVOL magic vs NIfTI)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == RAWVOL_MAGIC:
        return parse_raw_volume(data, source_id=path.stem)
    return parse_nifti(data, source_id=path.stem)


# ---------------------------------------------------------------------------
# Subject manifest (JSON lines)
# ---------------------------------------------------------------------------

_MANIFEST_FIELDS = {"subject_id", "cdr", "volume_path"}


def parse_manifest(text: str) -> list[SubjectRecord]:
    """Parse a JSON-lines manifest into SubjectRecords.

    Each line must hold exactly {subject_id, cdr, volume_path}; unknown
    fields are rejected. Labels are derived from the CDR. Empty lines are
    skipped so trailing newlines are harmless.
    """
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(lineno, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(lineno, "expected a JSON object")
        if set(obj) != _MANIFEST_FIELDS:
            extra = set(obj) - _MANIFEST_FIELDS
            missing = _MANIFEST_FIELDS - set(obj)
            raise MalformedLine(
                lineno,
                f"fields must be exactly {sorted(_MANIFEST_FIELDS)} "
                f"(extra: {sorted(extra)}, missing: {sorted(missing)})",
            )
        if not isinstance(obj["subject_id"], str) or not obj["subject_id"]:
            raise MalformedLine(lineno, "subject_id must be a non-empty string")
        if isinstance(obj["cdr"], bool) or not isinstance(obj["cdr"], (int, float)):
            raise MalformedLine(lineno, "cdr must be a number")
        if not isinstance(obj["volume_path"], str):
            raise MalformedLine(lineno, "volume_path must be a string")
        subject_id = obj["subject_id"]
        if subject_id in seen:
            raise DuplicateSubject(f"subject_id {subject_id!r} repeated (line {lineno})")
        seen.add(subject_id)
        cdr = float(obj["cdr"])
        records.append(
            SubjectRecord(
                subject_id=subject_id,
                cdr=cdr,
                label=label_from_cdr(cdr),
                volume_path=obj["volume_path"],
            )
        )
    return records


def write_manifest(records: list[SubjectRecord]) -> str:
    """Serialize records back to manifest text (inverse of parse_manifest)."""
    lines = [
        json.dumps(
            {"subject_id": r.subject_id, "cdr": r.cdr, "volume_path": r.volume_path}
        )
        for r in records
    ]
    return "\n".join(lines) + "\n"
