"""Bit-exact serialization: volumes (JSON sidecar + raw payload), poses,
16-bit PGM images, and the experiment result CSVs.

Volume payloads are raw little-endian float32, x-fastest ordering, stored
next to a JSON header. All floating-point text is written with 17
significant digits so values survive the text roundtrip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import (
    ByteOrderMismatch,
    DimensionMismatch,
    MalformedHeader,
    TruncatedPayload,
)
from .geometry import RigidTransform
from .pipeline import EvalRecord, RegistrationReport, Summary
from .projector import Image2D
from .volume import SurfacePointSet, Volume

SUMMARY_HEADER = ["name", "p50", "p75", "p95", "mtre_mean", "mtre_std", "rf_mean", "rf_std"]
SAMPLES_HEADER = [
    "sample_id",
    "view_id",
    "seed",
    "mtre_before",
    "mtre_after_clipped50",
    "mtre_after_raw",
]
SCATTER_CLIP_MM = 50.0
POSE_FRAME_TAG = "camera_from_volume"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _payload_path(header_path: Path) -> Path:
    return header_path.with_name(header_path.name + ".raw")


def save_volume(v: Volume, path: str | Path) -> None:
    """Write the JSON header at path and the raw payload at path + '.raw'."""
    header_path = Path(path)
    payload_path = _payload_path(header_path)
    header = {
        "dims": list(v.dims),
        "spacing": [_fmt(s) for s in v.spacing],
        "origin": [_fmt(o) for o in v.origin],
        "dtype": "float32",
        "byte_order": "little",
        "payload": payload_path.name,
    }
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    payload = np.ravel(v.data, order="F").astype("<f4")
    payload_path.write_bytes(payload.tobytes())


def load_volume(path: str | Path) -> Volume:
    header_path = Path(path)
    try:
        header = json.loads(header_path.read_text())
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{header_path}: {exc}") from exc
    for key in ("dims", "spacing", "origin", "dtype", "byte_order", "payload"):
        if key not in header:
            raise MalformedHeader(f"{header_path}: missing key {key!r}")
    if header["dtype"] != "float32":
        raise MalformedHeader(f"{header_path}: unsupported dtype {header['dtype']!r}")
    if header["byte_order"] != "little":
        raise ByteOrderMismatch(
            f"{header_path}: payload byte order {header['byte_order']!r} is not 'little'"
        )
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise DimensionMismatch(f"{header_path}: bad dims {dims}")
    spacing = tuple(float(s) for s in header["spacing"])
    origin = np.array([float(o) for o in header["origin"]])

    payload_path = header_path.with_name(header["payload"])
    raw = payload_path.read_bytes()
    expected = 4 * dims[0] * dims[1] * dims[2]
    if len(raw) != expected:
        raise TruncatedPayload(
            f"{payload_path}: expected {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F")
    return Volume(dims, spacing, origin, np.array(data, dtype=np.float32))


def save_pose(t: RigidTransform, path: str | Path) -> None:
    """Pose record: rotation rows and translation with 17 significant digits."""
    rows = [
        "[" + ", ".join(_fmt(x) for x in row) + "]" for row in np.asarray(t.rotation)
    ]
    text = (
        "{\n"
        f'  "frame": "{POSE_FRAME_TAG}",\n'
        '  "rotation": [\n    ' + ",\n    ".join(rows) + "\n  ],\n"
        '  "translation": [' + ", ".join(_fmt(x) for x in t.translation) + "]\n"
        "}\n"
    )
    Path(path).write_text(text)


def load_pose(path: str | Path) -> RigidTransform:
    try:
        obj = json.loads(Path(path).read_text())
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    for key in ("frame", "rotation", "translation"):
        if key not in obj:
            raise MalformedHeader(f"{path}: missing key {key!r}")
    if obj["frame"] != POSE_FRAME_TAG:
        raise MalformedHeader(f"{path}: unexpected frame tag {obj['frame']!r}")
    return RigidTransform(np.array(obj["rotation"]), np.array(obj["translation"]))


def save_point_set(s: SurfacePointSet, path: str | Path) -> None:
    """Point set as a JSON header plus raw little-endian float64 payload.

    The payload holds all points then all gradients, row by row, so the
    roundtrip is bit-exact.
    """
    header_path = Path(path)
    payload_path = _payload_path(header_path)
    header = {"count": len(s), "payload": payload_path.name, "byte_order": "little"}
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    payload = np.concatenate([s.points.ravel(), s.gradients.ravel()]).astype("<f8")
    payload_path.write_bytes(payload.tobytes())


def load_point_set(path: str | Path) -> SurfacePointSet:
    header_path = Path(path)
    try:
        header = json.loads(header_path.read_text())
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{header_path}: {exc}") from exc
    for key in ("count", "payload", "byte_order"):
        if key not in header:
            raise MalformedHeader(f"{header_path}: missing key {key!r}")
    if header["byte_order"] != "little":
        raise ByteOrderMismatch(f"{header_path}: unsupported byte order")
    n = int(header["count"])
    payload_path = header_path.with_name(header["payload"])
    raw = payload_path.read_bytes()
    if len(raw) != 8 * 6 * n:
        raise TruncatedPayload(f"{payload_path}: expected {8 * 6 * n} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8")
    return SurfacePointSet(
        flat[: 3 * n].reshape(n, 3).copy(), flat[3 * n :].reshape(n, 3).copy()
    )


def export_image_pgm(img: Image2D, path: str | Path) -> None:
    """16-bit binary PGM, min-max scaled to [0, 65535]; constant images map to 0."""
    data = img.data
    lo = float(data.min())
    hi = float(data.max())
    if hi > lo:
        scaled = np.round((data - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(data)
    header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + scaled.astype(">u2").tobytes())


def import_image_pgm(path: str | Path) -> Image2D:
    """Read a binary PGM (maxval 255 or 65535) back as raw sample values."""
    blob = Path(path).read_bytes()
    # Header: magic, width, height, maxval as whitespace-separated tokens.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise MalformedHeader(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    expected = width * height * (2 if maxval > 255 else 1)
    raw = blob[pos : pos + expected]
    if len(raw) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} payload bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype).reshape(height, width).astype(np.float64)
    return Image2D(data)


def export_results_csv(
    summary: Summary,
    records: list[EvalRecord],
    summary_path: str | Path,
    samples_path: str | Path,
    name: str = "run",
) -> None:
    """Write the percentile summary and the per-sample before/after table.

    The clipped column caps the post-update error at 50 mm for plotting; the
    raw value is kept alongside.
    """
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_HEADER)
        writer.writerow(
            [
                name,
                _fmt(summary.p50),
                _fmt(summary.p75),
                _fmt(summary.p95),
                _fmt(summary.mtre_mean),
                _fmt(summary.mtre_std),
                _fmt(summary.rf_mean),
                _fmt(summary.rf_std),
            ]
        )
    with open(samples_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SAMPLES_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.sample_id,
                    r.view_id,
                    r.seed,
                    _fmt(r.mtre_before),
                    _fmt(min(r.mtre_after, SCATTER_CLIP_MM)),
                    _fmt(r.mtre_after),
                ]
            )


def save_report(report: RegistrationReport, path: str | Path) -> None:
    """Registration report as structured text (poses, traces, diagnostics).

    Wall time stays in the dataclass only: reruns of a seeded command must
    produce byte-identical files.
    """
    obj = {
        "converged": report.converged,
        "n_iterations": report.n_iterations,
        "mtre_trace_mm": list(report.mtre_trace),
        "reduction_factors": list(report.reduction_factors),
        "poses": [
            {
                "rotation": np.asarray(p.rotation).tolist(),
                "translation": np.asarray(p.translation).tolist(),
            }
            for p in report.poses
        ],
        "diagnostics": [
            {
                "n_contour": d.n_contour,
                "n_valid": d.n_valid,
                "condition_number": d.condition_number,
                "motion_norm_rad": d.motion_norm[0],
                "motion_norm_mm": d.motion_norm[1],
                "solver_rank": d.solver_rank,
                "updated": d.updated,
            }
            for d in report.diagnostics
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
