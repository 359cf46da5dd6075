"""File formats: binary/CSV point frames, IMU CSV, TUM trajectories,
flat key-value configs and sequence manifests.

Frame binary layout (little-endian): magic ``ALIO``, u32 version,
f64 t_begin, f64 t_end, u32 count, then count records of
(f32 x, f32 y, f32 z, f32 dt). The CSV fallback carries the same fields
with the frame times in ``# key=value`` comment lines.
"""

from __future__ import annotations

import os
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParseError
from .frames import PointFrame
from .motion import ImuWindow

FRAME_MAGIC = b"ALIO"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sIddI")


def write_frame_binary(path, frame: PointFrame) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, frame.t_begin, frame.t_end, frame.n_points)
        )
        rec = np.column_stack([frame.xyz, frame.dt]).astype("<f4")
        fh.write(rec.tobytes())


def read_frame_binary(path) -> PointFrame:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ParseError(f"{path}: truncated frame header")
        magic, version, t_begin, t_end, count = _HEADER.unpack(head)
        if magic != FRAME_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        if version != FRAME_VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        body = fh.read(count * 16)
        if len(body) < count * 16:
            raise ParseError(f"{path}: truncated frame body")
        rec = np.frombuffer(body, dtype="<f4").reshape(count, 4).astype(float)
    return PointFrame(xyz=rec[:, :3], dt=rec[:, 3], t_begin=t_begin, t_end=t_end)


def write_frame_csv(path, frame: PointFrame) -> None:
    with open(path, "w") as fh:
        fh.write(f"# t_begin={float(frame.t_begin)!r}\n")
        fh.write(f"# t_end={float(frame.t_end)!r}\n")
        fh.write("x,y,z,dt\n")
        for i in range(frame.n_points):
            vals = [*frame.xyz[i], frame.dt[i]]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def read_frame_csv(path) -> PointFrame:
    meta: Dict[str, float] = {}
    rows: List[List[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    try:
                        meta[k.strip()] = float(v)
                    except ValueError as e:
                        raise ParseError(f"{path}:{lineno}: bad header value {v!r}") from e
                continue
            if line.startswith("x,"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from e
    if "t_begin" not in meta or "t_end" not in meta:
        raise ParseError(f"{path}: missing t_begin/t_end header comments")
    arr = np.asarray(rows, dtype=float).reshape(-1, 4)
    return PointFrame(xyz=arr[:, :3], dt=arr[:, 3], t_begin=meta["t_begin"], t_end=meta["t_end"])


def read_frame(path) -> PointFrame:
    """Dispatch on content: binary magic wins, otherwise CSV."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FRAME_MAGIC:
        return read_frame_binary(path)
    return read_frame_csv(path)


def write_imu_csv(path, win: ImuWindow) -> None:
    with open(path, "w") as fh:
        fh.write("t,ax,ay,az,wx,wy,wz\n")
        for i in range(win.n):
            vals = [win.t[i], *win.a[i], *win.w[i]]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def read_imu_csv(path) -> ImuWindow:
    rows: List[List[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t,"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ParseError(f"{path}:{lineno}: expected 7 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from e
    arr = np.asarray(rows, dtype=float).reshape(-1, 7)
    return ImuWindow(arr[:, 0], arr[:, 1:4], arr[:, 4:7])


def write_tum(path, times: np.ndarray, positions: np.ndarray, quats_wxyz: np.ndarray) -> None:
    """TUM rows ``t tx ty tz qx qy qz qw`` at 9 significant digits."""
    with open(path, "w") as fh:
        for t, p, q in zip(times, positions, quats_wxyz):
            fh.write(
                f"{t:.9g} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                f"{q[1]:.9g} {q[2]:.9g} {q[3]:.9g} {q[0]:.9g}\n"
            )


def read_tum(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times, positions (N,3), quaternions (N,4) w-first)."""
    rows: List[List[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from e
    arr = np.asarray(rows, dtype=float).reshape(-1, 8)
    t = arr[:, 0]
    p = arr[:, 1:4]
    q = np.column_stack([arr[:, 7], arr[:, 4], arr[:, 5], arr[:, 6]])
    return t, p, q


def parse_kv_file(path) -> Dict[str, str]:
    """Flat ``key=value`` lines; ``#`` comments; later keys win."""
    out: Dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_kv_file(path, values: Dict[str, str]) -> None:
    with open(path, "w") as fh:
        for k, v in values.items():
            fh.write(f"{k}={v}\n")


class SequenceManifest:
    """Dataset description: where the frames, IMU stream and truth live.

    Paths are resolved relative to the manifest file. Frame files are the
    sorted contents of ``frames_dir``.
    """

    def __init__(
        self,
        frame_paths: List[str],
        imu_path: Optional[str],
        gt_path: Optional[str],
        lidar_rate: float = 10.0,
        imu_rate: float = 200.0,
        imu_a_max: float = 29.5,
        imu_w_max: float = 17.5,
        loop: bool = False,
    ):
        self.frame_paths = frame_paths
        self.imu_path = imu_path
        self.gt_path = gt_path
        self.lidar_rate = lidar_rate
        self.imu_rate = imu_rate
        self.imu_a_max = imu_a_max
        self.imu_w_max = imu_w_max
        self.loop = loop

    @classmethod
    def load(cls, path) -> "SequenceManifest":
        kv = parse_kv_file(path)
        base = os.path.dirname(os.path.abspath(path))

        def resolve(rel):
            return rel if os.path.isabs(rel) else os.path.join(base, rel)

        if "frames_dir" not in kv:
            raise ParseError(f"{path}: manifest missing frames_dir")
        frames_dir = resolve(kv["frames_dir"])
        if not os.path.isdir(frames_dir):
            raise ParseError(f"{path}: frames_dir {frames_dir} does not exist")
        frame_paths = sorted(
            os.path.join(frames_dir, f)
            for f in os.listdir(frames_dir)
            if f.endswith((".bin", ".csv"))
        )
        if not frame_paths:
            raise ParseError(f"{path}: no frame files under {frames_dir}")
        imu_path = resolve(kv["imu"]) if "imu" in kv else None
        if imu_path and not os.path.isfile(imu_path):
            raise ParseError(f"{path}: imu file {imu_path} does not exist")
        gt_path = resolve(kv["ground_truth"]) if "ground_truth" in kv else None
        if gt_path and not os.path.isfile(gt_path):
            raise ParseError(f"{path}: ground_truth file {gt_path} does not exist")
        return cls(
            frame_paths=frame_paths,
            imu_path=imu_path,
            gt_path=gt_path,
            lidar_rate=float(kv.get("lidar_rate", 10.0)),
            imu_rate=float(kv.get("imu_rate", 200.0)),
            imu_a_max=float(kv.get("imu_a_max", 29.5)),
            imu_w_max=float(kv.get("imu_w_max", 17.5)),
            loop=kv.get("loop", "false").lower() in ("1", "true", "yes"),
        )

    def save(self, path, frames_dir_rel: str, imu_rel: Optional[str], gt_rel: Optional[str]) -> None:
        kv = {
            "frames_dir": frames_dir_rel,
            "lidar_rate": repr(self.lidar_rate),
            "imu_rate": repr(self.imu_rate),
            "imu_a_max": repr(self.imu_a_max),
            "imu_w_max": repr(self.imu_w_max),
            "loop": "true" if self.loop else "false",
        }
        if imu_rel:
            kv["imu"] = imu_rel
        if gt_rel:
            kv["ground_truth"] = gt_rel
        write_kv_file(path, kv)
