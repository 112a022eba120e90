"""Dataset layout and on-disk formats.

A demonstration directory looks like::

    dataset/<demo_id>/
        cameras.json                  # list of camera objects (see below)
        frame_00000/view_0.depth.png  # 16-bit PNG, meters = value * depth_scale
        frame_00000/view_0.color.png  # 8-bit RGB
        ...

Depth may alternatively be stored as ``view_<c>.depth.bin``: 16-byte header
(magic "DPTH", u32 width, u32 height, f32 scale) followed by row-major
little-endian float32 values; meters = value * scale. Zero depth marks a
missing pixel in either format.

Camera objects: {fx, fy, cx, cy, width, height, depth_scale,
extrinsic: {qw, qx, qy, qz, tx, ty, tz}} with the extrinsic mapping
camera-frame points into the world frame.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry as geo

DEPTH_MAGIC = b"DPTH"
_FRAME_RE = re.compile(r"^frame_(\d+)$")
_VIEW_RE = re.compile(r"^view_(\d+)\.(depth\.png|depth\.bin|color\.png)$")


class DatasetLayoutError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Demonstration:
    """One recording: V cameras, T frames of V RGB-D views each."""

    demo_id: str
    cameras: list[geo.CameraModel]
    frames: list[list[geo.DepthImage]]
    source_path: str = ""

    def __post_init__(self):
        v = len(self.cameras)
        for t, views in enumerate(self.frames):
            if len(views) != v:
                raise DatasetLayoutError(
                    f"{self.demo_id}: frame {t} has {len(views)} views, expected {v}"
                )
            for c, img in enumerate(views):
                cam = self.cameras[c]
                if img.width != cam.width or img.height != cam.height:
                    raise DatasetLayoutError(
                        f"{self.demo_id}: frame {t} view {c} is {img.width}x{img.height}, "
                        f"camera expects {cam.width}x{cam.height}"
                    )

    def __len__(self) -> int:
        return len(self.frames)


# --- primitive files ---------------------------------------------------------


def write_depth_png(path, depth_m: np.ndarray, scale: float) -> None:
    if scale <= 0:
        raise ValueError(f"depth scale must be > 0, got {scale}")
    valid = np.isfinite(depth_m) & (depth_m > 0)
    units = np.zeros(depth_m.shape, dtype=np.float64)
    units[valid] = np.rint(depth_m[valid] / scale)
    if units.max(initial=0.0) > 65535:
        raise ValueError(
            f"depth {depth_m[valid].max():.3f} m exceeds the 16-bit range at scale {scale}"
        )
    Image.fromarray(units.astype(np.uint16)).save(path)


def read_depth_png(path, scale: float) -> np.ndarray:
    units = np.asarray(Image.open(path), dtype=np.float64)
    depth = units * scale
    depth[units == 0] = np.nan
    return depth


def write_depth_bin(path, depth_m: np.ndarray, scale: float = 1.0) -> None:
    h, w = depth_m.shape
    values = np.where(np.isfinite(depth_m) & (depth_m > 0), depth_m / scale, 0.0)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIf", DEPTH_MAGIC, w, h, scale))
        f.write(values.astype("<f4").tobytes())


def read_depth_bin(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        magic, w, h, scale = struct.unpack("<4sIIf", header)
        if magic != DEPTH_MAGIC:
            raise DatasetLayoutError(f"{path}: bad depth magic {magic!r}")
        values = np.frombuffer(f.read(4 * w * h), dtype="<f4").reshape(h, w)
    depth = values.astype(np.float64) * scale
    depth[values <= 0] = np.nan
    return depth


def write_color_png(path, color: np.ndarray) -> None:
    u8 = np.clip(np.rint(np.asarray(color) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


# --- json helpers ------------------------------------------------------------


def transform_to_dict(t: geo.RigidTransform) -> dict:
    return {
        "q": [float(c) for c in t.quat],
        "t": [float(c) for c in t.translation],
    }


def transform_from_dict(d: dict) -> geo.RigidTransform:
    return geo.transform_from_quat(d["q"], d["t"])


def camera_to_dict(cam: geo.CameraModel) -> dict:
    q = cam.extrinsic.quat
    t = cam.extrinsic.translation
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "depth_scale": cam.depth_scale,
        "extrinsic": {
            "qw": float(q[0]),
            "qx": float(q[1]),
            "qy": float(q[2]),
            "qz": float(q[3]),
            "tx": float(t[0]),
            "ty": float(t[1]),
            "tz": float(t[2]),
        },
    }


def camera_from_dict(d: dict) -> geo.CameraModel:
    e = d.get("extrinsic", {})
    extrinsic = geo.transform_from_quat(
        [e.get("qw", 1.0), e.get("qx", 0.0), e.get("qy", 0.0), e.get("qz", 0.0)],
        [e.get("tx", 0.0), e.get("ty", 0.0), e.get("tz", 0.0)],
    )
    return geo.CameraModel(
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        width=int(d["width"]),
        height=int(d["height"]),
        extrinsic=extrinsic,
        depth_scale=float(d.get("depth_scale", 1.0)),
    )


def save_cameras(path, cameras: list[geo.CameraModel]) -> None:
    with open(path, "w") as f:
        json.dump([camera_to_dict(c) for c in cameras], f, indent=2, sort_keys=True)
        f.write("\n")


def load_cameras(path) -> list[geo.CameraModel]:
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list) or not entries:
        raise DatasetLayoutError(f"{path}: expected a nonempty list of camera objects")
    return [camera_from_dict(d) for d in entries]


def write_jsonl(path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def sha256_of_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_of_json(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# --- demonstration directories -----------------------------------------------


def discover_demos(dataset_dir) -> list[str]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetLayoutError(f"{dataset_dir}: not a directory")
    demos = sorted(p.name for p in root.iterdir() if (p / "cameras.json").is_file())
    return demos


def _frame_dirs(demo_dir: Path) -> list[Path]:
    frames = []
    for p in demo_dir.iterdir():
        m = _FRAME_RE.match(p.name)
        if m and p.is_dir():
            frames.append((int(m.group(1)), p))
    frames.sort()
    return [p for _, p in frames]


def load_demonstration(demo_dir) -> Demonstration:
    demo_dir = Path(demo_dir)
    cam_path = demo_dir / "cameras.json"
    if not cam_path.is_file():
        raise DatasetLayoutError(f"{demo_dir}: missing cameras.json")
    cameras = load_cameras(cam_path)
    frames = []
    frame_dirs = _frame_dirs(demo_dir)
    if not frame_dirs:
        raise DatasetLayoutError(f"{demo_dir}: no frame_<t> directories")
    for fdir in frame_dirs:
        views = []
        for c, cam in enumerate(cameras):
            png = fdir / f"view_{c}.depth.png"
            binf = fdir / f"view_{c}.depth.bin"
            if png.is_file():
                depth = read_depth_png(png, cam.depth_scale)
            elif binf.is_file():
                depth = read_depth_bin(binf)
            else:
                raise DatasetLayoutError(f"{fdir}: missing depth file for view {c}")
            color_path = fdir / f"view_{c}.color.png"
            if not color_path.is_file():
                raise DatasetLayoutError(f"{fdir}: missing {color_path.name}")
            views.append(geo.DepthImage(depth, read_color_png(color_path)))
        frames.append(views)
    return Demonstration(demo_dir.name, cameras, frames, source_path=str(demo_dir))


def write_demonstration(out_dir, demo: Demonstration, depth_format: str = "png") -> Path:
    if depth_format not in ("png", "bin"):
        raise ValueError(f"depth_format must be 'png' or 'bin', got {depth_format!r}")
    demo_dir = Path(out_dir) / demo.demo_id
    demo_dir.mkdir(parents=True, exist_ok=True)
    save_cameras(demo_dir / "cameras.json", demo.cameras)
    for t, views in enumerate(demo.frames):
        fdir = demo_dir / f"frame_{t:05d}"
        fdir.mkdir(exist_ok=True)
        for c, img in enumerate(views):
            if depth_format == "png":
                write_depth_png(fdir / f"view_{c}.depth.png", img.depth, demo.cameras[c].depth_scale)
            else:
                write_depth_bin(fdir / f"view_{c}.depth.bin", img.depth, 1.0)
            write_color_png(fdir / f"view_{c}.color.png", img.color)
    return demo_dir
