"""Procedural shapes dataset: one centered primitive, camera orbiting it.

Meshes are built from polygons, flat shaded by one directional light and
rasterized back to front (painter's algorithm) with Pillow.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from htmsp.encoder import GrayFrame, frame_name, write_pgm
from htmsp.errors import ConfigError, InputError

SHAPES = ("cone", "cube", "cylinder", "sphere", "torus", "cross")
MANIFEST_NAME = "manifest.csv"
SPEC_NAME = "dataset.json"
TRAIN_FRACTION = 0.8

BACKGROUND = 64
CAMERA_DISTANCE = 4.5
BASE_ELEVATION = 20.0
LIGHT = np.array([0.45, 0.8, 0.4]) / np.linalg.norm([0.45, 0.8, 0.4])


@dataclass(frozen=True)
class DatasetSpec:
    classes: tuple[str, ...] = SHAPES
    videos_per_class: int = 100
    frames_per_video: int = 32
    frame_width: int = 240
    frame_height: int = 134
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConfigError("classes must be non-empty")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise ConfigError(f"unknown shape classes {unknown}; expected a subset of {SHAPES}")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes must be unique")
        for name in ("videos_per_class", "frames_per_video", "frame_width", "frame_height"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.rng_seed, int) or not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d


@dataclass
class Mesh:
    vertices: np.ndarray            # (V, 3)
    faces: list[list[int]]
    normals: np.ndarray = field(init=False)

    def __post_init__(self):
        # Newell normals, flipped to point away from the solid.
        normals = []
        for face in self.faces:
            pts = self.vertices[face]
            nxt = np.roll(pts, -1, axis=0)
            n = np.array([
                np.sum((pts[:, 1] - nxt[:, 1]) * (pts[:, 2] + nxt[:, 2])),
                np.sum((pts[:, 2] - nxt[:, 2]) * (pts[:, 0] + nxt[:, 0])),
                np.sum((pts[:, 0] - nxt[:, 0]) * (pts[:, 1] + nxt[:, 1])),
            ])
            n /= np.linalg.norm(n)
            centroid = pts.mean(axis=0)
            if np.dot(n, centroid - self.interior_point(centroid)) < 0:
                n = -n
            normals.append(n)
        self.normals = np.array(normals)

    def interior_point(self, near: np.ndarray) -> np.ndarray:
        return np.zeros(3)


class TorusMesh(Mesh):
    def __init__(self, vertices, faces, ring_radius):
        self.ring_radius = ring_radius
        super().__init__(vertices, faces)

    def interior_point(self, near):
        d = math.hypot(near[0], near[2]) or 1.0
        return np.array([near[0] / d * self.ring_radius, 0.0, near[2] / d * self.ring_radius])


def _ring(radius, y, segments):
    a = np.linspace(0, 2 * math.pi, segments, endpoint=False)
    return np.stack([radius * np.cos(a), np.full(segments, y), radius * np.sin(a)], axis=1)


def _cone(segments=24):
    base = _ring(0.9, -0.8, segments)
    verts = np.vstack([base, [[0.0, 1.0, 0.0]]])
    apex = segments
    faces = [[i, (i + 1) % segments, apex] for i in range(segments)]
    faces.append(list(range(segments)))
    return Mesh(verts, faces)


def _cube():
    s = 0.75
    verts = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)])
    faces = [[0, 1, 3, 2], [4, 5, 7, 6], [0, 1, 5, 4], [2, 3, 7, 6], [0, 2, 6, 4], [1, 3, 7, 5]]
    return Mesh(verts, faces)


def _cylinder(segments=24):
    bottom = _ring(0.7, -0.9, segments)
    top = _ring(0.7, 0.9, segments)
    verts = np.vstack([bottom, top])
    faces = [[i, (i + 1) % segments, segments + (i + 1) % segments, segments + i]
             for i in range(segments)]
    faces.append(list(range(segments)))
    faces.append(list(range(segments, 2 * segments)))
    return Mesh(verts, faces)


def _sphere(stacks=12, slices=24, radius=1.0):
    verts = [[0.0, radius, 0.0]]
    for i in range(1, stacks):
        phi = math.pi * i / stacks
        verts.extend(_ring(radius * math.sin(phi), radius * math.cos(phi), slices).tolist())
    verts.append([0.0, -radius, 0.0])
    verts = np.array(verts)
    south = len(verts) - 1

    def at(i, j):
        return 1 + (i - 1) * slices + j % slices

    faces = [[0, at(1, j), at(1, j + 1)] for j in range(slices)]
    for i in range(1, stacks - 1):
        faces.extend([at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)] for j in range(slices))
    faces.extend([at(stacks - 1, j), south, at(stacks - 1, j + 1)] for j in range(slices))
    return Mesh(verts, faces)


def _torus(major=24, minor=12, ring_radius=0.75, tube=0.32):
    verts = []
    for i in range(major):
        u = 2 * math.pi * i / major
        for j in range(minor):
            v = 2 * math.pi * j / minor
            r = ring_radius + tube * math.cos(v)
            verts.append([r * math.cos(u), tube * math.sin(v), r * math.sin(u)])

    def at(i, j):
        return (i % major) * minor + j % minor

    faces = [[at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]
             for i in range(major) for j in range(minor)]
    return TorusMesh(np.array(verts), faces, ring_radius)


def _cross(arm=0.95, half=0.3, depth=0.3):
    outline = [(half, half), (half, arm), (-half, arm), (-half, half), (-arm, half), (-arm, -half),
               (-half, -half), (-half, -arm), (half, -arm), (half, -half), (arm, -half), (arm, half)]
    k = len(outline)
    verts = np.array([[x, y, z] for z in (depth, -depth) for x, y in outline])
    # Caps split into convex pieces (center + four arms) so depth sorting holds.
    center = [0, 3, 6, 9]
    arms = [[0, 1, 2, 3], [3, 4, 5, 6], [6, 7, 8, 9], [9, 10, 11, 0]]
    faces = []
    for offset in (0, k):
        faces.append([offset + v for v in center])
        faces.extend([offset + v for v in arm] for arm in arms)
    faces.extend([i, (i + 1) % k, k + (i + 1) % k, k + i] for i in range(k))
    return Mesh(verts, faces)


_BUILDERS = {"cone": _cone, "cube": _cube, "cylinder": _cylinder,
             "sphere": _sphere, "torus": _torus, "cross": _cross}
_MESH_CACHE: dict[str, Mesh] = {}


def mesh_for(shape: str) -> Mesh:
    if shape not in _BUILDERS:
        raise InputError(f"unknown shape class {shape!r}")
    if shape not in _MESH_CACHE:
        _MESH_CACHE[shape] = _BUILDERS[shape]()
    return _MESH_CACHE[shape]


def render_frame(mesh: Mesh, azimuth_deg: float, elevation_deg: float, scale: float,
                 width: int, height: int) -> np.ndarray:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    eye = CAMERA_DISTANCE * np.array([math.cos(el) * math.sin(az), math.sin(el),
                                      math.cos(el) * math.cos(az)])
    forward = -eye / np.linalg.norm(eye)
    right = np.cross(forward, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    focal = 0.62 * height * CAMERA_DISTANCE / 2.0

    world = mesh.vertices * scale
    rel = world - eye
    cam = np.stack([rel @ right, rel @ up, rel @ forward], axis=1)
    sx = width / 2.0 + focal * cam[:, 0] / cam[:, 2]
    sy = height / 2.0 - focal * cam[:, 1] / cam[:, 2]

    img = Image.new("L", (width, height), BACKGROUND)
    draw = ImageDraw.Draw(img)
    visible = []
    for idx, face in enumerate(mesh.faces):
        centroid = world[face].mean(axis=0)
        if np.dot(mesh.normals[idx], eye - centroid) <= 0:
            continue
        visible.append((cam[face, 2].mean(), idx))
    for _, idx in sorted(visible, reverse=True):
        face = mesh.faces[idx]
        shade = 0.2 + 0.8 * max(0.0, float(np.dot(mesh.normals[idx], LIGHT)))
        gray = int(round(40 + 200 * shade))
        draw.polygon([(float(sx[v]), float(sy[v])) for v in face], fill=gray)
    return np.asarray(img, dtype=np.uint8)


def _class_key(class_id: str) -> int:
    return zlib.crc32(class_id.encode())


def render_video(class_id: str, instance_seed: int, spec: DatasetSpec) -> list[GrayFrame]:
    if class_id not in spec.classes:
        raise InputError(f"class {class_id!r} is not part of this dataset")
    mesh = mesh_for(class_id)
    rng = np.random.default_rng([_class_key(class_id), instance_seed])
    elevation = BASE_ELEVATION + rng.uniform(-15.0, 15.0)
    scale = 1.0 + rng.uniform(-0.1, 0.1)
    start = rng.uniform(0.0, 360.0)
    step = 360.0 / spec.frames_per_video
    return [
        GrayFrame.from_array(render_frame(mesh, start + k * step, elevation, scale,
                                          spec.frame_width, spec.frame_height))
        for k in range(spec.frames_per_video)
    ]


@dataclass(frozen=True)
class VideoRecord:
    path: str       # relative to the dataset root
    label: str
    split: str      # "train" | "test"

    @property
    def video_id(self) -> str:
        return Path(self.path).name


def instance_seed(spec: DatasetSpec, class_index: int, video_index: int) -> int:
    seq = np.random.SeedSequence([spec.rng_seed, class_index, video_index])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def split_videos(spec: DatasetSpec) -> dict[str, set[int]]:
    """Indices of the training videos of each class (80% per class)."""
    n_train = int(round(TRAIN_FRACTION * spec.videos_per_class))
    out = {}
    for class_id in spec.classes:
        rng = np.random.default_rng([spec.rng_seed, _class_key(class_id)])
        order = rng.permutation(spec.videos_per_class)
        out[class_id] = set(int(i) for i in order[:n_train])
    return out


def plan_manifest(spec: DatasetSpec) -> list[VideoRecord]:
    train = split_videos(spec)
    records = []
    for class_id in spec.classes:
        for k in range(spec.videos_per_class):
            split = "train" if k in train[class_id] else "test"
            records.append(VideoRecord(f"{class_id}/{class_id}_{k:04d}", class_id, split))
    return records


def build_dataset(spec: DatasetSpec, root) -> list[VideoRecord]:
    root = Path(root)
    records = plan_manifest(spec)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for ci, class_id in enumerate(spec.classes):
            for k in range(spec.videos_per_class):
                video_dir = root / class_id / f"{class_id}_{k:04d}"
                video_dir.mkdir(parents=True, exist_ok=True)
                frames = render_video(class_id, instance_seed(spec, ci, k), spec)
                for i, frame in enumerate(frames):
                    write_pgm(video_dir / frame_name(i), frame)
        write_manifest(root / MANIFEST_NAME, records)
        (root / SPEC_NAME).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset under {root}: {exc}") from exc
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class", "split"])
        for rec in records:
            writer.writerow([rec.path, rec.label, rec.split])


def read_manifest(root) -> list[VideoRecord]:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise InputError(f"dataset manifest {path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"path", "class", "split"}:
        raise InputError(f"{path}: unexpected manifest columns {sorted(rows[0])}")
    records = [VideoRecord(r["path"], r["class"], r["split"]) for r in rows]
    bad = [r.path for r in records if r.split not in ("train", "test")]
    if bad:
        raise InputError(f"{path}: invalid split flag for {bad[0]}")
    return records


def read_spec(root) -> DatasetSpec:
    path = Path(root) / SPEC_NAME
    if not path.is_file():
        raise InputError(f"dataset description {path} not found")
    return DatasetSpec(**json.loads(path.read_text()))
