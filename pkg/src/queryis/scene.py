"""Labeled point clouds, the ``QIS1`` text format, a synthetic generator and voxelization."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("box", "sphere", "cylinder")


class SceneFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True, eq=False)
class Scene:
    points: np.ndarray  # (N, 6) xyz + rgb
    instance_id: np.ndarray  # (N,) int, -1 background
    class_id: np.ndarray  # (N,) int, -1 background
    num_classes: int

    def __post_init__(self):
        n = len(self.points)
        if n < 1:
            raise ValueError("a scene needs at least one point")
        if self.points.shape != (n, 6) or self.instance_id.shape != (n,) or self.class_id.shape != (n,):
            raise ValueError("inconsistent scene array shapes")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point attributes")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        bg = self.instance_id < 0
        if np.any(self.class_id[bg] != -1):
            raise ValueError("background points must have class -1")
        fg = ~bg
        if np.any((self.class_id[fg] < 0) | (self.class_id[fg] >= self.num_classes)):
            raise ValueError("instance points need a class in [0, G)")
        for inst in np.unique(self.instance_id[fg]):
            if len(np.unique(self.class_id[self.instance_id == inst])) != 1:
                raise ValueError(f"instance {inst} carries more than one class")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.instance_id, other.instance_id)
            and np.array_equal(self.class_id, other.class_id)
        )

    def permuted(self, perm: np.ndarray) -> "Scene":
        return Scene(self.points[perm], self.instance_id[perm], self.class_id[perm], self.num_classes)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    classes: np.ndarray  # (K',) int
    masks: np.ndarray  # (K', N) bool

    def __post_init__(self):
        if self.masks.ndim != 2 or len(self.masks) != len(self.classes):
            raise ValueError("masks and classes disagree")
        if len(self.masks):
            if np.any(self.masks.sum(axis=1) == 0):
                raise ValueError("empty ground-truth mask")
            if np.any(self.masks.sum(axis=0) > 1):
                raise ValueError("ground-truth masks overlap")

    @property
    def count(self) -> int:
        return len(self.classes)

    @classmethod
    def from_scene(cls, scene: Scene) -> "GroundTruth":
        ids = np.unique(scene.instance_id[scene.instance_id >= 0])
        masks = np.stack([scene.instance_id == i for i in ids]) if len(ids) else np.zeros((0, scene.n), bool)
        classes = np.array([scene.class_id[scene.instance_id == i][0] for i in ids], dtype=np.int64)
        return cls(classes, masks)

    def permuted(self, perm: np.ndarray) -> "GroundTruth":
        return GroundTruth(self.classes[perm], self.masks[perm])


# --- file format --------------------------------------------------------------


def write_scene(scene: Scene, path) -> None:
    # repr() of a Python float is the shortest round-trip form
    lines = [f"QIS1 N={scene.n} G={scene.num_classes}"]
    for p, inst, cls in zip(scene.points.tolist(), scene.instance_id.tolist(), scene.class_id.tolist()):
        lines.append(" ".join(repr(v) for v in p) + f" {inst} {cls}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scene(path) -> tuple[Scene, GroundTruth]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise SceneFormatError(path, 1, "empty file")
    head = text[0].split()
    try:
        if len(head) != 3 or head[0] != "QIS1" or not head[1].startswith("N=") or not head[2].startswith("G="):
            raise ValueError
        n, g = int(head[1][2:]), int(head[2][2:])
    except ValueError:
        raise SceneFormatError(path, 1, f"bad header {text[0]!r}") from None
    if n < 1:
        raise SceneFormatError(path, 1, "scene must contain at least one point")
    rows = text[1:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != n:
        raise SceneFormatError(path, 1, f"header declares N={n} but file has {len(rows)} rows")
    pts = np.empty((n, 6))
    inst = np.empty(n, dtype=np.int64)
    cls = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        fields = row.split()
        if len(fields) != 8:
            raise SceneFormatError(path, i + 2, f"expected 8 fields, got {len(fields)}")
        try:
            pts[i] = [float(v) for v in fields[:6]]
            inst[i] = int(fields[6])
            cls[i] = int(fields[7])
        except ValueError as e:
            raise SceneFormatError(path, i + 2, str(e)) from None
    try:
        scene = Scene(pts, inst, cls, g)
    except ValueError as e:
        raise SceneFormatError(path, 1, str(e)) from None
    return scene, GroundTruth.from_scene(scene)


# --- synthetic generator -------------------------------------------------------


@dataclass
class GeneratorConfig:
    min_instances: int = 2
    max_instances: int = 4
    shapes: tuple[str, ...] = SHAPES
    points_per_instance: tuple[int, int] = (200, 320)
    floor_points: int = 600
    room_size: float = 3.0
    object_size: tuple[float, float] = (0.35, 0.6)
    min_gap: float = 0.25
    noise_sigma: float = 0.005
    color_jitter: float = 0.05
    num_classes: int = 3

    def validate(self):
        if not 0 <= self.min_instances <= self.max_instances:
            raise ValueError("instance range must satisfy 0 <= min <= max")
        if self.max_instances > 0 and (self.points_per_instance[0] < 1 or self.points_per_instance[1] < self.points_per_instance[0]):
            raise ValueError("points_per_instance must be a positive range")
        if self.floor_points < 0:
            raise ValueError("floor_points must be >= 0")
        if self.floor_points == 0 and self.max_instances == 0:
            raise ValueError("generator would produce an empty scene")
        if self.floor_points == 0 and self.min_instances == 0:
            raise ValueError("generator could produce an empty scene")
        if self.num_classes < 1 or not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ValueError("need num_classes >= 1 and shapes from box/sphere/cylinder")
        if self.room_size <= 0 or self.object_size[0] <= 0 or self.object_size[1] < self.object_size[0]:
            raise ValueError("bad room/object size")


# class palette; instances jitter around their class colour
_PALETTE = np.array(
    [[0.85, 0.2, 0.2], [0.2, 0.75, 0.25], [0.2, 0.3, 0.9], [0.9, 0.8, 0.15], [0.7, 0.2, 0.8], [0.1, 0.8, 0.8]]
)
_FLOOR_RGB = np.array([0.5, 0.5, 0.5])


def _class_color(c: int) -> np.ndarray:
    if c < len(_PALETTE):
        return _PALETTE[c]
    return np.random.default_rng(1000 + c).uniform(0.1, 0.9, 3)


def _surface_samples(rng, shape: str, n: int, size: float) -> np.ndarray:
    """Points on the surface of a primitive resting on z=0, centred at the origin in xy."""
    h = size / 2
    if shape == "box":
        # area-weighted faces of a cube of side ``size``, bottom face excluded
        face = rng.integers(0, 5, n)
        u, v = rng.uniform(-h, h, n), rng.uniform(-h, h, n)
        pts = np.empty((n, 3))
        for f, (ax, sign) in enumerate([(0, -1), (0, 1), (1, -1), (1, 1), (2, 1)]):
            sel = face == f
            other = [a for a in range(3) if a != ax]
            pts[sel, ax] = sign * h
            pts[sel, other[0]] = u[sel]
            pts[sel, other[1]] = v[sel]
        pts[:, 2] += h
        return pts
    if shape == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * h + np.array([0.0, 0.0, h])
    if shape == "cylinder":
        r = 0.35 * size
        theta = rng.uniform(0, 2 * np.pi, n)
        top = rng.uniform(size=n) < 0.2
        rad = np.where(top, r * np.sqrt(rng.uniform(size=n)), r)
        z = np.where(top, size * 1.4, rng.uniform(0, size * 1.4, n))
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    raise ValueError(f"unknown shape {shape!r}")


def _place(rng, sizes: list[float], cfg: GeneratorConfig) -> list[np.ndarray]:
    centres: list[np.ndarray] = []
    for s in sizes:
        for _ in range(500):
            c = rng.uniform(s, cfg.room_size - s, 2)
            if all(np.linalg.norm(c - o) > (s + so) / 2 * 1.2 + cfg.min_gap for o, so in zip(centres, sizes)):
                centres.append(c)
                break
        else:
            raise ValueError("could not place objects without overlap; enlarge room_size")
    return centres


def generate_scene(cfg: GeneratorConfig, seed: int) -> tuple[Scene, GroundTruth]:
    """Objects on a floor plane; class decides the primitive and base colour."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    count = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    classes = rng.integers(0, cfg.num_classes, count)
    sizes = list(rng.uniform(*cfg.object_size, count))
    centres = _place(rng, sizes, cfg)

    chunks, inst, cls = [], [], []
    if cfg.floor_points:
        xy = rng.uniform(0, cfg.room_size, (cfg.floor_points, 2))
        floor = np.column_stack([xy, np.zeros(cfg.floor_points)])
        rgb = _FLOOR_RGB + rng.normal(0, cfg.color_jitter, (cfg.floor_points, 3))
        chunks.append(np.column_stack([floor, rgb]))
        inst.append(np.full(cfg.floor_points, -1))
        cls.append(np.full(cfg.floor_points, -1))
    for k in range(count):
        c = int(classes[k])
        n = int(rng.integers(cfg.points_per_instance[0], cfg.points_per_instance[1] + 1))
        shape = cfg.shapes[c % len(cfg.shapes)]
        xyz = _surface_samples(rng, shape, n, sizes[k])
        xyz[:, :2] += centres[k]
        tint = _class_color(c) + rng.normal(0, cfg.color_jitter, 3)
        rgb = tint + rng.normal(0, cfg.color_jitter, (n, 3))
        chunks.append(np.column_stack([xyz, rgb]))
        inst.append(np.full(n, k))
        cls.append(np.full(n, c))
    pts = np.concatenate(chunks)
    pts[:, :3] += rng.normal(0, cfg.noise_sigma, (len(pts), 3))
    pts[:, 2] = np.abs(pts[:, 2])  # keep the floor noise inside the room box
    pts[:, :2] = np.clip(pts[:, :2], 0.0, cfg.room_size)
    pts[:, 3:] = np.clip(pts[:, 3:], 0.0, 1.0)
    perm = rng.permutation(len(pts))
    scene = Scene(pts[perm], np.concatenate(inst)[perm].astype(np.int64), np.concatenate(cls)[perm].astype(np.int64), cfg.num_classes)
    return scene, GroundTruth.from_scene(scene)


# --- voxelization ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    voxel_size: float
    keys: np.ndarray  # (M, 3) int64, lexicographically sorted
    point_voxel: np.ndarray  # (N,) voxel index of each point
    centers: np.ndarray = field(repr=False)  # (M, 3)

    @property
    def m(self) -> int:
        return len(self.keys)

    def members(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.point_voxel == v)

    def member_lists(self) -> list[np.ndarray]:
        order = np.argsort(self.point_voxel, kind="stable")
        bounds = np.searchsorted(self.point_voxel[order], np.arange(self.m + 1))
        return [order[bounds[i] : bounds[i + 1]] for i in range(self.m)]


def voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(np.asarray(xyz) / voxel_size).astype(np.int64)


def voxelize(scene_or_xyz, voxel_size: float) -> VoxelGrid:
    if not voxel_size > 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    xyz = scene_or_xyz.xyz if isinstance(scene_or_xyz, Scene) else np.asarray(scene_or_xyz, dtype=np.float64)
    keys, inverse = np.unique(voxel_keys(xyz, voxel_size), axis=0, return_inverse=True)
    return VoxelGrid(voxel_size, keys, inverse.reshape(-1), (keys + 0.5) * voxel_size)


def coarsen(keys: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Group integer voxel keys into cells ``factor`` times larger; returns (coarse keys, parent index)."""
    coarse, inverse = np.unique(np.floor_divide(keys, factor), axis=0, return_inverse=True)
    return coarse, inverse.reshape(-1)
