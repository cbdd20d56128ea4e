"""Synthetic referring-video segmentation data.

Generates seeded videos of moving geometric shapes with exact (hard,
antialiasing-free) ground-truth masks, builds referring expressions from a
closed grammar, and reads/writes the dataset manifest format:

    <root>/manifest.json                  {"split": ..., "entries": [...]}
    <root>/frames/<video_id>/{t:05d}.png  RGB frames
    <root>/masks/<video_id>/{t:05d}.png   single-channel masks, values {0, 255}

Expression grammar (closed; the text vocabulary is built over it):

    attribute   "the {color} {shape}"               query_type=short
    motion      "the {shape} moving {direction}"    query_type=short
    relational  "the object moving fastest"         query_type=long

Motion and relational scenes always contain a distractor that matches the
referent's shape and color exactly and differs only in how it moves, so no
single frame identifies the referent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
}
MOTION_KINDS = ("static", "linear", "fastest-of-group")
DIRECTIONS = {
    "rightward": (1, 0),
    "leftward": (-1, 0),
    "downward": (0, 1),
    "upward": (0, -1),
}
FAMILIES = ("attribute", "motion", "relational")

VIDEO_TOKEN = "<VIDEO>"
TRK_TOKEN = "<TRK>"
PROMPT_TEMPLATE = (
    "USER: <VIDEO> Can you segment {description} in this scene? ASSISTANT:"
)
ANSWER_TEXT = "Sure, it is <TRK>."

_LANE_STEP = 16  # lane pitch in pixels; shapes are sized to fit one lane


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class VideoSample:
    """One referring-segmentation sample: frames, target masks, expression."""

    video_id: str
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    gt_masks: np.ndarray  # (T, H, W) uint8 in {0, 1}
    expression: str
    query_type: str  # "short" | "long"
    source: str = "synthetic"

    def validate(self) -> None:
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (T,H,W,C), got {self.frames.shape}")
        if self.gt_masks.ndim != 3:
            raise ValueError(f"gt_masks must be (T,H,W), got {self.gt_masks.shape}")
        if self.frames.shape[:3] != self.gt_masks.shape:
            raise ValueError(
                f"frames {self.frames.shape} and masks {self.gt_masks.shape} disagree"
            )
        if not np.isin(self.gt_masks, (0, 1)).all():
            raise ValueError("gt_masks must contain only 0 and 1")
        if not self.expression.strip():
            raise ValueError("expression must be non-empty")
        if self.query_type not in ("short", "long"):
            raise ValueError(f"unknown query_type {self.query_type!r}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class SynthConfig:
    num_videos: int = 8
    T: int = 8
    H: int = 64
    W: int = 64
    shape_palette: tuple[tuple[str, str], ...] = tuple(
        (s, c) for s in SHAPES for c in COLORS
    )
    motion_kinds: frozenset[str] = frozenset(MOTION_KINDS)
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ConfigError(f"num_videos must be >= 1, got {self.num_videos}")
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        if self.H < 16 or self.W < 16:
            raise ConfigError(f"H and W must be >= 16, got {self.H}x{self.W}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if not self.shape_palette:
            raise ConfigError("shape_palette must be non-empty")
        for shape, color in self.shape_palette:
            if shape not in SHAPES or color not in COLORS:
                raise ConfigError(f"unknown palette entry {(shape, color)!r}")
        unknown = set(self.motion_kinds) - set(MOTION_KINDS)
        if unknown:
            raise ConfigError(f"unknown motion kinds {sorted(unknown)}")
        if not self.motion_kinds:
            raise ConfigError("motion_kinds must be non-empty")


@dataclass
class ManifestEntry:
    video_id: str
    frames_dir: str
    masks_dir: str
    expression: str
    query_type: str
    source: str


@dataclass
class DatasetManifest:
    """Index of one dataset split; paths are relative to the manifest file."""

    split: str
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def validate(self, check_paths: bool = True) -> None:
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        ids = [e.video_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate video_ids in manifest")
        if check_paths:
            for e in self.entries:
                for d in (e.frames_dir, e.masks_dir):
                    if not (self.root / d).is_dir():
                        raise DataError(f"missing directory: {self.root / d}")

    def entry(self, video_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.video_id == video_id:
                return e
        raise KeyError(f"video_id {video_id!r} not in manifest")

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        payload = {
            "split": self.split,
            "entries": [vars(e) for e in self.entries],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        manifest = cls(
            split=payload["split"],
            entries=[ManifestEntry(**e) for e in payload["entries"]],
            root=path.parent,
        )
        manifest.validate(check_paths=True)
        return manifest


# ---------------------------------------------------------------------------
# scene planning
# ---------------------------------------------------------------------------


@dataclass
class ObjectSpec:
    """A rigid shape moving on a straight integer-step trajectory."""

    shape: str
    color: str
    half: int  # half extent in pixels (radius for circles)
    x0: int
    y0: int
    vx: int
    vy: int

    def center_at(self, t: int) -> tuple[int, int]:
        return self.x0 + self.vx * t, self.y0 + self.vy * t

    @property
    def speed(self) -> int:
        return abs(self.vx) + abs(self.vy)

    @property
    def direction(self) -> str | None:
        for name, (dx, dy) in DIRECTIONS.items():
            if (np.sign(self.vx), np.sign(self.vy)) == (dx, dy):
                return name
        return None


@dataclass
class ScenePlan:
    video_id: str
    family: str
    expression: str
    query_type: str
    objects: list[ObjectSpec]
    referent: int  # index into objects

    def to_json_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "family": self.family,
            "expression": self.expression,
            "query_type": self.query_type,
            "referent": self.referent,
            "objects": [vars(o) for o in self.objects],
        }


def expression_family(expression: str) -> str:
    """Classify an in-grammar expression into its family."""
    if expression == "the object moving fastest":
        return "relational"
    if " moving " in expression:
        return "motion"
    return "attribute"


def grammar_expressions() -> list[str]:
    """Every expression the closed grammar can produce."""
    out = [f"the {color} {shape}" for shape in SHAPES for color in COLORS]
    out += [f"the {shape} moving {d}" for shape in SHAPES for d in DIRECTIONS]
    out.append("the object moving fastest")
    return out


def grammar_corpus() -> list[str]:
    """Full conversation strings over the closed grammar (vocabulary source)."""
    return [fill_template(e) for e in grammar_expressions()]


def _available_families(motion_kinds: frozenset[str]) -> list[str]:
    fams = ["attribute"]
    if "linear" in motion_kinds:
        fams.append("motion")
    if "fastest-of-group" in motion_kinds:
        fams.append("relational")
    return fams


def _velocity(direction: str, speed: int) -> tuple[int, int]:
    dx, dy = DIRECTIONS[direction]
    return dx * speed, dy * speed


def _start_range(extent: int, half: int, v: int, T: int) -> tuple[int, int]:
    # u(t) = u0 + v*t must stay in [half+1, extent-half-2] for t in 0..T-1
    lo, hi = half + 1, extent - half - 2
    disp = v * (T - 1)
    return lo - min(0, disp), hi - max(0, disp)


def _max_speed(extent: int, half: int, T: int) -> int:
    return max(0, (extent - 2 * half - 3) // (T - 1))


def _plan_attempt(
    cfg: SynthConfig, index: int, rng: np.random.Generator
) -> ScenePlan | None:
    family_pool = _available_families(cfg.motion_kinds)
    family = family_pool[index % len(family_pool)]
    horizontal = bool(rng.integers(2) == 0)
    motion_extent = cfg.W if horizontal else cfg.H
    lane_extent = cfg.H if horizontal else cfg.W
    n_lanes = lane_extent // _LANE_STEP
    n_objects = int(rng.integers(2, min(4, n_lanes) + 1)) if n_lanes >= 2 else 0
    if n_objects < 2:
        return None

    halves = [int(rng.integers(4, 7)) for _ in range(n_objects)]
    speed_cap = _max_speed(motion_extent, max(halves), cfg.T)
    dir_names = ("rightward", "leftward") if horizontal else ("downward", "upward")

    palette = list(cfg.shape_palette)
    combo_ids = rng.choice(len(palette), size=min(n_objects, len(palette)), replace=False)
    combos = [palette[int(i)] for i in combo_ids]

    # (shape, color, direction or None, speed) per object; referent is object 0
    specs: list[tuple[str, str, str | None, int]] = []
    static_ok = "static" in cfg.motion_kinds
    linear_ok = "linear" in cfg.motion_kinds

    def referent_speed() -> int:
        # as fast as geometry allows, up to 4: direction must be legible
        return int(rng.integers(min(3, speed_cap), min(4, speed_cap) + 1))

    def random_motion(allow_static: bool = True) -> tuple[str | None, int]:
        moving = linear_ok and (not static_ok or not allow_static or rng.integers(2) == 1)
        if moving and speed_cap >= 2:
            return str(rng.choice(dir_names)), int(rng.integers(2, min(3, speed_cap) + 1))
        return None, 0

    if family == "attribute":
        if len(combos) < n_objects:  # palette too small for all-distinct combos
            return None
        for shape, color in combos:
            d, s = random_motion()
            specs.append((shape, color, d, s))
        referent_shape, referent_color = combos[0]
        expression = f"the {referent_color} {referent_shape}"
        query_type = "short"
    elif family == "motion":
        if speed_cap < 2:
            return None
        shape, color = combos[0]
        direction = str(rng.choice(dir_names))
        opposite = dir_names[1 - dir_names.index(direction)]
        specs.append((shape, color, direction, referent_speed()))
        # the clone shares shape and color and differs only in motion
        if static_ok and rng.integers(3) == 0:
            specs.append((shape, color, None, 0))
        else:
            specs.append((shape, color, opposite, referent_speed()))
        for other_shape, other_color in combos[1:]:
            if other_shape == shape:  # keep (shape, direction) unique to the referent
                continue
            d, s = random_motion()
            specs.append((other_shape, other_color, d, s))
        specs = specs[:n_objects]
        if len(specs) < 2:
            return None
        expression = f"the {shape} moving {direction}"
        query_type = "short"
    else:  # relational
        if speed_cap < 3:
            return None
        shape, color = combos[0]
        top_speed = min(4, speed_cap)
        slow_hi = max(1, top_speed - 2)  # keep a legible speed gap
        specs.append((shape, color, str(rng.choice(dir_names)), top_speed))
        # clone of the referent, strictly slower
        specs.append((shape, color, str(rng.choice(dir_names)), int(rng.integers(1, slow_hi + 1))))
        for other_shape, other_color in combos[1:]:
            specs.append(
                (other_shape, other_color, str(rng.choice(dir_names)), int(rng.integers(1, slow_hi + 1)))
            )
        specs = specs[:n_objects]
        expression = "the object moving fastest"
        query_type = "long"

    lanes = rng.permutation(n_lanes)[: len(specs)]
    objects: list[ObjectSpec] = []
    for (shape, color, direction, speed), lane, half in zip(specs, lanes, halves):
        jitter_max = max(0, (_LANE_STEP // 2) - 1 - half)
        jitter = int(rng.integers(-jitter_max, jitter_max + 1)) if jitter_max else 0
        lane_center = _LANE_STEP // 2 + _LANE_STEP * int(lane) + jitter
        v = _velocity(direction, speed) if direction else (0, 0)
        vu = v[0] if horizontal else v[1]
        lo, hi = _start_range(motion_extent, half, vu, cfg.T)
        if lo > hi:
            return None
        u0 = int(rng.integers(lo, hi + 1))
        x0, y0 = (u0, lane_center) if horizontal else (lane_center, u0)
        objects.append(ObjectSpec(shape, color, half, x0, y0, v[0], v[1]))

    return ScenePlan(
        video_id="",
        family=family,
        expression=expression,
        query_type=query_type,
        objects=objects,
        referent=0,
    )


def plan_scene(cfg: SynthConfig, index: int) -> ScenePlan:
    """Deterministically plan the scene for video `index` under `cfg.seed`."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    for _ in range(100):
        plan = _plan_attempt(cfg, index, rng)
        if plan is None:
            continue
        if _scene_collides(plan, cfg):
            continue
        return plan
    raise DataError(f"could not place shapes for video index {index} after 100 retries")


def _scene_collides(plan: ScenePlan, cfg: SynthConfig) -> bool:
    for t in range(cfg.T):
        masks = [rasterize_object(o, t, cfg.H, cfg.W) for o in plan.objects]
        total = np.zeros((cfg.H, cfg.W), dtype=np.int32)
        for m in masks:
            total += m
        if (total > 1).any():
            return True
    return False


# ---------------------------------------------------------------------------
# rasterization (integer arithmetic only, so masks are exact)
# ---------------------------------------------------------------------------


def rasterize_object(obj: ObjectSpec, t: int, H: int, W: int) -> np.ndarray:
    cx, cy = obj.center_at(t)
    yy, xx = np.mgrid[0:H, 0:W]
    if obj.shape == "circle":
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= obj.half**2
    elif obj.shape == "square":
        inside = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= obj.half
    elif obj.shape == "triangle":
        inside = (
            (yy >= cy - obj.half)
            & (yy <= cy + obj.half)
            & (2 * np.abs(xx - cx) <= (yy - (cy - obj.half)))
        )
    else:
        raise ValueError(f"unknown shape {obj.shape!r}")
    return inside.astype(np.uint8)


def render_scene(plan: ScenePlan, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Render (frames uint8 (T,H,W,3), referent masks uint8 (T,H,W))."""
    frames = np.zeros((cfg.T, cfg.H, cfg.W, 3), dtype=np.uint8)
    gt = np.zeros((cfg.T, cfg.H, cfg.W), dtype=np.uint8)
    for t in range(cfg.T):
        for i, obj in enumerate(plan.objects):
            m = rasterize_object(obj, t, cfg.H, cfg.W)
            frames[t][m == 1] = COLORS[obj.color]
            if i == plan.referent:
                gt[t] = m
    return frames, gt


# ---------------------------------------------------------------------------
# generation and loading
# ---------------------------------------------------------------------------


def generate_synthetic_dataset(
    cfg: SynthConfig, out_dir: Path | str, split: str = "train"
) -> DatasetManifest:
    """Generate a seeded dataset under `out_dir` and return its manifest.

    Writes frames, masks, `manifest.json`, and a `scene_meta.json` sidecar
    recording the exact object parameters behind each video.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    meta: dict[str, dict] = {}
    for index in range(cfg.num_videos):
        plan = replace(plan_scene(cfg, index), video_id=f"{split}_{index:04d}")
        frames, gt = render_scene(plan, cfg)
        frames_dir = out_dir / "frames" / plan.video_id
        masks_dir = out_dir / "masks" / plan.video_id
        frames_dir.mkdir(parents=True, exist_ok=True)
        masks_dir.mkdir(parents=True, exist_ok=True)
        for t in range(cfg.T):
            Image.fromarray(frames[t], mode="RGB").save(frames_dir / f"{t:05d}.png")
            Image.fromarray(gt[t] * 255, mode="L").save(masks_dir / f"{t:05d}.png")
        entries.append(
            ManifestEntry(
                video_id=plan.video_id,
                frames_dir=str(Path("frames") / plan.video_id),
                masks_dir=str(Path("masks") / plan.video_id),
                expression=plan.expression,
                query_type=plan.query_type,
                source="synthetic",
            )
        )
        meta[plan.video_id] = plan.to_json_dict()
    manifest = DatasetManifest(split=split, entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    (out_dir / "scene_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return manifest


def _load_mask_file(path: Path) -> np.ndarray:
    try:
        arr = np.asarray(Image.open(path).convert("L"))
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise DataError(f"mask {path} has values outside {{0, 255}}")
    return (arr == 255).astype(np.uint8)


def load_sample(manifest: DatasetManifest, video_id: str) -> VideoSample:
    """Materialize one manifest entry from disk."""
    entry = manifest.entry(video_id)
    frames_dir = manifest.root / entry.frames_dir
    masks_dir = manifest.root / entry.masks_dir
    frame_files = sorted(frames_dir.glob("*.png"))
    mask_files = sorted(masks_dir.glob("*.png"))
    if not frame_files:
        raise DataError(f"no frames found in {frames_dir}")
    if len(frame_files) != len(mask_files):
        raise DataError(
            f"{video_id}: {len(frame_files)} frames but {len(mask_files)} masks"
        )
    try:
        frames = np.stack(
            [np.asarray(Image.open(p).convert("RGB")) for p in frame_files]
        )
    except OSError as exc:
        raise DataError(f"cannot read frames in {frames_dir}: {exc}") from exc
    masks = np.stack([_load_mask_file(p) for p in mask_files])
    sample = VideoSample(
        video_id=video_id,
        frames=frames.astype(np.float32) / 255.0,
        gt_masks=masks,
        expression=entry.expression,
        query_type=entry.query_type,
        source=entry.source,
    )
    sample.validate()
    return sample


# ---------------------------------------------------------------------------
# preprocessing operations
# ---------------------------------------------------------------------------


def merge_class_masks(instance_masks: np.ndarray) -> np.ndarray:
    """Union N instance masks (N,H,W) in {0,1} into one binary mask (H,W)."""
    instance_masks = np.asarray(instance_masks)
    if instance_masks.ndim != 3 or instance_masks.shape[0] == 0:
        raise ValueError(
            f"expected non-empty (N,H,W) mask stack, got shape {instance_masks.shape}"
        )
    if not np.isin(instance_masks, (0, 1)).all():
        raise ValueError("instance masks must contain only 0 and 1")
    return instance_masks.max(axis=0).astype(np.uint8)


def image_to_pseudo_video(
    image: np.ndarray, mask: np.ndarray, T: int, video_id: str = "pseudo",
    expression: str = "the object", query_type: str = "short",
) -> VideoSample:
    """Duplicate a single image and mask into a T-frame video sample."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint8)
    if image.ndim != 3 or mask.shape != image.shape[:2]:
        raise ValueError(
            f"image (H,W,C) and mask (H,W) disagree: {image.shape} vs {mask.shape}"
        )
    sample = VideoSample(
        video_id=video_id,
        frames=np.repeat(image[None], T, axis=0),
        gt_masks=np.repeat(mask[None], T, axis=0),
        expression=expression,
        query_type=query_type,
        source="pseudo_video",
    )
    sample.validate()
    return sample


def fill_template(description: str) -> str:
    """Build the full conversation string for one referring expression."""
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    return (
        f"USER: <VIDEO> Can you segment {description} in this scene? "
        f"ASSISTANT: Sure, it is <TRK>."
    )


def prompt_text(description: str) -> str:
    """The user half of the conversation, up to and including 'ASSISTANT:'."""
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    return PROMPT_TEMPLATE.format(description=description)
