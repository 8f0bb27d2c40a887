"""Deterministic synthetic generator of paired visible/narrowband fruit images.

Each fruit is a flat-shaded ellipse whose in-plane orientation follows the
turntable angle. Defects are irregular blobs pinned to azimuth positions on
the fruit surface: a blob is visible only when its azimuth is within 90
degrees of the view angle, and its projected width shrinks with the cosine
of that offset. Every pixel's pre-noise value is the band-sampled intensity
of its material (base skin, or a severity blend of skin and defect
material); Gaussian noise is added, then the image is quantized to 8 bits.

All randomness is derived from named seed chains, never global state, so
any (fruit, view, mode) renders identically regardless of scheduling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutputNotWritable
from .imio import quantize, save_png
from .manifest import DEFECT_CLASSES, CaptureRecord, Manifest, save_manifest
from .spectra import (
    BACKGROUND,
    DEFECT_CURVES,
    HEALTHY_SKIN,
    NARROWBAND_660,
    STAIN_RIM_CURVE,
    ReflectanceCurve,
    SpectralBand,
    sample_intensity,
    sample_visible,
)

MODE_BAND = "band"
MODE_VISIBLE = "visible"

# fruit ellipse semi-axes as fractions of image width/height
FRUIT_RX_FRAC = 0.38
FRUIT_RY_FRAC = 0.40
# defect centers are pulled inside the silhouette by this factor
SURFACE_MARGIN = 0.90
# projected blob width never collapses entirely at grazing azimuth
MIN_FORESHORTEN = 0.2
MIN_BLOB_RADIUS_PX = 1.5


@dataclass(frozen=True)
class BlobRegion:
    """Irregular elliptical blob on the fruit surface.

    azimuth_deg positions the blob around the rotation axis; height in
    [-1, 1] positions it vertically. Radii are fractions of the fruit
    semi-axes. The boundary radius wobbles as
    1 + irregularity * sin(lobes * psi + phase).
    """

    azimuth_deg: float
    height: float
    radius_az: float
    radius_h: float
    irregularity: float = 0.3
    lobes: int = 5
    phase: float = 0.0


@dataclass(frozen=True)
class DefectSpec:
    defect_class: str
    region: BlobRegion
    severity: float
    curve: ReflectanceCurve

    def __post_init__(self):
        if not 0.0 < self.severity <= 1.0:
            raise ValueError(f"severity must be in (0, 1], got {self.severity}")


@dataclass(frozen=True)
class FruitScene:
    fruit_id: str
    base_curve: ReflectanceCurve
    defects: tuple[DefectSpec, ...]
    rng_seed: int


@dataclass
class GenConfig:
    fruits_per_class: int | dict[str, int] = 2
    views_per_fruit: int = 4
    resolution: tuple[int, int] = (256, 222)  # (width, height)
    noise_sigma: float = 0.02
    severity_range: tuple[float, float] = (0.7, 1.0)
    master_seed: int = 42
    output_dir: str = "synth_out"

    def fruits_for(self, defect_class: str) -> int:
        if isinstance(self.fruits_per_class, dict):
            return int(self.fruits_per_class[defect_class])
        return int(self.fruits_per_class)

    @classmethod
    def from_json(cls, path: str | Path) -> "GenConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "GenConfig":
        cfg = cls()
        for key in ("fruits_per_class", "views_per_fruit", "noise_sigma", "master_seed", "output_dir"):
            if key in doc:
                setattr(cfg, key, doc[key])
        if "resolution" in doc:
            cfg.resolution = (int(doc["resolution"][0]), int(doc["resolution"][1]))
        if "severity_range" in doc:
            cfg.severity_range = (float(doc["severity_range"][0]), float(doc["severity_range"][1]))
        return cfg

    def to_dict(self) -> dict:
        return {
            "fruits_per_class": self.fruits_per_class,
            "views_per_fruit": self.views_per_fruit,
            "resolution": list(self.resolution),
            "noise_sigma": self.noise_sigma,
            "severity_range": list(self.severity_range),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
        }


def expected_counts(config: GenConfig) -> dict[str, int]:
    """Records per class the generator will produce: fruits x views."""
    return {c: config.fruits_for(c) * config.views_per_fruit for c in DEFECT_CLASSES}


# --- scene construction -----------------------------------------------------
#
# Per-class geometry is tuned so narrowband images separate the classes by
# simple pooled statistics: bruises are a few mildly dark mid-size blobs,
# stains many small near-black speckles, rot a handful of large near-black
# regions. Components are spread evenly in azimuth so at least one defect is
# visible from every view angle and the visible defect area stays roughly
# constant as the fruit rotates.

_CLASS_GEOMETRY = {
    # n blobs, base radius (fraction of fruit radius), irregularity, lobes.
    # Sized so every class removes a comparable amount of total narrowband
    # energy: classes then differ by texture (interior level, blob scale,
    # stain rims), not by a single global-brightness axis.
    "bruise": (7, 0.30, 0.25, 4),
    "stain": (20, 0.105, 0.35, 7),
    "rot": (5, 0.24, 0.30, 4),
}
STAIN_RIM_RATIO = 1.4

# vertical placement cycle for defect components; fruits of one class share
# the same layout up to azimuth offset and small jitters, which keeps the
# within-class image statistics tight enough for desk-scale training budgets
_HEIGHT_CYCLE = (0.0, 0.35, -0.35, 0.18, -0.18, 0.45, -0.45)


def _scene_seed(master_seed: int, class_index: int, fruit_index: int) -> int:
    seq = np.random.SeedSequence(master_seed, spawn_key=(class_index, fruit_index))
    return int(seq.generate_state(1, np.uint64)[0] % (2**63))


def build_scene(defect_class: str, fruit_index: int, master_seed: int,
                severity_range: tuple[float, float] = (0.7, 1.0)) -> FruitScene:
    """Construct one fruit's scene deterministically from the master seed."""
    class_index = DEFECT_CLASSES.index(defect_class)
    seed = _scene_seed(master_seed, class_index, fruit_index)
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(class_index, fruit_index, 1)))

    # keep skin-tone variation well below the class-separating intensity tiers
    base = HEALTHY_SKIN.scaled(rng.uniform(0.995, 1.005))
    n, r_base, irregularity, lobes = _CLASS_GEOMETRY[defect_class]
    curve = DEFECT_CURVES[defect_class]
    sev_lo, sev_hi = severity_range

    defects = []
    azimuth_offset = rng.uniform(0.0, 360.0)
    for k in range(n):
        azimuth = (azimuth_offset + 360.0 * k / n + rng.uniform(-6.0, 6.0)) % 360.0
        radius = r_base * rng.uniform(0.97, 1.03)
        height = _HEIGHT_CYCLE[k % len(_HEIGHT_CYCLE)] + rng.uniform(-0.05, 0.05)
        severity = rng.uniform(sev_lo, sev_hi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        if defect_class == "stain":
            # bright rim drawn first, dark core painted over its center
            defects.append(DefectSpec(
                defect_class=defect_class,
                region=BlobRegion(azimuth, height, radius * STAIN_RIM_RATIO,
                                  radius * STAIN_RIM_RATIO, irregularity, lobes, phase),
                severity=severity,
                curve=STAIN_RIM_CURVE,
            ))
        defects.append(DefectSpec(
            defect_class=defect_class,
            region=BlobRegion(
                azimuth_deg=azimuth,
                height=height,
                radius_az=radius,
                radius_h=radius * rng.uniform(0.95, 1.05),
                irregularity=irregularity,
                lobes=lobes,
                phase=phase,
            ),
            severity=severity,
            curve=curve,
        ))
    return FruitScene(
        fruit_id=f"{defect_class}_{fruit_index:03d}",
        base_curve=base,
        defects=tuple(defects),
        rng_seed=seed,
    )


# --- rendering --------------------------------------------------------------

def _wrap_angle(deg: float) -> float:
    """Wrap to (-180, 180]."""
    w = (deg + 180.0) % 360.0 - 180.0
    return 180.0 if w == -180.0 else w


def _visible_defects(scene: FruitScene, angle_deg: float) -> list[tuple[DefectSpec, float]]:
    out = []
    for d in scene.defects:
        delta = _wrap_angle(d.region.azimuth_deg - angle_deg)
        if abs(delta) < 90.0:
            out.append((d, delta))
    return out


def render_view(scene: FruitScene, angle_deg: float, mode: str, noise_sigma: float,
                resolution: tuple[int, int] = (256, 222),
                band: SpectralBand = NARROWBAND_660) -> tuple[np.ndarray, np.ndarray]:
    """Render one view; returns (image uint8, mask uint8 with {0, 255}).

    The image is (H, W) for band mode, (H, W, 3) for visible mode.
    Deterministic given (scene.rng_seed, angle_deg, mode).
    """
    if mode not in (MODE_BAND, MODE_VISIBLE):
        raise ValueError(f"mode must be '{MODE_BAND}' or '{MODE_VISIBLE}', got {mode!r}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    width, height = resolution
    cx, cy = width / 2.0, height / 2.0
    rx, ry = FRUIT_RX_FRAC * width, FRUIT_RY_FRAC * height

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # the silhouette ellipse rotates in-plane with the view angle; defects
    # live in the upright turntable frame (they shift horizontally as the
    # fruit spins, their height stays put)
    xr = (xx - cx) * cos_t + (yy - cy) * sin_t
    yr = -(xx - cx) * sin_t + (yy - cy) * cos_t
    silhouette = (xr / rx) ** 2 + (yr / ry) ** 2 <= 1.0
    xl = xx - cx
    yl = yy - cy

    # material map: -1 background, 0 base skin, k+1 -> defect k
    material = np.full((height, width), -1, dtype=np.int32)
    material[silhouette] = 0
    mask = np.zeros((height, width), dtype=bool)

    # defect centers stay inside the circle inscribed in the ellipse, which
    # the rotated silhouette contains at every view angle
    anchor_radius = SURFACE_MARGIN * min(rx, ry)
    for k, (defect, delta) in enumerate(_visible_defects(scene, angle_deg)):
        region = defect.region
        d_rad = math.radians(delta)
        u = 0.85 * region.height
        bx = anchor_radius * math.sin(d_rad) * math.sqrt(max(0.0, 1.0 - u * u))
        by = anchor_radius * u
        r_x = max(rx * region.radius_az * max(math.cos(d_rad), MIN_FORESHORTEN), MIN_BLOB_RADIUS_PX)
        r_y = max(ry * region.radius_h, MIN_BLOB_RADIUS_PX)
        dx = (xl - bx) / r_x
        dy = (yl - by) / r_y
        rho = np.sqrt(dx * dx + dy * dy)
        psi = np.arctan2(dy, dx)
        boundary = 1.0 + region.irregularity * np.sin(region.lobes * psi + region.phase)
        blob = (rho <= boundary) & silhouette
        if not blob.any():
            # grazing-angle fallback: the anchor pixel is inside the silhouette
            px = min(max(int(round(bx + cx)), 0), width - 1)
            py = min(max(int(round(by + cy)), 0), height - 1)
            blob[py, px] = True
        material[blob] = k + 1
        mask |= blob

    # one intensity per material, sampled through the spectral model
    visible = _visible_defects(scene, angle_deg)
    curves = [BACKGROUND, scene.base_curve] + [
        scene.base_curve.blend(d.curve, d.severity) for d, _ in visible
    ]
    if mode == MODE_BAND:
        lut = np.array([sample_intensity(c, band) for c in curves], dtype=np.float64)
        image = lut[material + 1]
    else:
        lut = np.array([sample_visible(c) for c in curves], dtype=np.float64)
        image = lut[material + 1]

    if noise_sigma > 0:
        mode_key = 0 if mode == MODE_BAND else 1
        angle_key = int(round(angle_deg * 1000.0)) % (2**31)
        rng = np.random.default_rng(
            np.random.SeedSequence(scene.rng_seed, spawn_key=(angle_key, mode_key))
        )
        image = image + rng.normal(0.0, noise_sigma, size=image.shape)

    return quantize(image), np.where(mask, 255, 0).astype(np.uint8)


# --- dataset generation -----------------------------------------------------

def _render_record(task: tuple) -> None:
    scene, angle, noise_sigma, resolution, vis_path, nb_path, mask_path = task
    vis, _ = render_view(scene, angle, MODE_VISIBLE, noise_sigma, resolution)
    nb, mask = render_view(scene, angle, MODE_BAND, noise_sigma, resolution)
    save_png(vis_path, vis)
    save_png(nb_path, nb)
    save_png(mask_path, mask)


def generate_dataset(config: GenConfig, jobs: int = 1) -> Manifest:
    """Render the full dataset to disk and return its manifest.

    Layout: <out>/<class>/<fruit_id>/<view>_{vis,nb,mask}.png with
    manifest.json at the output root. Deterministic for a fixed master seed,
    independent of the worker count.
    """
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputNotWritable(f"{out}: {exc}") from exc

    records: list[CaptureRecord] = []
    tasks = []
    for defect_class in DEFECT_CLASSES:
        for fruit_index in range(config.fruits_for(defect_class)):
            scene = build_scene(defect_class, fruit_index, config.master_seed, config.severity_range)
            fruit_dir = out / defect_class / scene.fruit_id
            fruit_dir.mkdir(parents=True, exist_ok=True)
            for view in range(config.views_per_fruit):
                angle = 360.0 * view / config.views_per_fruit
                rel = f"{defect_class}/{scene.fruit_id}/{view:03d}"
                tasks.append((
                    scene, angle, config.noise_sigma, config.resolution,
                    out / f"{rel}_vis.png", out / f"{rel}_nb.png", out / f"{rel}_mask.png",
                ))
                records.append(CaptureRecord(
                    fruit_id=scene.fruit_id,
                    view_index=view,
                    defect_class=defect_class,
                    visible_path=f"{rel}_vis.png",
                    narrowband_path=f"{rel}_nb.png",
                    mask_path=f"{rel}_mask.png",
                ))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_render_record, tasks, chunksize=4))
    else:
        for task in tasks:
            _render_record(task)

    manifest = Manifest(records=records, class_names=DEFECT_CLASSES, root=out)
    save_manifest(manifest, out / "manifest.json")
    return manifest
