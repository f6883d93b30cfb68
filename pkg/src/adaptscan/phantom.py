"""Randomized synthetic ground-truth cases.

A case is a piecewise-constant ellipse composite (a bright structure of
interest inside a dimmer distractor tissue) with a weak band-limited
texture and a smooth low-order phase, plus a set of RSS-normalized coil
sensitivity maps.  Shape parameters are expressed as fractions of the field
of view, with the grid center at 0 and the edges at +/-0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from adaptscan import downstream
from adaptscan.common import DISTRACTOR, STRUCTURE, PhantomKind, derive_seed

# Every randomized parameter and its sampling range.  A value in
# ``PhantomSpec.shape_params`` overrides the range: a number fixes the
# parameter, a (lo, hi) pair replaces the range.
KNEE_PARAM_RANGES: dict[str, tuple[float, float]] = {
    "body_cx": (-0.03, 0.03),
    "body_cy": (-0.03, 0.03),
    "body_a": (0.33, 0.40),
    "body_b": (0.30, 0.36),
    "roi_dx": (-0.06, 0.06),
    "roi_dy": (-0.05, 0.05),
    "roi_a": (0.12, 0.18),
    "roi_b": (0.075, 0.11),
    "roi_angle": (0.0, math.pi),
    "tissue_intensity": (0.35, 0.45),
    "roi_intensity": (0.85, 0.95),
    "texture_frac": (0.05, 0.10),
    "phase_c0": (-math.pi, math.pi),
    "phase_cx": (-1.0, 1.0),
    "phase_cy": (-1.0, 1.0),
    "phase_cxy": (-1.0, 1.0),
}

CARDIAC_PARAM_RANGES: dict[str, tuple[float, float]] = {
    "body_cx": (-0.03, 0.03),
    "body_cy": (-0.03, 0.03),
    "body_a": (0.35, 0.40),
    "body_b": (0.30, 0.36),
    "roi_dx": (-0.06, 0.06),
    "roi_dy": (-0.05, 0.05),
    "roi_a": (0.12, 0.16),
    "roi_b": (0.10, 0.14),
    "roi_angle": (0.0, math.pi),
    "ejection_ratio": (0.30, 0.75),
    "tissue_intensity": (0.30, 0.40),
    "roi_intensity": (0.85, 0.95),
    "texture_frac": (0.05, 0.10),
    "phase_c0": (-math.pi, math.pi),
    "phase_cx": (-1.0, 1.0),
    "phase_cy": (-1.0, 1.0),
    "phase_cxy": (-1.0, 1.0),
}

PARAM_RANGES = {
    PhantomKind.KNEE_STATIC: KNEE_PARAM_RANGES,
    PhantomKind.CARDIAC_TWO_PHASE: CARDIAC_PARAM_RANGES,
}

# Texture is band-limited to |k| <= grid / TEXTURE_BAND.
TEXTURE_BAND = 8
# Shapes must stay this many pixels away from the grid edge.
EDGE_MARGIN_PX = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind = PhantomKind.KNEE_STATIC
    grid_size: int = 64
    voxel_spacing: tuple[float, float, float] = (2.5, 2.5, 5.0)
    n_coils: int = 4
    shape_params: Mapping[str, float | tuple[float, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        object.__setattr__(self, "voxel_spacing", tuple(float(v) for v in self.voxel_spacing))
        g = self.grid_size
        if g < 16 or g & (g - 1):
            raise ValueError(f"grid_size must be a power of two >= 16, got {g}")
        if self.n_coils < 1:
            raise ValueError(f"n_coils must be >= 1, got {self.n_coils}")
        if len(self.voxel_spacing) != 3 or min(self.voxel_spacing) <= 0:
            raise ValueError(f"voxel_spacing must be three positive values, got {self.voxel_spacing}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        unknown = set(self.shape_params) - set(PARAM_RANGES[self.kind])
        if unknown:
            raise ValueError(f"unknown shape parameters for {self.kind.value}: {sorted(unknown)}")


@dataclass(frozen=True, eq=False)
class CoilSensitivities:
    maps: np.ndarray  # (n_coils, H, W) complex

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]


@dataclass(frozen=True, eq=False)
class GroundTruthCase:
    kind: PhantomKind
    image: np.ndarray
    labels: np.ndarray
    voxel_spacing: tuple[float, float, float]
    true_metric: float
    coils: CoilSensitivities
    seed: int
    params: dict[str, float]
    phase_images: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None

    @property
    def phases(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        """(image, labels) per acquired phase: one for knee, (ED, ES) for cardiac."""
        if self.phase_images is not None:
            return self.phase_images
        return ((self.image, self.labels),)


def _grid_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(n) + 0.5) / n - 0.5
    return np.meshgrid(u, u, indexing="ij")  # (y, x)


def _ellipse(yy, xx, cy, cx, a, b, angle=0.0) -> np.ndarray:
    """Pixels whose centers fall inside an ellipse (a along rotated x)."""
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = xx - cx, yy - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _ellipse_extent(a, b, angle) -> tuple[float, float]:
    """Half-widths of the rotated ellipse's bounding box (y, x)."""
    c, s = math.cos(angle), math.sin(angle)
    return math.hypot(a * s, b * c), math.hypot(a * c, b * s)


def _draw_params(spec: PhantomSpec, rng: np.random.Generator) -> dict[str, float]:
    params = {}
    for name, rng_range in PARAM_RANGES[spec.kind].items():
        override = spec.shape_params.get(name, rng_range)
        if np.ndim(override) == 0:
            params[name] = float(override)
            rng.random()  # keep the draw sequence aligned
        else:
            lo, hi = (float(v) for v in override)
            if hi < lo:
                raise ValueError(f"range for {name} is reversed: {override}")
            params[name] = float(rng.uniform(lo, hi))
    return params


def _check_geometry(p: dict[str, float], grid: int) -> None:
    margin = 0.5 - EDGE_MARGIN_PX / grid
    for key in ("body_a", "body_b", "roi_a", "roi_b"):
        if p[key] <= 0:
            raise ValueError(f"{key} must be positive, got {p[key]}")
    if abs(p["body_cx"]) + p["body_a"] > margin or abs(p["body_cy"]) + p["body_b"] > margin:
        raise ValueError("body ellipse exits the grid")
    ey, ex = _ellipse_extent(p["roi_a"], p["roi_b"], p["roi_angle"])
    cx, cy = p["body_cx"] + p["roi_dx"], p["body_cy"] + p["roi_dy"]
    if abs(cx) + ex > margin or abs(cy) + ey > margin:
        raise ValueError("structure ellipse exits the grid")
    # structure must sit inside the body: test its boundary against the body
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    c, s = math.cos(p["roi_angle"]), math.sin(p["roi_angle"])
    bx = p["roi_dx"] + p["roi_a"] * np.cos(t) * c - p["roi_b"] * np.sin(t) * s
    by = p["roi_dy"] + p["roi_a"] * np.cos(t) * s + p["roi_b"] * np.sin(t) * c
    if np.any((bx / p["body_a"]) ** 2 + (by / p["body_b"]) ** 2 > 1.0):
        raise ValueError("structure ellipse exits the surrounding tissue")
    if not 0.0 <= p.get("ejection_ratio", 0.0) < 1.0:
        raise ValueError(f"ejection_ratio must lie in [0, 1), got {p['ejection_ratio']}")


def _texture(grid: int, rng: np.random.Generator) -> np.ndarray:
    """Band-limited zero-mean field scaled to unit peak magnitude."""
    white = rng.standard_normal((grid, grid))
    k = np.fft.fftfreq(grid) * grid
    keep = np.hypot(k[:, None], k[None, :]) <= grid / TEXTURE_BAND
    field_ = np.fft.ifft2(np.fft.fft2(white) * keep).real
    field_ -= field_.mean()
    return field_ / np.abs(field_).max()


def _phase(p: dict[str, float], yy, xx) -> np.ndarray:
    return p["phase_c0"] + p["phase_cx"] * xx + p["phase_cy"] * yy + p["phase_cxy"] * xx * yy


def _render(p, yy, xx, texture, roi_scale=1.0):
    body = _ellipse(yy, xx, p["body_cy"], p["body_cx"], p["body_a"], p["body_b"])
    roi = _ellipse(
        yy,
        xx,
        p["body_cy"] + p["roi_dy"],
        p["body_cx"] + p["roi_dx"],
        p["roi_a"] * roi_scale,
        p["roi_b"] * roi_scale,
        p["roi_angle"],
    )
    labels = np.zeros(yy.shape, dtype=np.int32)
    labels[body] = DISTRACTOR
    labels[roi & body] = STRUCTURE
    contrast = p["roi_intensity"] - p["tissue_intensity"]
    mag = np.where(labels == STRUCTURE, p["roi_intensity"], 0.0)
    mag = np.where(labels == DISTRACTOR, p["tissue_intensity"], mag)
    mag = mag + np.where(labels > 0, p["texture_frac"] * contrast * texture, 0.0)
    image = mag * np.exp(1j * _phase(p, yy, xx))
    return image, labels


def make_coils(grid_size: int, n_coils: int, seed: int) -> CoilSensitivities:
    """Smooth complex coil maps, RSS-normalized to unit magnitude per pixel.

    Coils sit on a ring just outside the field of view; each map is a broad
    Gaussian magnitude falloff times a gentle linear phase.
    """
    if n_coils < 1:
        raise ValueError(f"n_coils must be >= 1, got {n_coils}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid_coords(grid_size)
    maps = np.empty((n_coils, grid_size, grid_size), dtype=np.complex128)
    for c in range(n_coils):
        theta = 2 * np.pi * c / n_coils + rng.uniform(-0.5, 0.5) * np.pi / n_coils
        ring = rng.uniform(0.6, 0.8)
        width = rng.uniform(0.35, 0.5)
        cy, cx = ring * math.sin(theta), ring * math.cos(theta)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        ph = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
        maps[c] = mag * np.exp(1j * ph)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSensitivities(maps / rss)


def compute_metric(kind: PhantomKind, phases, voxel_spacing) -> float:
    """Clinical metric from label maps: structure volume (cm^3) or LVEF (%)."""
    kind = PhantomKind(kind)
    vols = [downstream.volume(labels, STRUCTURE, voxel_spacing) for _, labels in phases]
    if kind is PhantomKind.KNEE_STATIC:
        return vols[0]
    return downstream.ejection_fraction(vols[0], vols[1])


def make_case(spec: PhantomSpec) -> GroundTruthCase:
    """Deterministic case from ``spec`` (parameters drawn from ``spec.seed``)."""
    ss = np.random.SeedSequence(spec.seed)
    param_ss, texture_ss, coil_ss = ss.spawn(3)
    params = _draw_params(spec, np.random.default_rng(param_ss))
    _check_geometry(params, spec.grid_size)
    texture = _texture(spec.grid_size, np.random.default_rng(texture_ss))
    coils = make_coils(spec.grid_size, spec.n_coils, int(coil_ss.generate_state(1, np.uint64)[0]))
    yy, xx = _grid_coords(spec.grid_size)

    if spec.kind is PhantomKind.KNEE_STATIC:
        image, labels = _render(params, yy, xx, texture)
        phases = None
        metric = compute_metric(spec.kind, ((image, labels),), spec.voxel_spacing)
    else:
        ed = _render(params, yy, xx, texture)
        # ES: concentric shrink with area fraction (1 - ejection_ratio)
        es = _render(params, yy, xx, texture, roi_scale=math.sqrt(1.0 - params["ejection_ratio"]))
        phases = (ed, es)
        image, labels = ed
        if not np.any(ed[1] == STRUCTURE):
            raise ValueError("end-diastolic structure covers no pixels")
        metric = compute_metric(spec.kind, phases, spec.voxel_spacing)

    return GroundTruthCase(
        kind=spec.kind,
        image=image,
        labels=labels,
        voxel_spacing=spec.voxel_spacing,
        true_metric=metric,
        coils=coils,
        seed=spec.seed,
        params=params,
        phase_images=phases,
    )


def make_cohort(spec_template: PhantomSpec, n: int, seed: int) -> list[GroundTruthCase]:
    """``n`` i.i.d. cases; case ``i`` uses sub-seed ``derive_seed(seed, i)``."""
    if n < 1:
        raise ValueError(f"cohort size must be >= 1, got {n}")
    return [make_case(replace(spec_template, seed=derive_seed(seed, i))) for i in range(n)]
