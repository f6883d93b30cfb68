"""Undersampling masks and nested acceleration schedules.

Masks live in centered k-space layout (DC at ``shape // 2``).  Two pattern
families are provided: a variable-density Poisson-disc pattern over a 2D
k-space plane and a VISTA-like Cartesian ky-t line pattern for two-phase
(or multi-frame) acquisitions.  Schedules are built sparsest-first so that
every denser mask contains every sparser one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

DEFAULT_FACTORS = (32.0, 28.0, 24.0, 20.0, 16.0, 12.0, 8.0, 4.0)
R_TOLERANCE = 0.10
VISTA_FRAME_TOLERANCE = 0.15


class MaskKind(str, enum.Enum):
    POISSON_DISC = "PoissonDisc"
    VISTA_LIKE = "VistaLike"
    FULL = "Full"


class MaskGenerationError(RuntimeError):
    """Raised when a mask cannot reach its target acceleration."""

    def __init__(self, message: str, realized_R: float | None = None):
        super().__init__(message)
        self.realized_R = realized_R


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary sampling pattern.

    ``grid`` is a 2D k-space plane for Poisson-disc / full masks and a
    ``(ky, frames)`` line table for VISTA-like masks.
    """

    grid: np.ndarray
    target_R: float
    kind: MaskKind
    seed: int = 0
    center_radius: int = 0

    @property
    def realized_R(self) -> float:
        return acceleration_of(self)

    def phase_grid(self, phase: int, image_shape: tuple[int, int]) -> np.ndarray:
        """2D k-space mask applied to ``phase`` of an image of ``image_shape``."""
        if self.kind is MaskKind.VISTA_LIKE:
            lines = self.grid[:, phase]
            if lines.shape[0] != image_shape[0]:
                raise ValueError(f"mask has {lines.shape[0]} ky lines, image has {image_shape[0]} rows")
            return np.broadcast_to(lines[:, None], image_shape).copy()
        if self.grid.shape != tuple(image_shape):
            raise ValueError(f"mask shape {self.grid.shape} does not match image shape {image_shape}")
        return self.grid


@dataclass(frozen=True, eq=False)
class AccelerationSchedule:
    factors: tuple[float, ...]
    masks: tuple[SamplingMask, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.factors)

    def __iter__(self):
        return iter(zip(self.factors, self.masks))


def acceleration_of(mask: SamplingMask | np.ndarray) -> float:
    """Total entries divided by sampled entries."""
    grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask)
    if grid.size == 0:
        raise ValueError("empty mask")
    n = int(np.count_nonzero(grid))
    if n == 0:
        raise ValueError("mask has no sampled entries")
    return grid.size / n


def _check_tolerance(realized: float, target: float, tol: float, what: str) -> None:
    if abs(realized - target) > tol * target:
        raise MaskGenerationError(
            f"{what}: realized R={realized:.3f} outside +/-{tol:.0%} of target {target}",
            realized_R=realized,
        )


def _check_factors(factors) -> tuple[float, ...]:
    factors = tuple(float(f) for f in factors)
    if not factors:
        raise ValueError("empty factor list")
    if any(f < 1 for f in factors):
        raise ValueError(f"acceleration factors must be >= 1, got {factors}")
    if any(b >= a for a, b in zip(factors, factors[1:])):
        raise ValueError(f"factors must be strictly decreasing, got {factors}")
    return factors


# --------------------------------------------------------------------------
# Poisson disc
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _dart_throw(occupied, radius, order_y, order_x):
    h, w = occupied.shape
    occ = occupied.copy()
    accepted = np.empty(order_y.shape[0], np.int64)
    n = 0
    for i in range(order_y.shape[0]):
        y = order_y[i]
        x = order_x[i]
        if occ[y, x]:
            continue
        r = radius[y, x]
        r2 = r * r
        ri = int(np.ceil(r))
        ok = True
        for yy in range(max(0, y - ri), min(h, y + ri + 1)):
            dy = yy - y
            for xx in range(max(0, x - ri), min(w, x + ri + 1)):
                if occ[yy, xx]:
                    dx = xx - x
                    if dy * dy + dx * dx < r2:
                        ok = False
                        break
            if not ok:
                break
        if ok:
            occ[y, x] = True
            accepted[n] = i
            n += 1
    return occ, accepted[:n]


def kspace_radius(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    ky = np.arange(h) - h // 2
    kx = np.arange(w) - w // 2
    return np.hypot(ky[:, None], kx[None, :])


def center_region(shape: tuple[int, int], center_radius: int) -> np.ndarray:
    return kspace_radius(shape) <= center_radius


def _poisson_levels(shape, factors, center_radius, seed, d0=None, power=2.0):
    """Sparsest-first incremental dart throwing; returns one grid per factor."""
    h, w = shape
    n_total = h * w
    if center_radius >= min(shape) / 2:
        raise ValueError(f"center_radius={center_radius} must be < min(shape)/2")
    d0 = min(shape) / 8 if d0 is None else d0
    # density ~ (1 + d/d0)^-p  <=>  disc radius ~ (1 + d/d0)^(p/2)
    profile = (1.0 + kspace_radius(shape) / d0) ** (power / 2.0)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_total)
    order_y = (order // w).astype(np.int64)
    order_x = (order % w).astype(np.int64)

    occupied = center_region(shape, center_radius)
    grids = []
    for R in factors:
        if R == 1:
            occupied = np.ones(shape, dtype=bool)
            grids.append(occupied.copy())
            continue
        target = int(round(n_total / R))
        base = int(occupied.sum())
        if base > target:
            # the fully sampled center alone is denser than requested
            raise MaskGenerationError(
                f"center region ({base} samples) exceeds budget {target} for R={R}",
                realized_R=n_total / base,
            )
        if base < target:
            lo, hi = 0.0, float(np.hypot(h, w))
            best = _dart_throw(occupied, profile * lo, order_y, order_x)
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                occ, acc = _dart_throw(occupied, profile * mid, order_y, order_x)
                if occ.sum() >= target:
                    lo, best = mid, (occ, acc)
                else:
                    hi = mid
                if best[0].sum() == target:
                    break
            occ, acc = best
            excess = int(occ.sum()) - target
            if excess > 0:
                occ = occ.copy()
                drop = acc[len(acc) - excess:]
                occ[order_y[drop], order_x[drop]] = False
            occupied = occ
        _check_tolerance(n_total / occupied.sum(), R, R_TOLERANCE, f"Poisson-disc R={R}")
        grids.append(occupied.copy())
    return grids


def poisson_disc_mask(shape, target_R: float, center_radius: int = 4, seed: int = 0) -> SamplingMask:
    """Variable-density Poisson-disc mask with a fully sampled center disc."""
    if target_R < 1:
        raise ValueError(f"target_R must be >= 1, got {target_R}")
    shape = tuple(int(s) for s in shape)
    if target_R == 1:
        return SamplingMask(np.ones(shape, dtype=bool), 1.0, MaskKind.FULL, seed, center_radius)
    (grid,) = _poisson_levels(shape, (float(target_R),), center_radius, seed)
    return SamplingMask(grid, float(target_R), MaskKind.POISSON_DISC, seed, center_radius)


# --------------------------------------------------------------------------
# VISTA-like ky-t line pattern
# --------------------------------------------------------------------------


def _vista_orders(n_lines, n_frames, center_radius, rng, d0=None, power=2.0):
    """Per-frame line priority orders.

    Center lines come first in every frame.  The remaining lines get one
    variable-density random priority order, dealt alternately to even and
    odd frames, so adjacent frames draw from disjoint halves until a frame
    needs more than half of the non-center lines.
    """
    c = n_lines // 2
    d = np.abs(np.arange(n_lines) - c)
    center = np.flatnonzero(d <= center_radius)
    rest = np.flatnonzero(d > center_radius)
    d0 = n_lines / 8 if d0 is None else d0
    weight = (1.0 + d[rest] / d0) ** (-power)
    # weighted permutation without replacement: sort u^(1/w) descending
    keys = rng.random(rest.size) ** (1.0 / weight)
    base = rest[np.argsort(-keys, kind="stable")]
    even = np.concatenate([base[0::2], base[1::2]])
    odd = np.concatenate([base[1::2], base[0::2]])
    return [np.concatenate([center, even if t % 2 == 0 else odd]) for t in range(n_frames)]


def _vista_levels(shape_ky_t, factors, center_radius, seed, max_overlap):
    n_lines, n_frames = (int(s) for s in shape_ky_t)
    if center_radius >= n_lines / 2:
        raise ValueError(f"center_radius={center_radius} must be < n_lines/2")
    rng = np.random.default_rng(seed)
    orders = _vista_orders(n_lines, n_frames, center_radius, rng)
    n_center = 2 * center_radius + 1
    grids = []
    for R in factors:
        if R == 1:
            grids.append(np.ones((n_lines, n_frames), dtype=bool))
            continue
        total = int(round(n_lines * n_frames / R))
        counts = [total // n_frames + (1 if t < total % n_frames else 0) for t in range(n_frames)]
        if min(counts) < n_center:
            raise MaskGenerationError(
                f"center lines ({n_center}) exceed per-frame budget {min(counts)} for R={R}",
                realized_R=n_lines * n_frames / max(total, 1),
            )
        grid = np.zeros((n_lines, n_frames), dtype=bool)
        for t, n in enumerate(counts):
            grid[orders[t][:n], t] = True
        for t, n in enumerate(counts):
            _check_tolerance(n_lines / n, R, VISTA_FRAME_TOLERANCE, f"VISTA frame {t} R={R}")
        _check_tolerance(grid.size / grid.sum(), R, R_TOLERANCE, f"VISTA R={R}")
        for t in range(n_frames - 1):
            shared = np.count_nonzero(grid[:, t] & grid[:, t + 1])
            frac = shared / min(counts[t], counts[t + 1])
            if frac > max_overlap:
                raise MaskGenerationError(
                    f"VISTA R={R}: frames {t},{t + 1} share {frac:.2f} of lines (> {max_overlap})",
                    realized_R=grid.size / grid.sum(),
                )
        grids.append(grid)
    return grids


def vista_mask(
    shape_ky_t, target_R: float, seed: int = 0, center_radius: int = 0, max_overlap: float = 0.5
) -> SamplingMask:
    """VISTA-like ky-t mask: a ``(n_ky, n_frames)`` table of sampled lines."""
    if target_R < 1:
        raise ValueError(f"target_R must be >= 1, got {target_R}")
    shape_ky_t = tuple(int(s) for s in shape_ky_t)
    if target_R == 1:
        return SamplingMask(np.ones(shape_ky_t, dtype=bool), 1.0, MaskKind.FULL, seed, center_radius)
    (grid,) = _vista_levels(shape_ky_t, (float(target_R),), center_radius, seed, max_overlap)
    return SamplingMask(grid, float(target_R), MaskKind.VISTA_LIKE, seed, center_radius)


def line_overlap(mask: SamplingMask) -> np.ndarray:
    """Fraction of shared lines between each pair of adjacent frames."""
    g = mask.grid
    counts = g.sum(axis=0)
    shared = np.count_nonzero(g[:, :-1] & g[:, 1:], axis=0)
    return shared / np.minimum(counts[:-1], counts[1:])


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


def nested_schedule(
    kind: MaskKind | str,
    shape,
    factors=DEFAULT_FACTORS,
    center_radius: int = 4,
    seed: int = 0,
    max_overlap: float = 0.5,
) -> AccelerationSchedule:
    """One mask per factor, each contained in every later (denser) mask.

    ``shape`` is the k-space plane for Poisson-disc schedules and
    ``(n_ky, n_frames)`` for VISTA-like schedules.
    """
    kind = MaskKind(kind)
    factors = _check_factors(factors)
    shape = tuple(int(s) for s in shape)
    if kind is MaskKind.POISSON_DISC:
        grids = _poisson_levels(shape, factors, center_radius, seed)
    elif kind is MaskKind.VISTA_LIKE:
        grids = _vista_levels(shape, factors, center_radius, seed, max_overlap)
    else:
        if any(R != 1 for R in factors):
            raise ValueError("a Full schedule only admits factor 1")
        grids = [np.ones(shape, dtype=bool)]
    masks = tuple(
        SamplingMask(g, R, MaskKind.FULL if R == 1 else kind, seed, center_radius)
        for R, g in zip(factors, grids)
    )
    return AccelerationSchedule(factors, masks)


def is_nested(schedule: AccelerationSchedule) -> bool:
    grids = [m.grid for m in schedule.masks]
    return all(not np.any(a & ~b) for a, b in zip(grids, grids[1:]))
