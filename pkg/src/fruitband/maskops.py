"""Binary defect-mask post-processing.

Connected-component labeling uses the classic two-pass union-find sweep
with labels renumbered in raster-scan order of each region's first pixel,
so outputs are reproducible byte for byte. Small-region filtering keeps
only components at or above an area threshold; masks destined for a
classifier branch are resized nearest-neighbor and replicated to three
channels so image backbones accept them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Region:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive
    pixels: tuple[tuple[int, int], ...]  # (y, x) in raster order


def _as_bool_mask(mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    return arr > 0


class _UnionFind:
    def __init__(self):
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def label_components(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label map of the foreground: 0 background, labels 1..k in raster order."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    fg = _as_bool_mask(mask)
    height, width = fg.shape
    provisional = np.zeros((height, width), dtype=np.int64)
    uf = _UnionFind()

    for y in range(height):
        row = fg[y]
        for x in range(width):
            if not row[x]:
                continue
            neighbors = []
            if x > 0 and fg[y, x - 1]:
                neighbors.append(provisional[y, x - 1])
            if y > 0:
                if fg[y - 1, x]:
                    neighbors.append(provisional[y - 1, x])
                if connectivity == 8:
                    if x > 0 and fg[y - 1, x - 1]:
                        neighbors.append(provisional[y - 1, x - 1])
                    if x + 1 < width and fg[y - 1, x + 1]:
                        neighbors.append(provisional[y - 1, x + 1])
            if not neighbors:
                provisional[y, x] = uf.make()
            else:
                first = min(neighbors)
                provisional[y, x] = first
                for other in neighbors:
                    uf.union(first, other)

    if not uf.parent:
        return np.zeros((height, width), dtype=np.int64)

    roots = np.array([uf.find(i) for i in range(len(uf.parent))], dtype=np.int64)
    # renumber so labels follow the raster order of each region's first pixel
    flat = provisional[fg]
    flat_roots = roots[flat]
    order: dict[int, int] = {}
    for r in flat_roots:
        if int(r) not in order:
            order[int(r)] = len(order) + 1
    relabel = np.zeros(len(uf.parent), dtype=np.int64)
    for root, lab in order.items():
        relabel[roots == root] = lab
    labels = np.zeros((height, width), dtype=np.int64)
    labels[fg] = relabel[flat]
    return labels


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Region]:
    """Maximal connected foreground regions, sorted by label."""
    labels = label_components(mask, connectivity)
    n = int(labels.max())
    regions = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        regions.append(Region(
            label=lab,
            area=len(ys),
            bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            pixels=tuple(zip(ys.tolist(), xs.tolist())),
        ))
    return regions


def filter_regions(mask: np.ndarray, min_area: int, connectivity: int = 8) -> np.ndarray:
    """Keep only components with area >= min_area; returns a bool mask."""
    if min_area < 1:
        raise ValueError(f"min_area must be >= 1, got {min_area}")
    labels = label_components(mask, connectivity)
    n = int(labels.max())
    if n == 0:
        return np.zeros(labels.shape, dtype=bool)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def mask_to_model_input(mask: np.ndarray, target_size: tuple[int, int] = (224, 224)) -> np.ndarray:
    """Nearest-neighbor resize to (H, W) and replicate to 3 float channels.

    Foreground maps to 1.0, background to 0.0; source pixel for output index
    i is floor((i + 0.5) * src / dst).
    """
    fg = _as_bool_mask(mask)
    src_h, src_w = fg.shape
    dst_h, dst_w = target_size
    ys = np.minimum((np.arange(dst_h) + 0.5) * src_h / dst_h, src_h - 1).astype(np.int64)
    xs = np.minimum((np.arange(dst_w) + 0.5) * src_w / dst_w, src_w - 1).astype(np.int64)
    resized = fg[np.ix_(ys, xs)].astype(np.float32)
    return np.repeat(resized[:, :, None], 3, axis=2)
