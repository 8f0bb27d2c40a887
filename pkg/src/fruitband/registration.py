"""Pair registration: robust homography estimation and standardized crops.

Narrowband frames are aligned onto their visible counterparts. The built-in
matcher tiles the fixed image with template patches and locates each one in
the moving image by normalized cross-correlation inside a local search
window; the resulting correspondences feed seeded RANSAC over normalized-DLT
homographies, and the moving image is inverse-warped with bilinear sampling
into a standardized crop. Precomputed correspondences can be supplied from a
sidecar JSON file instead of the built-in matcher.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    MatchFailure,
    NoModelFound,
    SingularHomography,
)
from .imio import luma, to_float


@dataclass(frozen=True)
class Correspondence:
    src: tuple[float, float]  # (x, y) in the moving image
    dst: tuple[float, float]  # (x, y) in the fixed image


@dataclass(frozen=True)
class Homography:
    h: np.ndarray  # 3x3, normalized so h[2,2] == 1 when possible

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(m)) < 1e-12:
            raise SingularHomography("homography matrix is singular")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        return cls(h=m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(h=np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) points through the homography."""
        pts = np.asarray(points, dtype=np.float64)
        ones = np.ones((pts.shape[0], 1))
        q = np.hstack([pts, ones]) @ self.h.T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.h))


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley similarity: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / max(dist, 1e-12)
    return np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def _corrs_to_arrays(corrs: list[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([c.src for c in corrs], dtype=np.float64)
    dst = np.array([c.dst for c in corrs], dtype=np.float64)
    return src, dst


def estimate_homography_dlt(corrs: list[Correspondence]) -> Homography:
    """Least-squares homography via normalized DLT.

    Exactly reproduces >= 4 exact correspondences to machine precision
    (reprojection below 1e-6 px).
    """
    if len(corrs) < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {len(corrs)}")
    src, dst = _corrs_to_arrays(corrs)
    t_src = _normalization(src)
    t_dst = _normalization(dst)
    sn = (np.hstack([src, np.ones((len(src), 1))]) @ t_src.T)[:, :2]
    dn = (np.hstack([dst, np.ones((len(dst), 1))]) @ t_dst.T)[:, :2]

    n = len(corrs)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2] = np.column_stack([x, y, np.ones(n), np.zeros((n, 3)), -u * x, -u * y, -u])
    a[1::2] = np.column_stack([np.zeros((n, 3)), x, y, np.ones(n), -v * x, -v * y, -v])

    _, s, vt = np.linalg.svd(a)
    # a well-posed system has a 1-dimensional null space
    if s[-2] < 1e-9 * max(s[0], 1.0):
        raise DegenerateConfiguration("correspondence configuration is rank-deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(np.linalg.det(h)) < 1e-12:
        raise DegenerateConfiguration("estimated homography is singular")
    return Homography.from_matrix(h)


def reprojection_errors(h: Homography, corrs: list[Correspondence]) -> np.ndarray:
    src, dst = _corrs_to_arrays(corrs)
    return np.sqrt(((h.apply(src) - dst) ** 2).sum(axis=1))


def ransac_homography(corrs: list[Correspondence], inlier_threshold_px: float = 2.0,
                      max_iterations: int = 1000, seed: int = 0,
                      ) -> tuple[Homography, list[int]]:
    """Seeded RANSAC over minimal 4-point DLT models.

    Keeps the largest consensus set, refits by DLT on it, and returns the
    refit model with its final consensus. Deterministic for a fixed seed.
    """
    if len(corrs) < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {len(corrs)}")
    if inlier_threshold_px <= 0:
        raise ValueError("inlier_threshold_px must be > 0")
    rng = np.random.default_rng(seed)
    n = len(corrs)
    best_inliers: np.ndarray | None = None

    for _ in range(max_iterations):
        sample = rng.choice(n, size=4, replace=False)
        try:
            model = estimate_homography_dlt([corrs[i] for i in sample])
        except DegenerateConfiguration:
            continue
        errors = reprojection_errors(model, corrs)
        inliers = errors <= inlier_threshold_px
        if inliers.sum() >= 4 and (best_inliers is None or inliers.sum() > best_inliers.sum()):
            best_inliers = inliers

    if best_inliers is None:
        raise NoModelFound("no minimal sample produced a consensus of >= 4 correspondences")

    # refit on the consensus, then report the consensus under the refit model
    refit = estimate_homography_dlt([c for c, keep in zip(corrs, best_inliers) if keep])
    final = reprojection_errors(refit, corrs) <= inlier_threshold_px
    if final.sum() < 4:
        raise NoModelFound("consensus collapsed under refit")
    return refit, [int(i) for i in np.flatnonzero(final)]


def warp_and_crop(image: np.ndarray, h: Homography,
                  out_size: tuple[int, int] = (960, 830)) -> np.ndarray:
    """Warp the image by h and center-crop/embed to out_size (width, height).

    Inverse warp with bilinear sampling; samples outside the source are 0.
    The warp canvas shares the source frame, so an identity homography
    reduces to a plain center crop.
    """
    out_w, out_h = out_size
    src = to_float(image)
    src_h, src_w = src.shape[:2]
    try:
        inv = np.linalg.inv(h.h)
    except np.linalg.LinAlgError as exc:
        raise SingularHomography("cannot invert homography for warping") from exc

    off_x = (src_w - out_w) // 2
    off_y = (src_h - out_h) // 2
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    xx += off_x
    yy += off_y
    denom = inv[2, 0] * xx + inv[2, 1] * yy + inv[2, 2]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    sx = (inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]) / denom
    sy = (inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]) / denom

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    def sample(ix, iy):
        valid = (ix >= 0) & (ix < src_w) & (iy >= 0) & (iy < src_h)
        ixc = np.clip(ix, 0, src_w - 1)
        iyc = np.clip(iy, 0, src_h - 1)
        values = src[iyc, ixc]
        if src.ndim == 3:
            return np.where(valid[..., None], values, 0.0)
        return np.where(valid, values, 0.0)

    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = (
        sample(x0, y0) * (1 - fx) * (1 - fy)
        + sample(x0 + 1, y0) * fx * (1 - fy)
        + sample(x0, y0 + 1) * (1 - fx) * fy
        + sample(x0 + 1, y0 + 1) * fx * fy
    )
    if image.dtype == np.uint8:
        return np.floor(np.clip(out, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return out.astype(np.float32)


# --- built-in NCC grid matcher ----------------------------------------------

@dataclass
class MatcherConfig:
    grid: int = 8               # grid of patch centers over the fixed image
    patch_size: int = 32
    search_radius: int = 24     # +- pixels around the patch location
    ncc_min: float = 0.6
    inlier_threshold_px: float = 2.0
    max_iterations: int = 1000
    seed: int = 0
    out_size: tuple[int, int] | None = None  # None -> fixed image size


@dataclass
class RegistrationDiagnostics:
    n_matches: int
    n_inliers: int
    mean_residual_px: float
    status: str = "ok"

    def to_dict(self) -> dict:
        return {
            "n_matches": self.n_matches,
            "n_inliers": self.n_inliers,
            "mean_residual_px": self.mean_residual_px,
            "status": self.status,
        }


def _ncc_match(template: np.ndarray, window: np.ndarray) -> tuple[float, int, int]:
    """Best normalized cross-correlation of template inside window.

    Returns (ncc, dy, dx) of the best placement's top-left corner.
    """
    th, tw = template.shape
    view = np.lib.stride_tricks.sliding_window_view(window, (th, tw))
    t = template - template.mean()
    t_norm = np.sqrt((t * t).sum())
    if t_norm < 1e-9:
        return -1.0, 0, 0
    means = view.mean(axis=(2, 3), keepdims=True)
    centered = view - means
    num = np.einsum("ijkl,kl->ij", centered, t)
    den = np.sqrt((centered * centered).sum(axis=(2, 3))) * t_norm
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(den > 1e-9, num / den, -1.0)
    idx = int(np.argmax(ncc))
    dy, dx = divmod(idx, ncc.shape[1])
    return float(ncc[dy, dx]), dy, dx


def match_grid_ncc(moving: np.ndarray, fixed: np.ndarray,
                   cfg: MatcherConfig) -> list[Correspondence]:
    """Template-match a grid of fixed-image patches inside the moving image."""
    fixed_f = luma(fixed)
    moving_f = luma(moving)
    fh, fw = fixed_f.shape
    mh, mw = moving_f.shape
    half = cfg.patch_size // 2
    corrs: list[Correspondence] = []
    for gy in range(cfg.grid):
        for gx in range(cfg.grid):
            cx = int((gx + 0.5) * fw / cfg.grid)
            cy = int((gy + 0.5) * fh / cfg.grid)
            x0, y0 = cx - half, cy - half
            if x0 < 0 or y0 < 0 or x0 + cfg.patch_size > fw or y0 + cfg.patch_size > fh:
                continue
            template = fixed_f[y0:y0 + cfg.patch_size, x0:x0 + cfg.patch_size]
            wx0 = max(0, x0 - cfg.search_radius)
            wy0 = max(0, y0 - cfg.search_radius)
            wx1 = min(mw, x0 + cfg.patch_size + cfg.search_radius)
            wy1 = min(mh, y0 + cfg.patch_size + cfg.search_radius)
            if wx1 - wx0 < cfg.patch_size or wy1 - wy0 < cfg.patch_size:
                continue
            ncc, dy, dx = _ncc_match(template, moving_f[wy0:wy1, wx0:wx1])
            if ncc >= cfg.ncc_min:
                # matched patch center in the moving image
                mx = wx0 + dx + half
                my = wy0 + dy + half
                corrs.append(Correspondence(src=(float(mx), float(my)), dst=(float(cx), float(cy))))
    return corrs


def load_sidecar_correspondences(path: str | Path) -> list[Correspondence]:
    """Read correspondences from a sidecar JSON: [{"src": [x, y], "dst": [x, y]}, ...]."""
    doc = json.loads(Path(path).read_text())
    return [Correspondence(src=(float(e["src"][0]), float(e["src"][1])),
                           dst=(float(e["dst"][0]), float(e["dst"][1]))) for e in doc]


def register_pair(moving: np.ndarray, fixed: np.ndarray,
                  matcher_cfg: MatcherConfig | None = None,
                  correspondences: list[Correspondence] | None = None,
                  ) -> tuple[np.ndarray, Homography, RegistrationDiagnostics]:
    """Align the moving image onto the fixed image's frame.

    Uses the built-in NCC grid matcher unless precomputed correspondences
    are given. Returns the registered moving image (cropped to the
    configured output size), the recovered homography, and diagnostics.
    """
    cfg = matcher_cfg or MatcherConfig()
    if correspondences is None:
        correspondences = match_grid_ncc(moving, fixed, cfg)
    if len(correspondences) < 4:
        raise MatchFailure(
            f"only {len(correspondences)} matches above NCC {cfg.ncc_min}, need >= 4"
        )
    h, inliers = ransac_homography(
        correspondences, cfg.inlier_threshold_px, cfg.max_iterations, cfg.seed
    )
    residuals = reprojection_errors(h, [correspondences[i] for i in inliers])
    out_size = cfg.out_size or (fixed.shape[1], fixed.shape[0])
    registered = warp_and_crop(moving, h, out_size)
    diag = RegistrationDiagnostics(
        n_matches=len(correspondences),
        n_inliers=len(inliers),
        mean_residual_px=float(residuals.mean()),
    )
    return registered, h, diag
