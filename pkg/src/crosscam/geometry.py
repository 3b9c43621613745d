"""Pinhole cameras, fundamental matrices and epipolar bands.

Conventions: a camera maps a world point ``P`` to camera coordinates
``R @ P + t`` and to pixels through ``K``. A :class:`FundamentalMatrix`
maps a pixel in ``src_cam`` to an epipolar line in ``dst_cam``, so that
``p_dst^T F p_src = 0`` for every true correspondence.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBand, DegenerateGeometry, PointAtCameraCenter

# relative to |F|_F * |p|; F @ epipole is zero up to roundoff
NULL_LINE_TOL = 1e-9
# absolute slack (pixels) so points computed to lie on a band line count as inside
CONTAIN_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    id: str
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float).reshape(3, 3)
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def validate(self, tol: float = 1e-9) -> None:
        K, R = self.K, self.R
        if np.any(np.tril(K, -1) != 0) or K[2, 2] != 1 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError(f"camera {self.id}: K must be upper-triangular with K[2,2]=1 and positive focals")
        if np.linalg.norm(R.T @ R - np.eye(3)) > tol or abs(np.linalg.det(R) - 1) > tol:
            raise ValueError(f"camera {self.id}: R is not a proper rotation")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.id}: image size must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "K": self.K.tolist(),
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(d["id"], d["K"], d["R"], d["t"], int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class FundamentalMatrix:
    F: np.ndarray
    src_cam: str
    dst_cam: str
    # (width, height) of the source image, used only to flag off-image query points
    src_size: tuple[int, int] | None = None

    @property
    def normalized(self) -> np.ndarray:
        return self.F / np.linalg.norm(self.F)

    def scaled(self, s: float) -> "FundamentalMatrix":
        return FundamentalMatrix(self.F * s, self.src_cam, self.dst_cam, self.src_size)


@dataclass(frozen=True)
class EpipolarLine:
    """A line ``a*x + b*y + c = 0`` in the destination image.

    ``coeffs`` is normalized to ``a^2 + b^2 = 1`` unless ``degenerate`` is set,
    in which case the raw (near-null) product ``F @ p`` is returned.
    """

    coeffs: np.ndarray
    degenerate: bool = False
    in_bounds: bool = True


@dataclass(frozen=True)
class EpipolarBand:
    lines: np.ndarray  # (4, 3), unit normals, oriented consistently with line 0
    epsilon: float = 0.0
    corners: np.ndarray = field(default=None, repr=False)

    def signed_distances(self, p) -> np.ndarray:
        x, y = float(p[0]), float(p[1])
        return self.lines[:, 0] * x + self.lines[:, 1] * y + self.lines[:, 2]

    def contains(self, p) -> bool:
        return band_contains(self, p)

    def margin(self, p) -> float:
        """Depth of ``p`` inside the band; negative when outside."""
        s = self.signed_distances(p)
        return float(min(self.epsilon - s.min(), s.max() + self.epsilon))

    def with_epsilon(self, epsilon: float) -> "EpipolarBand":
        return EpipolarBand(self.lines, float(epsilon), self.corners)


def skew(t) -> np.ndarray:
    """Cross-product matrix: ``skew(t) @ v == np.cross(t, v)``."""
    x, y, z = np.asarray(t, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def relative_pose(cam_src: CameraModel, cam_dst: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pose of ``cam_dst`` relative to ``cam_src``: ``X_dst = R @ X_src + t``."""
    R = cam_dst.R @ cam_src.R.T
    t = cam_dst.t - R @ cam_src.t
    return R, t


def fundamental_matrix(cam_src: CameraModel, cam_dst: CameraModel) -> FundamentalMatrix:
    """``F = K_dst^-T [t]x R K_src^-1`` for the relative pose of dst w.r.t. src."""
    cam_src.validate()
    cam_dst.validate()
    R, t = relative_pose(cam_src, cam_dst)
    if np.linalg.norm(t) < 1e-12:
        raise DegenerateGeometry(
            f"cameras {cam_src.id} and {cam_dst.id} share a center; epipolar geometry is undefined"
        )
    F = np.linalg.inv(cam_dst.K).T @ skew(t) @ R @ np.linalg.inv(cam_src.K)
    return FundamentalMatrix(F, cam_src.id, cam_dst.id, (cam_src.width, cam_src.height))


def epipolar_residual(F: FundamentalMatrix, p_src, p_dst) -> np.ndarray:
    """``p_dst^T F p_src`` with ``F`` scaled to unit Frobenius norm.

    Accepts single points ``(2,)`` or stacks ``(N, 2)``.
    """
    ps = np.atleast_2d(np.asarray(p_src, dtype=float))
    pd = np.atleast_2d(np.asarray(p_dst, dtype=float))
    ps = np.hstack([ps, np.ones((len(ps), 1))])
    pd = np.hstack([pd, np.ones((len(pd), 1))])
    return np.einsum("ni,ij,nj->n", pd, F.normalized, ps)


def epipolar_line(F: FundamentalMatrix, p) -> EpipolarLine:
    """Epipolar line in the destination image of pixel ``p`` in the source image."""
    ph = np.array([float(p[0]), float(p[1]), 1.0])
    Fn = F.normalized
    line = Fn @ ph
    ab = np.hypot(line[0], line[1])
    in_bounds = True
    if F.src_size is not None:
        w, h = F.src_size
        in_bounds = bool(0 <= ph[0] <= w and 0 <= ph[1] <= h)
    if ab < NULL_LINE_TOL * np.linalg.norm(ph):
        return EpipolarLine(line, degenerate=True, in_bounds=in_bounds)
    return EpipolarLine(line / ab, degenerate=False, in_bounds=in_bounds)


def epipole(F: FundamentalMatrix) -> np.ndarray:
    """Epipole in the source image (right null vector of F), homogeneous."""
    _, _, Vt = np.linalg.svd(F.F)
    e = Vt[-1]
    return e / e[2] if abs(e[2]) > 1e-15 else e


def orient_lines(lines: np.ndarray) -> np.ndarray:
    """Flip any line whose normal points away from line 0's normal."""
    lines = np.array(lines, dtype=float)
    ref = lines[0, :2]
    flip = lines[:, :2] @ ref < 0
    lines[flip] *= -1
    return lines


def bbox_corners(bbox) -> np.ndarray:
    x1, y1, x2, y2 = (float(v) for v in bbox)
    return np.array([[x1, y1], [x2, y1], [x2, y2], [x1, y2]])


def bbox_center(bbox) -> np.ndarray:
    x1, y1, x2, y2 = (float(v) for v in bbox)
    return np.array([(x1 + x2) / 2, (y1 + y2) / 2])


def bbox_epipolar_band(F: FundamentalMatrix, bbox, epsilon: float = 0.0) -> EpipolarBand:
    x1, y1, x2, y2 = bbox
    if not (x2 > x1 and y2 > y1):
        raise ValueError(f"bbox must have positive extent, got {bbox}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    corners = bbox_corners(bbox)
    lines = []
    for c in corners:
        el = epipolar_line(F, c)
        if el.degenerate:
            raise DegenerateBand(f"corner {c.tolist()} maps to a null epipolar line (epipole inside box)")
        lines.append(el.coeffs)
    return EpipolarBand(orient_lines(np.array(lines)), float(epsilon), corners)


def band_contains(band: EpipolarBand, p) -> bool:
    """True iff ``p`` lies between the outermost band lines, dilated by epsilon."""
    s = band.signed_distances(p)
    lim = band.epsilon + CONTAIN_TOL
    return bool(s.min() <= lim and s.max() >= -lim)


def project_point(cam: CameraModel, P) -> tuple[np.ndarray, bool]:
    """Project world point ``P``; returns pixel ``(u, v)`` and the in-frustum flag."""
    Xc = cam.R @ np.asarray(P, dtype=float) + cam.t
    if np.linalg.norm(Xc) < 1e-12:
        raise PointAtCameraCenter(f"point {P} coincides with the center of camera {cam.id}")
    x = cam.K @ Xc
    depth = Xc[2]
    if abs(x[2]) < 1e-300:
        return np.array([np.inf, np.inf]), False
    p = x[:2] / x[2]
    in_frustum = bool(depth > 0 and 0 <= p[0] <= cam.width and 0 <= p[1] <= cam.height)
    return p, in_frustum


def project_points(cam: CameraModel, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project_point` for an ``(N, 3)`` array."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Xc = P @ cam.R.T + cam.t
    if np.any(np.linalg.norm(Xc, axis=1) < 1e-12):
        raise PointAtCameraCenter(f"a point coincides with the center of camera {cam.id}")
    x = Xc @ cam.K.T
    with np.errstate(divide="ignore", invalid="ignore"):
        p = x[:, :2] / x[:, 2:3]
    ok = (
        (Xc[:, 2] > 0)
        & (p[:, 0] >= 0) & (p[:, 0] <= cam.width)
        & (p[:, 1] >= 0) & (p[:, 1] <= cam.height)
    )
    return p, ok


def look_at(cam_id: str, center, target, K, width: int, height: int, up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Camera at ``center`` with its optical axis through ``target`` (x right, y down)."""
    center = np.asarray(center, dtype=float)
    f = np.asarray(target, dtype=float) - center
    f /= np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=float))
    if np.linalg.norm(r) < 1e-9:
        raise DegenerateGeometry("viewing direction is parallel to the up vector")
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.vstack([r, d, f])
    return CameraModel(cam_id, K, R, -R @ center, width, height)


def intrinsics(focal: float, width: int, height: int) -> np.ndarray:
    return np.array([[focal, 0.0, width / 2], [0.0, focal, height / 2], [0.0, 0.0, 1.0]])


def save_calibration(cameras, path) -> None:
    data = [cam.to_dict() for cam in cameras]
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_calibration(path) -> dict[str, CameraModel]:
    data = json.loads(Path(path).read_text())
    cams = {}
    for d in data:
        cam = CameraModel.from_dict(d)
        cam.validate()
        cams[cam.id] = cam
    return cams
