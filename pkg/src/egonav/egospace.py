"""Log-polar occlusion map on the ground plane around the wearer.

Each cell of the map stores the height above ground of the nearest
surface intersected by the ray from the eye center to that cell's ground
point.  Free visible ground reads 0; cells outside the camera's field of
view read ``phi_max``.  Angular samples are uniform in theta and radial
samples uniform in 1/r, which makes the sample locations roughly uniform
in the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyDepthError
from .geometry import DepthImage, EgoFrame, backproject, in_image, project_to_image


@dataclass(frozen=True)
class GridSpec:
    n_theta: int = 36
    n_radius: int = 96
    theta_min: float = np.pi / 6
    theta_max: float = 5 * np.pi / 6
    r_min: float = 0.5
    r_max: float = 20.0
    phi_max: float = 2.0

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.phi_max <= 0:
            raise ValueError("phi_max must be positive")
        if self.n_theta < 2 or self.n_radius < 2:
            raise ValueError("grid needs at least 2 samples per axis")

    def theta_samples(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.n_theta)

    def inv_r_samples(self) -> np.ndarray:
        return np.linspace(1.0 / self.r_min, 1.0 / self.r_max, self.n_radius)

    def radius_samples(self) -> np.ndarray:
        return 1.0 / self.inv_r_samples()


@dataclass
class EgoSpaceMap:
    spec: GridSpec
    phi: np.ndarray  # (n_radius, n_theta) heights in meters
    observed: np.ndarray  # (n_radius, n_theta) bool, False = outside FOV

    def feature(self) -> np.ndarray:
        """Flattened phi grid (row-major over radius, theta)."""
        return self.phi.ravel().copy()


def ground_point(spec: GridSpec, i_radius: int, i_theta: int):
    """Cartesian ground coordinates (x, z) of one grid cell center.

    theta is measured from +X, so theta = pi/2 points straight ahead.
    """
    if not (0 <= i_radius < spec.n_radius and 0 <= i_theta < spec.n_theta):
        raise IndexError("cell index out of range")
    r = spec.radius_samples()[i_radius]
    theta = spec.theta_samples()[i_theta]
    return r * np.cos(theta), r * np.sin(theta)


def ground_point_grid(spec: GridSpec) -> np.ndarray:
    """All cell centers as an (n_radius, n_theta, 2) array of (x, z)."""
    r = spec.radius_samples()[:, None]
    theta = spec.theta_samples()[None, :]
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def fov_mask(spec: GridSpec, frame: EgoFrame, depth: DepthImage) -> np.ndarray:
    """True for cells whose ground point projects inside the image."""
    grid = ground_point_grid(spec)
    pts_ego = np.zeros((spec.n_radius, spec.n_theta, 3))
    pts_ego[..., 0] = grid[..., 0]
    pts_ego[..., 2] = grid[..., 1]
    pts_cam = frame.to_camera(pts_ego.reshape(-1, 3))
    u, v, z = project_to_image(pts_cam, depth.intrinsics)
    return in_image(u, v, z, depth.intrinsics).reshape(spec.n_radius, spec.n_theta)


def compute_egospace(
    depth: DepthImage,
    frame: EgoFrame,
    spec: GridSpec,
    ground_tol: float = 0.1,
) -> EgoSpaceMap:
    """Build the occlusion map from a depth image by shadow splatting.

    Every back-projected point is pushed along its eye ray to the ground
    plane and recorded in the cell it lands in; per cell the point
    nearest the eye wins and its height above ground becomes phi.  Points
    within ``ground_tol`` of the plane count as free ground (phi 0).
    Cells whose ground point projects outside the image are masked and
    read ``phi_max``; in-view cells that received no point are filled
    from their nearest splatted neighbor in the grid.
    """
    if not depth.validity.any():
        raise EmptyDepthError("depth image has no valid pixels")
    observed = fov_mask(spec, frame, depth)

    pts = frame.to_ego(backproject(depth))
    h = frame.eye_height
    y = pts[:, 1]
    keep = y < h - 1e-9  # at/above eye level: never on an eye-to-ground ray
    pts, y = pts[keep], y[keep]

    scale = h / (h - y)
    tx = scale * pts[:, 0]
    tz = scale * pts[:, 2]
    r = np.hypot(tx, tz)
    theta = np.arctan2(tz, tx)

    inv_r = spec.inv_r_samples()
    d_inv = inv_r[1] - inv_r[0]
    thetas = spec.theta_samples()
    d_theta = thetas[1] - thetas[0]
    with np.errstate(divide="ignore"):
        i_r = np.rint((1.0 / np.maximum(r, 1e-12) - inv_r[0]) / d_inv).astype(int)
    i_t = np.rint((theta - thetas[0]) / d_theta).astype(int)
    ok = (r > 1e-9) & (i_r >= 0) & (i_r < spec.n_radius) & (i_t >= 0) & (i_t < spec.n_theta)
    ok &= observed[np.clip(i_r, 0, spec.n_radius - 1), np.clip(i_t, 0, spec.n_theta - 1)]

    phi_val = np.where(np.abs(y) <= ground_tol, 0.0, np.clip(y, 0.0, spec.phi_max))
    eye = np.array([0.0, h, 0.0])
    lam = np.linalg.norm(pts - eye, axis=1)

    cell = i_r[ok] * spec.n_theta + i_t[ok]
    lam, phi_val = lam[ok], phi_val[ok]

    phi = np.full((spec.n_radius, spec.n_theta), spec.phi_max)
    splatted = np.zeros((spec.n_radius, spec.n_theta), dtype=bool)
    if cell.size:
        # per cell: minimal eye distance wins, ties broken by larger height
        order = np.lexsort((-phi_val, lam, cell))
        cells_sorted = cell[order]
        first = np.ones(cells_sorted.size, dtype=bool)
        first[1:] = cells_sorted[1:] != cells_sorted[:-1]
        win_cells = cells_sorted[first]
        win_phi = phi_val[order][first]
        phi.ravel()[win_cells] = win_phi
        splatted.ravel()[win_cells] = True

    hole = observed & ~splatted
    if hole.any() and splatted.any():
        _, (near_r, near_t) = ndimage.distance_transform_edt(
            ~splatted, return_indices=True
        )
        phi[hole] = phi[near_r[hole], near_t[hole]]
    # holes with no splatted neighbor anywhere stay at phi_max
    phi[~observed] = spec.phi_max
    return EgoSpaceMap(spec=spec, phi=phi, observed=observed)


def sample_phi(emap: EgoSpaceMap, x, z):
    """Evaluate the map at Cartesian ground points by bilinear interpolation.

    Radii below r_min read 0 (the wearer's own space), radii beyond
    r_max or angles outside the wedge read phi_max.  Accepts scalars or
    arrays and broadcasts.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    scalar = x.ndim == 0 and z.ndim == 0
    x, z = np.atleast_1d(x), np.atleast_1d(z)
    spec = emap.spec

    r = np.hypot(x, z)
    theta = np.arctan2(z, x)
    out = np.full(np.broadcast(x, z).shape, spec.phi_max, dtype=np.float64)

    near = r < spec.r_min
    out[near] = 0.0

    inside = (~near) & (r <= spec.r_max) & (theta >= spec.theta_min) & (theta <= spec.theta_max)
    if inside.any():
        inv_r = spec.inv_r_samples()
        thetas = spec.theta_samples()
        fr = (1.0 / r[inside] - inv_r[0]) / (inv_r[1] - inv_r[0])
        ft = (theta[inside] - thetas[0]) / (thetas[1] - thetas[0])
        fr = np.clip(fr, 0.0, spec.n_radius - 1.0)
        ft = np.clip(ft, 0.0, spec.n_theta - 1.0)
        r0 = np.minimum(fr.astype(int), spec.n_radius - 2)
        t0 = np.minimum(ft.astype(int), spec.n_theta - 2)
        wr = fr - r0
        wt = ft - t0
        p = emap.phi
        val = (
            p[r0, t0] * (1 - wr) * (1 - wt)
            + p[r0 + 1, t0] * wr * (1 - wt)
            + p[r0, t0 + 1] * (1 - wr) * wt
            + p[r0 + 1, t0 + 1] * wr * wt
        )
        out[inside] = val
    return float(out[0]) if scalar else out


def write_phi_csv(emap: EgoSpaceMap, path) -> None:
    """CSV export: header row of theta values, one row per radius."""
    _write_grid_csv(path, emap.spec, emap.phi, fmt="%.9g")


def write_mask_csv(emap: EgoSpaceMap, path) -> None:
    """CSV export of the FOV mask as {0,1}, same layout as the phi grid."""
    _write_grid_csv(path, emap.spec, emap.observed.astype(int), fmt="%d")


def _write_grid_csv(path, spec: GridSpec, grid: np.ndarray, fmt: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join("%.9g" % t for t in spec.theta_samples()) + "\n")
        for row in grid:
            fh.write(",".join(fmt % v for v in row) + "\n")
