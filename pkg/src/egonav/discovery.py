"""Occluded-space discovery from the predicted trajectory set.

Wherever predictions travel, the occlusion heights sampled along them
are spread onto a Cartesian ground grid with a Gaussian kernel; the
kernel-weighted average is high exactly where many predicted points sit
in occluded cells.  Thresholding and 4-connected grouping turn the map
into discrete detections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .egospace import EgoSpaceMap, sample_phi
from .trajectory import TrajectoryBasis

DEFAULT_EXTENT = (-10.0, 10.0, 0.0, 20.0)
DEFAULT_RESOLUTION = 0.25
DEFAULT_SIGMA = 0.5
DEFAULT_THRESHOLD = 0.3


@dataclass
class OccludedSpaceMap:
    extent: tuple  # (x_min, x_max, z_min, z_max) meters, ego frame
    resolution: float
    sigma: float
    psi: np.ndarray  # (n_z, n_x) likelihood heights, meters
    phi_max: float

    def cell_center(self, iz: int, ix: int):
        x = self.extent[0] + (ix + 0.5) * self.resolution
        z = self.extent[2] + (iz + 0.5) * self.resolution
        return x, z


@dataclass
class Detection:
    cells: np.ndarray  # (N, 2) int (iz, ix)
    peak: float
    centroid: tuple  # (x, z) meters


def discover(
    predictions,
    basis: TrajectoryBasis,
    test_map: EgoSpaceMap,
    extent=DEFAULT_EXTENT,
    resolution: float = DEFAULT_RESOLUTION,
    sigma: float = DEFAULT_SIGMA,
    truncate: float = 4.0,
) -> OccludedSpaceMap:
    """Kernel-weighted average of occlusion heights along all predictions.

    Every predicted point contributes its sampled map height, weighted
    by a Gaussian of bandwidth sigma in ground distance; support is
    truncated at ``truncate`` sigma.  Cells no prediction comes near
    read 0.
    """
    if not predictions:
        raise ValueError("discover needs at least one prediction")
    pts = np.vstack([basis.points(p.beta) for p in predictions])
    phi = sample_phi(test_map, pts[:, 0], pts[:, 1])

    x_min, x_max, z_min, z_max = extent
    nx = int(round((x_max - x_min) / resolution))
    nz = int(round((z_max - z_min) / resolution))
    num = np.zeros((nz, nx))
    den = np.zeros((nz, nx))

    radius = truncate * sigma
    inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma)
    for (px, pz), h in zip(pts, phi):
        ix0 = max(int(np.ceil((px - radius - x_min) / resolution - 0.5)), 0)
        ix1 = min(int(np.floor((px + radius - x_min) / resolution - 0.5)), nx - 1)
        iz0 = max(int(np.ceil((pz - radius - z_min) / resolution - 0.5)), 0)
        iz1 = min(int(np.floor((pz + radius - z_min) / resolution - 0.5)), nz - 1)
        if ix0 > ix1 or iz0 > iz1:
            continue
        xs = x_min + (np.arange(ix0, ix1 + 1) + 0.5) * resolution
        zs = z_min + (np.arange(iz0, iz1 + 1) + 0.5) * resolution
        d2 = (zs[:, None] - pz) ** 2 + (xs[None, :] - px) ** 2
        w = np.exp(-d2 * inv_two_sigma2)
        w[d2 > radius * radius] = 0.0
        num[iz0:iz1 + 1, ix0:ix1 + 1] += w * h
        den[iz0:iz1 + 1, ix0:ix1 + 1] += w

    psi = np.where(den >= 1e-12, num / np.maximum(den, 1e-300), 0.0)
    return OccludedSpaceMap(extent=tuple(extent), resolution=resolution,
                            sigma=sigma, psi=psi, phi_max=test_map.spec.phi_max)


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def extract_detections(omap: OccludedSpaceMap, threshold: float = DEFAULT_THRESHOLD) -> list:
    """4-connected components of cells with psi >= threshold.

    Returns detections sorted by peak value descending (first cell index
    breaks ties deterministically).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    mask = omap.psi >= threshold
    labels, count = ndimage.label(mask, structure=_FOUR_CONNECTED)
    detections = []
    for lab in range(1, count + 1):
        iz, ix = np.nonzero(labels == lab)
        cells = np.column_stack([iz, ix])
        values = omap.psi[iz, ix]
        centers = np.array([omap.cell_center(i, j) for i, j in cells])
        detections.append(Detection(
            cells=cells,
            peak=float(values.max()),
            centroid=(float(centers[:, 0].mean()), float(centers[:, 1].mean())),
        ))
    detections.sort(key=lambda d: (-d.peak, int(d.cells[0, 0]), int(d.cells[0, 1])))
    return detections


def write_psi_csv(omap: OccludedSpaceMap, path) -> None:
    """Rows over z (near to far), columns over x (left extent to right)."""
    with open(path, "w") as fh:
        for row in omap.psi:
            fh.write(",".join("%.9g" % v for v in row) + "\n")


def write_psi_pgm(omap: OccludedSpaceMap, path) -> None:
    """8-bit binary PGM, linear scale from 0 to phi_max."""
    scaled = np.clip(omap.psi / omap.phi_max, 0.0, 1.0)
    pixels = np.round(scaled * 255).astype(np.uint8)
    nz, nx = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {nz}\n255\n".encode())
        fh.write(pixels.tobytes())


def detections_to_json(detections) -> str:
    obj = [
        {
            "peak": d.peak,
            "centroid": list(d.centroid),
            "cells": d.cells.tolist(),
        }
        for d in detections
    ]
    return json.dumps(obj, indent=2)
