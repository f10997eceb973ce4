"""Distortion metrics and Bjontegaard-delta bitrate.

D1 is the mean squared Euclidean distance from each point of A to its
nearest neighbor in B; D2 projects that error vector onto the reference
point's surface normal before squaring. The symmetric PSNR takes the
worse of the two directions, with peak energy fixed at 3 * (r - 1)^2
(squared diagonal of the voxel cube), and returns ``inf`` when both
directions are exact.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .geometry import PointCloud, estimate_normals

INFINITE_PSNR = math.inf


def nearest_neighbors(a: np.ndarray, b: np.ndarray):
    """Squared NN distances and indices from each row of *a* into *b*,
    breaking exact distance ties by smallest index.

    The kd-tree only finds candidates; the returned squared distances are
    recomputed directly as sum((a - b[idx])^2) so they match a brute-force
    evaluation bit for bit.
    """
    tree = cKDTree(b)
    k = min(2, len(b))
    dist, idx = tree.query(a, k=k)
    if k == 1:
        best = idx
    else:
        tied = dist[:, 0] == dist[:, 1]
        best = idx[:, 0].copy()
        if tied.any():
            for i in np.nonzero(tied)[0]:
                radius = dist[i, 0] * (1 + 1e-12) + 1e-300
                candidates = tree.query_ball_point(a[i], radius)
                d2 = np.sum((b[candidates] - a[i]) ** 2, axis=1)
                lowest = d2.min()
                best[i] = min(c for c, d in zip(candidates, d2) if d == lowest)
    sq = np.sum((a - b[best]) ** 2, axis=1)
    return sq, best


def d1_mse(a: PointCloud, b: PointCloud) -> float:
    """Point-to-point MSE from a to b (directional)."""
    if len(a) == 0 or len(b) == 0:
        raise DataError("d1_mse requires non-empty clouds")
    pa = a.points.astype(np.float64)
    pb = b.points.astype(np.float64)
    sq, _ = nearest_neighbors(pa, pb)
    return float(np.mean(sq))


def d2_mse(a: PointCloud, b: PointCloud, k: int = 9) -> float:
    """Point-to-plane MSE from a to b; b's normals are estimated when absent."""
    if len(a) == 0 or len(b) == 0:
        raise DataError("d2_mse requires non-empty clouds")
    if not b.has_normals:
        b = estimate_normals(b, k=k)
    pa = a.points.astype(np.float64)
    pb = b.points.astype(np.float64)
    _, idx = nearest_neighbors(pa, pb)
    err = pa - pb[idx]
    proj = np.einsum("ij,ij->i", err, b.normals.astype(np.float64)[idx])
    return float(np.mean(proj ** 2))


def _directional_psnr(mse: float, r: int) -> float:
    if mse == 0.0:
        return INFINITE_PSNR
    peak_sq = 3.0 * (r - 1) ** 2
    return 10.0 * math.log10(peak_sq / mse)


def symmetric_psnr(a: PointCloud, b: PointCloud, r: int, kind: str = "d1") -> float:
    """min(e(A,B), e(B,A)) in dB; ``inf`` only when both directions are exact."""
    if kind == "d1":
        ab, ba = d1_mse(a, b), d1_mse(b, a)
    elif kind == "d2":
        ab, ba = d2_mse(a, b), d2_mse(b, a)
    else:
        raise ValueError(f"kind must be 'd1' or 'd2', got '{kind}'")
    return min(_directional_psnr(ab, r), _directional_psnr(ba, r))


@dataclass
class RDPoint:
    """One rate-distortion measurement."""

    bpov: float
    psnr_d1: float
    psnr_d2: float

    def quality(self, kind: str = "d1") -> float:
        return self.psnr_d1 if kind == "d1" else self.psnr_d2


@dataclass
class RDCurve:
    """Rate-distortion points for one codec setting sweep."""

    label: str
    points: List[RDPoint]

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpov)
        rates = [p.bpov for p in self.points]
        if any(r2 <= r1 for r1, r2 in zip(rates, rates[1:])):
            raise DataError(f"curve '{self.label}' has non-increasing bpov values")


def bd_rate(reference: RDCurve, test: RDCurve, kind: str = "d1") -> float:
    """Bjontegaard delta bitrate of *test* against *reference*, in percent.

    Fits log10(bpov) as a polynomial in PSNR per curve (cubic when four or
    more points are available), integrates the difference over the common
    PSNR interval, and maps the mean log-rate gap back to a percentage.
    Negative values mean the test curve needs less rate. Infinite-PSNR
    points are excluded before fitting.
    """
    curves = []
    for curve in (reference, test):
        pts = [
            (p.quality(kind), math.log10(p.bpov))
            for p in curve.points
            if math.isfinite(p.quality(kind))
        ]
        if len(pts) < 2:
            raise DataError(
                f"curve '{curve.label}' needs >= 2 finite-PSNR points for BD-rate"
            )
        curves.append(pts)
    lo = max(min(q for q, _ in pts) for pts in curves)
    hi = min(max(q for q, _ in pts) for pts in curves)
    if not hi > lo:
        raise DataError(
            f"no PSNR overlap between '{reference.label}' and '{test.label}'"
        )
    qs = np.linspace(lo, hi, 1000)
    integrals = []
    for pts in curves:
        q = np.array([p[0] for p in pts])
        lr = np.array([p[1] for p in pts])
        degree = min(3, len(pts) - 1)
        coeffs = np.polyfit(q, lr, degree)
        integrals.append(np.trapezoid(np.polyval(coeffs, qs), qs))
    delta = (integrals[1] - integrals[0]) / (hi - lo)
    return float(100.0 * (10.0 ** delta - 1.0))
