"""Range-Doppler map formation and segment histogram features.

A dwell becomes a power map via a 2-D FFT (fast time then slow time),
square-law detection and an fftshift along Doppler so zero velocity sits
in the center column.  Detection features are per-segment histograms:
a 17x7 block of cells is min-max normalized and binned into M equal-width
bins on [0, 1]; bin heights are counts divided by the cell count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rdkan.radarsim import IfDataCube, MapGeometry, derive_geometry

SEGMENT_SHAPE = (17, 7)  # range bins x Doppler bins, about 5.98 m x 2.13 m/s


class SegmentError(ValueError):
    pass


@dataclass
class RDMap:
    power: np.ndarray        # (n_range, n_doppler) float64, Doppler-centered
    geometry: MapGeometry

    @property
    def shape(self):
        return self.power.shape


def compute_rd_map(cube: IfDataCube, window: str | None = None) -> RDMap:
    """2-D FFT power map of a dwell.

    window: None (default) or "hann", applied separably before the FFTs.
    """
    x = cube.samples
    n, l = x.shape
    if (n, l) != (cube.config.n_samples, cube.config.n_chirps):
        raise ValueError(f"cube samples {x.shape} disagree with config "
                         f"({cube.config.n_samples}, {cube.config.n_chirps})")
    if window == "hann":
        x = x * np.hanning(n)[:, None] * np.hanning(l)[None, :]
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    spectrum = np.fft.fft(np.fft.fft(x, axis=0), axis=1)
    power = np.fft.fftshift(np.abs(spectrum) ** 2, axes=1)
    return RDMap(power=power, geometry=derive_geometry(cube.config))


def segment_half(shape=SEGMENT_SHAPE):
    hr, hd = shape[0] // 2, shape[1] // 2
    if shape[0] % 2 == 0 or shape[1] % 2 == 0 or shape[0] < 3 or shape[1] < 3:
        raise SegmentError(f"segment shape must be odd and >= 3 per axis, got {shape}")
    return hr, hd


def _as_power(m):
    return m.power if isinstance(m, RDMap) else np.asarray(m)


def extract_segment(rd, center, shape=SEGMENT_SHAPE) -> np.ndarray:
    """Copy of the shape block centered on (range_bin, doppler_bin)."""
    power = _as_power(rd)
    hr, hd = segment_half(shape)
    r, d = int(center[0]), int(center[1])
    if not (hr <= r < power.shape[0] - hr and hd <= d < power.shape[1] - hd):
        raise SegmentError(
            f"center {center} too close to the map edge for a {shape} segment "
            f"on a {power.shape} map"
        )
    return power[r - hr:r + hr + 1, d - hd:d + hd + 1].copy()


@dataclass
class SegmentFeature:
    center: tuple[int, int] | None
    m_bins: int
    histogram: np.ndarray     # (m_bins,) heights, sums to 1
    degenerate: bool          # constant segment, all mass forced to bin 0
    cells: np.ndarray | None = None


def _bin_edges(m_bins):
    return np.linspace(0.0, 1.0, m_bins + 1)


def histogram_feature(cells, m_bins, center=None, keep_cells=False) -> SegmentFeature:
    """Min-max normalized histogram of a cell block.

    Bins are [i/M, (i+1)/M), closed on the left, with the final bin closed
    on both sides so 1.0 lands in it.  A constant block cannot be
    normalized; it gets all mass in bin 0 and a degenerate flag.
    """
    cells = np.asarray(cells, dtype=float)
    if cells.size == 0:
        raise SegmentError("empty cell block")
    if m_bins < 2:
        raise SegmentError(f"m_bins must be >= 2, got {m_bins}")
    flat = cells.ravel()
    lo, hi = flat.min(), flat.max()
    heights = np.zeros(m_bins)
    if hi == lo:
        heights[0] = 1.0
        return SegmentFeature(center, m_bins, heights, True, cells if keep_cells else None)
    norm = (flat - lo) / (hi - lo)
    idx = np.searchsorted(_bin_edges(m_bins), norm, side="right") - 1
    np.clip(idx, 0, m_bins - 1, out=idx)
    counts = np.bincount(idx, minlength=m_bins)
    heights = counts / flat.size
    return SegmentFeature(center, m_bins, heights, False, cells if keep_cells else None)


def segment_histogram_map(rd, m_bins, shape=SEGMENT_SHAPE, stride=1):
    """Histograms of every full segment position, vectorized.

    Returns (centers (n, 2) int, X (n, m_bins) float, degenerate (n,) bool)
    where centers run over all positions whose segment fits in the map,
    row-major, subsampled by stride along both axes.
    """
    power = _as_power(rd)
    hr, hd = segment_half(shape)
    if power.shape[0] < shape[0] or power.shape[1] < shape[1]:
        raise SegmentError(f"map {power.shape} smaller than segment {shape}")
    win = sliding_window_view(power, shape)[::stride, ::stride]
    n_r, n_d = win.shape[:2]
    flat = win.reshape(n_r * n_d, shape[0] * shape[1])
    lo = flat.min(axis=1)
    hi = flat.max(axis=1)
    span = hi - lo
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    norm = (flat - lo[:, None]) / safe[:, None]
    idx = np.searchsorted(_bin_edges(m_bins), norm.ravel(), side="right") - 1
    np.clip(idx, 0, m_bins - 1, out=idx)
    rows = np.repeat(np.arange(flat.shape[0]), flat.shape[1])
    counts = np.bincount(rows * m_bins + idx, minlength=flat.shape[0] * m_bins)
    X = counts.reshape(flat.shape[0], m_bins) / flat.shape[1]
    X[degenerate] = 0.0
    X[degenerate, 0] = 1.0
    rr, dd = np.meshgrid(np.arange(n_r) * stride + hr, np.arange(n_d) * stride + hd, indexing="ij")
    centers = np.stack([rr.ravel(), dd.ravel()], axis=1)
    return centers, X, degenerate


# ---------------------------------------------------------------------------
# serialization


def save_rd_map(base_path, rd: RDMap) -> None:
    """Write <base>.bin (float32, C order) plus a <base>.json geometry sidecar."""
    base = Path(base_path)
    rd.power.astype(np.float32).tofile(base.with_suffix(".bin"))
    g = rd.geometry
    sidecar = {
        "n_range": g.n_range,
        "n_doppler": g.n_doppler,
        "range_res_m": g.range_res,
        "vel_res_mps": g.vel_res,
        "max_range_m": g.max_range,
        "max_abs_velocity_mps": g.max_abs_velocity,
        "doppler_centered": True,
        "dtype": "float32",
        "order": "C",
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_rd_map(base_path) -> RDMap:
    base = Path(base_path)
    meta = json.loads(base.with_suffix(".json").read_text())
    power = np.fromfile(base.with_suffix(".bin"), dtype=np.float32)
    n, l = meta["n_range"], meta["n_doppler"]
    if power.size != n * l:
        raise ValueError(f"{base}: expected {n * l} cells, found {power.size}")
    geometry = MapGeometry(
        range_res=meta["range_res_m"],
        vel_res=meta["vel_res_mps"],
        max_range=meta["max_range_m"],
        max_abs_velocity=meta["max_abs_velocity_mps"],
        n_range=n,
        n_doppler=l,
    )
    return RDMap(power=power.reshape(n, l).astype(np.float64), geometry=geometry)


def histograms_to_csv(path, centers, X, labels) -> None:
    X = np.asarray(X)
    m = X.shape[1]
    header = "range_bin,doppler_bin," + ",".join(f"x{i}" for i in range(m)) + ",label"
    body = np.column_stack([np.asarray(centers, dtype=float), X, np.asarray(labels, dtype=float)])
    fmt = ["%d", "%d"] + ["%.10g"] * m + ["%d"]
    np.savetxt(path, body, delimiter=",", header=header, comments="", fmt=fmt)


def histograms_from_csv(path):
    """Returns (centers (n,2) int, X (n,M) float, labels (n,) int)."""
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if body.shape[1] < 4:
        raise ValueError(f"{path}: expected at least 4 columns, got {body.shape[1]}")
    centers = body[:, :2].astype(int)
    X = body[:, 2:-1]
    labels = body[:, -1].astype(int)
    return centers, X, labels
