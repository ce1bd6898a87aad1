"""Desk-scale propagation oracle: per-pixel coverage maps and per-cell KPI bins.

Stands in for a commercial planning simulator. Log-distance path loss with a
free-space core, a parabolic 3GPP-style antenna pattern, co-channel SINR with a
flat noise floor, and an affine SINR->CQI quantization. All thresholds live
here as named constants.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import Scenario

REF_DISTANCE_M = 1000.0          # free-space inside, log-distance beyond
PATHLOSS_EXPONENT = 3.5
V_BEAMWIDTH_DEG = 10.0
MAX_PATTERN_ATTEN_DB = 25.0
PEAK_PATTERN_GAIN_DBI = 15.0
FIXED_ANTENNA_GAIN_DBI = 15.0    # feeder/array gain on top of the element pattern
NOISE_FLOOR_DBM = -110.0
PIXEL_BUDGET = 4_000_000

# Perfect / Good / Fair lower edges; below the last edge is Bad.
SINR_BIN_EDGES_DB = (20.0, 10.0, 0.0)
CQI_BIN_EDGES = (12, 9, 5)
RSSI_BIN_EDGES_DBM = (-80.0, -95.0, -105.0)


class PixelBudgetError(ValueError):
    """Raised when the scenario grid would exceed the pixel budget."""


@dataclass(frozen=True)
class KpiBins:
    """Perfect/Good/Fair/Bad area fractions for one cell and one KPI."""

    perfect: float
    good: float
    fair: float
    bad: float

    def as_array(self) -> np.ndarray:
        return np.array([self.perfect, self.good, self.fair, self.bad], dtype=np.float64)

    def validate(self) -> None:
        vals = self.as_array()
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValueError(f"bin fractions outside [0, 1]: {vals}")
        if abs(float(vals.sum()) - 1.0) > 1e-9:
            raise ValueError(f"bin fractions sum to {vals.sum()}, not 1")

    @classmethod
    def from_values(cls, values: np.ndarray, edges: tuple) -> "KpiBins":
        """Bin a sample of KPI values by the three lower edges; empty -> all Bad."""
        n = values.size
        if n == 0:
            return cls(0.0, 0.0, 0.0, 1.0)
        perfect = int(np.count_nonzero(values >= edges[0]))
        good = int(np.count_nonzero((values >= edges[1]) & (values < edges[0])))
        fair = int(np.count_nonzero((values >= edges[2]) & (values < edges[1])))
        bad = n - perfect - good - fair
        return cls(perfect / n, good / n, fair / n, bad / n)


@dataclass
class CoverageMap:
    """Flattened per-pixel oracle output, row-major over (y, x) pixel centers.

    rssi_dbm holds the received power from every cell at every pixel, in node
    order; serving/sinr/cqi are keyed by carrier and cover only cells on that
    carrier (serving is a global cell index).
    """

    positions: np.ndarray            # (n_px, 2)
    nx: int
    ny: int
    cell_ids: list[str]
    rssi_dbm: np.ndarray             # (n_px, n_cells)
    serving: dict[float, np.ndarray]
    sinr_db: dict[float, np.ndarray]
    cqi: dict[float, np.ndarray]

    def served_pixels(self, cell_index: int, carrier: float) -> np.ndarray:
        return np.flatnonzero(self.serving[carrier] == cell_index)


@dataclass
class SimulationResult:
    coverage: CoverageMap
    z_sinr: list[KpiBins]
    z_cqi: list[KpiBins]
    m_rssi: list[KpiBins]

    def bins_for(self, kpi: str) -> list[KpiBins]:
        return {"sinr": self.z_sinr, "cqi": self.z_cqi, "rssi": self.m_rssi}[kpi]


def path_loss_db(d_m, f_mhz):
    """Log-distance path loss: free-space up to 1 km, exponent 3.5 beyond.

    Vectorized over distance; distances below 1 m are clamped to 1 m.
    """
    d = np.maximum(np.asarray(d_m, dtype=np.float64), 1.0)
    fspl_ref = 32.45 + 20.0 * np.log10(f_mhz)  # free-space loss at the 1 km reference
    ratio = d / REF_DISTANCE_M
    inside = fspl_ref + 20.0 * np.log10(ratio)
    outside = fspl_ref + 10.0 * PATHLOSS_EXPONENT * np.log10(ratio)
    return np.where(d <= REF_DISTANCE_M, inside, outside)


def antenna_gain_db(bearing_offset_deg, tilt_offset_deg, h_beamwidth_deg):
    """Parabolic pattern, floored at -25 dB, with 15 dBi boresight gain."""
    b = _wrap_deg(np.asarray(bearing_offset_deg, dtype=np.float64))
    t = _wrap_deg(np.asarray(tilt_offset_deg, dtype=np.float64))
    atten = 12.0 * (b / h_beamwidth_deg) ** 2 + 12.0 * (t / V_BEAMWIDTH_DEG) ** 2
    return PEAK_PATTERN_GAIN_DBI - np.minimum(atten, MAX_PATTERN_ATTEN_DB)


def _wrap_deg(a):
    return (a + 180.0) % 360.0 - 180.0


def received_power_dbm(cell, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Downlink received power from one cell at pixel centers (ground level)."""
    dx = px - cell.x
    dy = py - cell.y
    d = np.hypot(dx, dy)
    bearing = np.degrees(np.arctan2(dx, dy))  # compass: 0 = +y, clockwise
    depression = np.degrees(np.arctan2(cell.antenna_height_m, np.maximum(d, 1.0)))
    gain = antenna_gain_db(bearing - cell.azimuth_deg, cell.mech_tilt_deg - depression, cell.h_beamwidth_deg)
    return cell.tx_power_dbm + FIXED_ANTENNA_GAIN_DBI + gain - path_loss_db(d, cell.carrier_mhz)


def pixel_grid(scenario: Scenario) -> tuple[np.ndarray, int, int]:
    res = scenario.grid_resolution_m
    b = scenario.bounds
    nx = int(math.ceil(b.width / res))
    ny = int(math.ceil(b.height / res))
    if nx * ny > PIXEL_BUDGET:
        raise PixelBudgetError(f"{nx}x{ny} pixels exceeds budget of {PIXEL_BUDGET}")
    xs = b.xmin + (np.arange(nx) + 0.5) * res
    ys = b.ymin + (np.arange(ny) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)  # row-major over (y, x)
    return np.column_stack([gx.ravel(), gy.ravel()]), nx, ny


def sinr_to_cqi(sinr_db: np.ndarray) -> np.ndarray:
    return np.clip(np.floor((sinr_db + 6.0) / 2.2).astype(np.int64) + 1, 1, 15)


def simulate(scenario: Scenario) -> SimulationResult:
    """Evaluate the full coverage map and reduce it to per-cell KPI bins.

    Deterministic: per-pixel interference sums run over cells in node order,
    so results are independent of any outer parallelism.
    """
    scenario.validate()
    positions, nx, ny = pixel_grid(scenario)
    px, py = positions[:, 0], positions[:, 1]
    cells = scenario.cells
    n_cells = len(cells)

    rssi = np.empty((positions.shape[0], n_cells), dtype=np.float64)
    for j, cell in enumerate(cells):
        rssi[:, j] = received_power_dbm(cell, px, py)

    serving: dict[float, np.ndarray] = {}
    sinr: dict[float, np.ndarray] = {}
    cqi: dict[float, np.ndarray] = {}
    noise_lin = 10.0 ** (NOISE_FLOOR_DBM / 10.0)
    for carrier in scenario.carriers:
        cols = np.array([j for j, c in enumerate(cells) if c.carrier_mhz == carrier])
        rx = rssi[:, cols]
        best = np.argmax(rx, axis=1)  # ties: lowest index
        serv_power = rx[np.arange(rx.shape[0]), best]
        lin = 10.0 ** (rx / 10.0)
        lin[np.arange(rx.shape[0]), best] = 0.0
        interference = lin.sum(axis=1)
        sinr_f = serv_power - 10.0 * np.log10(interference + noise_lin)
        serving[carrier] = cols[best]
        sinr[carrier] = sinr_f
        cqi[carrier] = sinr_to_cqi(sinr_f)

    coverage = CoverageMap(
        positions=positions, nx=nx, ny=ny,
        cell_ids=[c.cell_id for c in cells],
        rssi_dbm=rssi, serving=serving, sinr_db=sinr, cqi=cqi,
    )

    z_sinr: list[KpiBins] = []
    z_cqi: list[KpiBins] = []
    m_rssi: list[KpiBins] = []
    for j, cell in enumerate(cells):
        mine = coverage.served_pixels(j, cell.carrier_mhz)
        z_sinr.append(KpiBins.from_values(sinr[cell.carrier_mhz][mine], SINR_BIN_EDGES_DB))
        z_cqi.append(KpiBins.from_values(cqi[cell.carrier_mhz][mine], CQI_BIN_EDGES))
        m_rssi.append(KpiBins.from_values(rssi[mine, j], RSSI_BIN_EDGES_DBM))
    return SimulationResult(coverage=coverage, z_sinr=z_sinr, z_cqi=z_cqi, m_rssi=m_rssi)


def write_kpi_csv(scenario: Scenario, result: SimulationResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "kpi", "perfect", "good", "fair", "bad"])
        for kpi in ("sinr", "cqi", "rssi"):
            for cell, bins in zip(scenario.cells, result.bins_for(kpi)):
                writer.writerow([cell.cell_id, kpi,
                                 repr(bins.perfect), repr(bins.good),
                                 repr(bins.fair), repr(bins.bad)])


def write_map_csv(result: SimulationResult, path: str | Path) -> None:
    """Per-pixel dump for plotting: serving cell, SINR and CQI per carrier."""
    cov = result.coverage
    carriers = sorted(cov.serving)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y"]
        for f in carriers:
            header += [f"serving_{int(f)}", f"sinr_db_{int(f)}", f"cqi_{int(f)}"]
        writer.writerow(header)
        for i in range(cov.positions.shape[0]):
            row: list = [repr(cov.positions[i, 0]), repr(cov.positions[i, 1])]
            for f in carriers:
                row += [cov.cell_ids[int(cov.serving[f][i])],
                        repr(float(cov.sinr_db[f][i])), int(cov.cqi[f][i])]
            writer.writerow(row)
