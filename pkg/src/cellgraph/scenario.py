"""Cell configuration data model, file ingestion, and randomized scenario synthesis."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_CARRIERS_MHZ = (800, 2100, 2600)
MIN_SITE_DISTANCE_M = 500.0
MAX_PLACEMENT_ATTEMPTS = 10_000
AZIMUTH_JITTER_DEG = 10.0
BEAMWIDTH_CHOICES_DEG = (33.0, 65.0, 90.0)
TILT_RANGE_DEG = (0.0, 10.0)
POWER_RANGE_DBM = (40.0, 46.0)
HEIGHT_RANGE_M = (20.0, 40.0)

SCENARIO_SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "cell_id", "site_id", "x", "y", "azimuth_deg", "mech_tilt_deg",
    "antenna_height_m", "h_beamwidth_deg", "carrier_mhz", "tx_power_dbm",
]


class ScenarioParseError(ValueError):
    """Raised when a scenario file cannot be parsed at all."""


class ScenarioValidationError(ValueError):
    """Raised when a scenario violates an invariant; names the offending cell/field."""

    def __init__(self, cell_id: str | None, fieldname: str, message: str):
        self.cell_id = cell_id
        self.fieldname = fieldname
        where = f"cell {cell_id!r}, field {fieldname!r}" if cell_id else f"field {fieldname!r}"
        super().__init__(f"{where}: {message}")


class PlacementError(RuntimeError):
    """Raised when rejection sampling cannot place all sites inside the bounds."""


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class Cell:
    """One eUtran cell: a single carrier-frequency coverage unit of a sector antenna.

    Positions are planar meters in a local tangent projection; azimuth is
    compass degrees (0 = +y, clockwise).
    """

    cell_id: str
    site_id: str
    x: float
    y: float
    azimuth_deg: float
    mech_tilt_deg: float
    antenna_height_m: float
    h_beamwidth_deg: float
    carrier_mhz: float
    tx_power_dbm: float

    def validate(self) -> None:
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise ScenarioValidationError(self.cell_id, "azimuth_deg", f"{self.azimuth_deg} not in [0, 360)")
        if not 0.0 < self.h_beamwidth_deg < 180.0:
            raise ScenarioValidationError(self.cell_id, "h_beamwidth_deg", f"{self.h_beamwidth_deg} not in (0, 180)")
        if not 10.0 <= self.tx_power_dbm <= 50.0:
            raise ScenarioValidationError(self.cell_id, "tx_power_dbm", f"{self.tx_power_dbm} not in [10, 50]")
        if self.carrier_mhz <= 0:
            raise ScenarioValidationError(self.cell_id, "carrier_mhz", f"{self.carrier_mhz} must be positive")
        if self.antenna_height_m < 0:
            raise ScenarioValidationError(self.cell_id, "antenna_height_m", f"{self.antenna_height_m} must be >= 0")

    def carrier_onehot(self, carriers: tuple[float, ...]) -> list[float]:
        if self.carrier_mhz not in carriers:
            raise ScenarioValidationError(self.cell_id, "carrier_mhz", f"{self.carrier_mhz} not in carrier set {carriers}")
        return [1.0 if c == self.carrier_mhz else 0.0 for c in carriers]

    def feature_vector(self, carriers: tuple[float, ...]) -> list[float]:
        """Configuration encoding: azimuth as sin/cos (no 0/360 discontinuity),
        then tilt, height, beamwidth, power, carrier one-hot."""
        az = math.radians(self.azimuth_deg)
        return [
            math.sin(az), math.cos(az),
            self.mech_tilt_deg, self.antenna_height_m,
            self.h_beamwidth_deg, self.tx_power_dbm,
        ] + self.carrier_onehot(carriers)


def feature_names(carriers: tuple[float, ...]) -> list[str]:
    base = ["azimuth_sin", "azimuth_cos", "mech_tilt_deg", "antenna_height_m",
            "h_beamwidth_deg", "tx_power_dbm"]
    return base + [f"carrier_{int(c)}" for c in carriers]


@dataclass
class Scenario:
    """A named collection of cells over a rectangular region.

    Cells are kept sorted by cell_id so node indices are reproducible everywhere
    downstream.
    """

    name: str
    bounds: Bounds
    grid_resolution_m: float
    cells: list[Cell] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.cells = sorted(self.cells, key=lambda c: c.cell_id)

    @property
    def carriers(self) -> tuple[float, ...]:
        return tuple(sorted({c.carrier_mhz for c in self.cells}))

    def validate(self) -> None:
        if self.grid_resolution_m <= 0:
            raise ScenarioValidationError(None, "grid_resolution_m", "must be positive")
        seen_ids: set[str] = set()
        site_pos: dict[str, tuple[float, float]] = {}
        for cell in self.cells:
            cell.validate()
            if cell.cell_id in seen_ids:
                raise ScenarioValidationError(cell.cell_id, "cell_id", "duplicate cell_id")
            seen_ids.add(cell.cell_id)
            if not self.bounds.contains(cell.x, cell.y):
                raise ScenarioValidationError(cell.cell_id, "x", f"position ({cell.x}, {cell.y}) outside bounds")
            prev = site_pos.setdefault(cell.site_id, (cell.x, cell.y))
            if prev != (cell.x, cell.y):
                raise ScenarioValidationError(cell.cell_id, "site_id", f"co-sited cells of {cell.site_id!r} disagree on position")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENARIO_SCHEMA_VERSION,
            "name": self.name,
            "bounds": {"xmin": self.bounds.xmin, "ymin": self.bounds.ymin,
                       "xmax": self.bounds.xmax, "ymax": self.bounds.ymax},
            "grid_resolution_m": self.grid_resolution_m,
            "cells": [
                {
                    "cell_id": c.cell_id, "site_id": c.site_id, "x": c.x, "y": c.y,
                    "azimuth_deg": c.azimuth_deg, "mech_tilt_deg": c.mech_tilt_deg,
                    "antenna_height_m": c.antenna_height_m, "h_beamwidth_deg": c.h_beamwidth_deg,
                    "carrier_mhz": c.carrier_mhz, "tx_power_dbm": c.tx_power_dbm,
                }
                for c in self.cells
            ],
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _scenario_from_dict(data: dict, origin: str) -> Scenario:
    try:
        bounds = Bounds(**{k: float(data["bounds"][k]) for k in ("xmin", "ymin", "xmax", "ymax")})
        cells = [
            Cell(
                cell_id=str(rec["cell_id"]), site_id=str(rec["site_id"]),
                x=float(rec["x"]), y=float(rec["y"]),
                azimuth_deg=float(rec["azimuth_deg"]), mech_tilt_deg=float(rec["mech_tilt_deg"]),
                antenna_height_m=float(rec["antenna_height_m"]), h_beamwidth_deg=float(rec["h_beamwidth_deg"]),
                carrier_mhz=float(rec["carrier_mhz"]), tx_power_dbm=float(rec["tx_power_dbm"]),
            )
            for rec in data["cells"]
        ]
        scenario = Scenario(
            name=str(data["name"]),
            bounds=bounds,
            grid_resolution_m=float(data["grid_resolution_m"]),
            cells=cells,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioValidationError):
            raise
        raise ScenarioParseError(f"{origin}: malformed scenario record: {exc}") from exc
    scenario.validate()
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario from JSON (or CSV with identical column names)."""
    path = Path(path)
    if not path.exists():
        raise ScenarioParseError(f"{path}: no such file")
    if path.suffix.lower() == ".csv":
        return _load_scenario_csv(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON: {exc}") from exc
    return _scenario_from_dict(data, str(path))


def _load_scenario_csv(path: Path) -> Scenario:
    """CSV carries only the cell table; bounds are the data bbox padded by 500 m."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_COLUMNS) <= set(reader.fieldnames):
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
            raise ScenarioParseError(f"{path}: missing CSV columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ScenarioParseError(f"{path}: empty CSV")
    xs = [float(r["x"]) for r in rows]
    ys = [float(r["y"]) for r in rows]
    pad = 500.0
    data = {
        "name": path.stem,
        "bounds": {"xmin": min(xs) - pad, "ymin": min(ys) - pad,
                   "xmax": max(xs) + pad, "ymax": max(ys) + pad},
        "grid_resolution_m": 50.0,
        "cells": rows,
    }
    return _scenario_from_dict(data, str(path))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(scenario.serialize())


def generate_scenario(
    n_sites: int,
    sectors_per_site: int,
    carriers: tuple[float, ...] = DEFAULT_CARRIERS_MHZ,
    bounds: Bounds = Bounds(0.0, 0.0, 10_000.0, 10_000.0),
    seed: int = 0,
    grid_resolution_m: float = 50.0,
    name: str | None = None,
) -> Scenario:
    """Synthesize a multi-site scenario: seeded site placement with >= 500 m
    inter-site spacing, per-site sector fans, one cell per sector per carrier.

    Pure function of its arguments: the same seed always yields the same scenario.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    if sectors_per_site not in (1, 2, 3):
        raise ValueError("sectors_per_site must be in {1, 2, 3}")
    carriers = tuple(sorted(float(c) for c in carriers))
    rng = np.random.default_rng(seed)

    positions: list[tuple[float, float]] = []
    attempts = 0
    while len(positions) < n_sites:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise PlacementError(
                f"could not place {n_sites} sites with {MIN_SITE_DISTANCE_M} m spacing "
                f"in {bounds.width:.0f}x{bounds.height:.0f} m after {attempts} attempts"
            )
        attempts += 1
        x = rng.uniform(bounds.xmin, bounds.xmax)
        y = rng.uniform(bounds.ymin, bounds.ymax)
        if all(math.hypot(x - px, y - py) >= MIN_SITE_DISTANCE_M for px, py in positions):
            positions.append((x, y))

    cells: list[Cell] = []
    for s, (x, y) in enumerate(positions):
        site_id = f"site{s:03d}"
        height = rng.uniform(*HEIGHT_RANGE_M)
        base_az = rng.uniform(0.0, 360.0)
        for k in range(sectors_per_site):
            azimuth = (base_az + k * 360.0 / sectors_per_site + rng.uniform(-AZIMUTH_JITTER_DEG, AZIMUTH_JITTER_DEG)) % 360.0
            beamwidth = float(rng.choice(BEAMWIDTH_CHOICES_DEG))
            tilt = rng.uniform(*TILT_RANGE_DEG)
            for carrier in carriers:
                cells.append(Cell(
                    cell_id=f"c{s:03d}s{k}f{int(carrier):04d}",
                    site_id=site_id,
                    x=x, y=y,
                    azimuth_deg=azimuth,
                    mech_tilt_deg=tilt,
                    antenna_height_m=height,
                    h_beamwidth_deg=beamwidth,
                    carrier_mhz=carrier,
                    tx_power_dbm=rng.uniform(*POWER_RANGE_DBM),
                ))

    scenario = Scenario(
        name=name or f"synthetic-s{n_sites}x{sectors_per_site}x{len(carriers)}-seed{seed}",
        bounds=bounds,
        grid_resolution_m=grid_resolution_m,
        cells=cells,
    )
    scenario.validate()
    return scenario
