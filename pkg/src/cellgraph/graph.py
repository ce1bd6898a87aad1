"""Attributed directed cell graph: relation edges, geometric edge features,
KPI labels, masks, and training-mask standardization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .radio import CoverageMap, SimulationResult
from .scenario import Scenario, feature_names as node_feature_names

GRAPH_SCHEMA_VERSION = 1

RELATIONS = ("interfering", "complementing", "both")
INTERFERENCE_WINDOW_DB = 12.0     # i interferes at pixels within this margin of serving power
CO_SECTOR_AZIMUTH_DEG = 30.0      # capacity layering: co-sited cross-carrier azimuth window
ADJACENT_SECTOR_GAP_DEG = 60.0    # max gap between beam edges for co-sited same-carrier "both"

M_FEATURE_PREFIX = "m_rssi_"


@dataclass(frozen=True)
class EdgeAttr:
    relation: str
    strength: float
    distance_m: float

    def validate(self) -> None:
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength {self.strength} not in [0, 1]")
        if self.distance_m < 0.0:
            raise ValueError(f"distance_m {self.distance_m} must be >= 0")

    def onehot(self) -> list[float]:
        return [1.0 if self.relation == r else 0.0 for r in RELATIONS]


def _azimuth_sep_deg(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def derive_edges(
    scenario: Scenario,
    coverage: CoverageMap,
    geom: dict[tuple[int, int], geometry.GeomFeatures] | None = None,
    grid_step_m: float = geometry.DEFAULT_GRID_STEP_M,
):
    """Relation edges for every qualifying ordered cell pair.

    Same-carrier pairs with overlapping sectors interfere; cross-carrier pairs
    complement either by co-sited capacity layering (azimuth within 30 deg) or
    by overlapping coverage continuation. A co-sited same-carrier pair whose
    beam edges sit within the adjacency gap additionally complements and is
    labeled "both". Strength is directional; the qualification itself is
    symmetric, so edges always come in both directions.

    Returns (edge list [(src, dst, EdgeAttr)], geom features per unordered pair).
    """
    cells = scenario.cells
    if geom is None:
        geom = geometry.batch_edge_geometry(cells, grid_step_m)
    served = {idx: coverage.served_pixels(idx, cell.carrier_mhz)
              for idx, cell in enumerate(cells)}
    sectors = [geometry.sector_from_cell(c) for c in cells]

    def interf_strength(src: int, dst: int) -> float:
        pix = served[dst]
        if pix.size == 0:
            return 0.0
        margin = coverage.rssi_dbm[pix, src] >= coverage.rssi_dbm[pix, dst] - INTERFERENCE_WINDOW_DB
        return float(np.count_nonzero(margin)) / pix.size

    def compl_strength(src: int, dst: int) -> float:
        pix = served[dst]
        if pix.size == 0:
            return 0.0
        pos = coverage.positions[pix]
        inside = geometry.in_sector(sectors[src], pos[:, 0], pos[:, 1])
        return float(np.count_nonzero(inside)) / pix.size

    edges: list[tuple[int, int, EdgeAttr]] = []
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            ci, cj = cells[i], cells[j]
            same_carrier = ci.carrier_mhz == cj.carrier_mhz
            cosited = ci.site_id == cj.site_id
            sep = _azimuth_sep_deg(ci.azimuth_deg, cj.azimuth_deg)
            overlaps = (i, j) in geom
            interfering = same_carrier and overlaps
            complementing = (not same_carrier) and (
                (cosited and sep <= CO_SECTOR_AZIMUTH_DEG)
                or (not cosited and overlaps)
            )
            both = interfering and cosited and (
                sep - (ci.h_beamwidth_deg + cj.h_beamwidth_deg) / 2.0 <= ADJACENT_SECTOR_GAP_DEG
            )
            if not (interfering or complementing):
                continue
            relation = "both" if both else ("interfering" if interfering else "complementing")
            distance = float(np.hypot(ci.x - cj.x, ci.y - cj.y))
            for src, dst in ((i, j), (j, i)):
                if relation == "interfering":
                    strength = interf_strength(src, dst)
                elif relation == "complementing":
                    strength = compl_strength(src, dst)
                else:
                    strength = max(interf_strength(src, dst), compl_strength(src, dst))
                edges.append((src, dst, EdgeAttr(relation, strength, distance)))
    return edges, geom


def _standardize_stats(matrix: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sel = matrix[rows] if rows.size else matrix
    mean = sel.mean(axis=0)
    std = sel.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


@dataclass
class CellGraph:
    """Immutable-by-convention graph container; all arrays are in node order."""

    name: str
    nodes: list[str]
    carriers: tuple[float, ...]
    feature_names: list[str]
    x_raw: np.ndarray                      # (n, d) unstandardized node features
    include_m: bool
    src: np.ndarray                        # (E,)
    dst: np.ndarray                        # (E,)
    relation: list[str]
    strength: np.ndarray                   # (E,)
    distance_m: np.ndarray                 # (E,)
    ia: np.ndarray                         # (E,)
    id_m: np.ndarray                       # (E,)
    ic: np.ndarray                         # (E, 2), nan when the overlap is empty
    target_ia: np.ndarray                  # (E,)
    target_id: np.ndarray                  # (E,)
    labels: dict[str, np.ndarray]          # kpi -> (n, 4)
    masks: dict[str, np.ndarray]           # train / test / few_shot index arrays
    label_read_count: int = 0
    _node_stats: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    _edge_stats: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def relation_onehot(self) -> np.ndarray:
        return np.array([[1.0 if r == rel else 0.0 for rel in RELATIONS] for r in self.relation],
                        dtype=np.float64).reshape(self.n_edges, len(RELATIONS))

    def _train_edge_rows(self) -> np.ndarray:
        train = set(self.masks["train"].tolist())
        rows = np.array([k for k in range(self.n_edges)
                         if int(self.src[k]) in train and int(self.dst[k]) in train], dtype=np.int64)
        return rows if rows.size else np.arange(self.n_edges, dtype=np.int64)

    def node_stats(self) -> tuple[np.ndarray, np.ndarray]:
        if self._node_stats is None:
            self._node_stats = _standardize_stats(self.x_raw, self.masks["train"])
        return self._node_stats

    def edge_raw(self, with_o: bool = False) -> tuple[np.ndarray, list[str]]:
        cols = [self.relation_onehot(), self.strength[:, None], self.distance_m[:, None]]
        names = [f"rel_{r}" for r in RELATIONS] + ["strength", "distance_m"]
        if with_o:
            ic_filled = np.nan_to_num(self.ic, nan=0.0)
            cols += [self.ia[:, None], self.id_m[:, None], ic_filled]
            names += ["ia", "id_m", "ic_x", "ic_y"]
        return np.concatenate(cols, axis=1) if self.n_edges else np.zeros((0, len(names))), names

    def edge_stats(self, with_o: bool = False) -> tuple[np.ndarray, np.ndarray]:
        raw, _ = self.edge_raw(with_o)
        return _standardize_stats(raw, self._train_edge_rows())

    def node_features(self, stats: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
        mean, std = stats if stats is not None else self.node_stats()
        return (self.x_raw - mean) / std

    def edge_features(self, with_o: bool = False,
                      stats: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
        raw, _ = self.edge_raw(with_o)
        mean, std = stats if stats is not None else self.edge_stats(with_o)
        return (raw - mean) / std

    def pretext_targets(self, pretext: str) -> np.ndarray:
        if pretext == "ia":
            return self.target_ia
        if pretext == "id":
            return self.target_id
        raise ValueError(f"unknown pretext {pretext!r}")

    def labels_for(self, kpi: str) -> np.ndarray:
        """Instrumented label access: counts every read so protocols can assert
        that no labels were touched."""
        if kpi not in self.labels:
            raise KeyError(f"no labels for kpi {kpi!r}")
        self.label_read_count += 1
        return self.labels[kpi]

    def validate(self) -> None:
        n, e = self.n_nodes, self.n_edges
        if len(set(self.nodes)) != n:
            raise ValueError("duplicate node ids")
        if self.x_raw.shape[0] != n:
            raise ValueError("node feature row count mismatch")
        if np.any(self.src == self.dst):
            raise ValueError("self-loop in edge set")
        for arr in (self.src, self.dst):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValueError("edge index out of range")
        pairs = set(zip(self.src.tolist(), self.dst.tolist()))
        if any((j, i) not in pairs for i, j in pairs):
            raise ValueError("edge set is not direction-complete")
        if len(pairs) != e:
            raise ValueError("duplicate directed edge")
        for k in range(e):
            EdgeAttr(self.relation[k], float(self.strength[k]), float(self.distance_m[k])).validate()
        if np.any((self.target_ia < 0) | (self.target_ia > 1)) or np.any((self.target_id < 0) | (self.target_id > 1)):
            raise ValueError("pretext targets outside [0, 1]")
        for kpi, z in self.labels.items():
            if z.shape != (n, 4):
                raise ValueError(f"label shape mismatch for {kpi}")
            if np.any(np.abs(z.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError(f"labels for {kpi} leave the 4-simplex")
        train, test = set(self.masks["train"].tolist()), set(self.masks["test"].tolist())
        if train & test:
            raise ValueError("train/test masks overlap")
        few = set(self.masks.get("few_shot", np.empty(0, dtype=np.int64)).tolist())
        if few and not few <= train:
            raise ValueError("few-shot mask must be drawn from the training mask")
        if self.include_m != any(name.startswith(M_FEATURE_PREFIX) for name in self.feature_names):
            raise ValueError("include_m flag disagrees with feature columns")

    def to_dict(self) -> dict:
        ic = [[None, None] if np.isnan(row[0]) else [row[0], row[1]] for row in self.ic]
        return {
            "schema_version": GRAPH_SCHEMA_VERSION,
            "name": self.name,
            "carriers": list(self.carriers),
            "include_m": self.include_m,
            "nodes": self.nodes,
            "feature_names": self.feature_names,
            "node_features": self.x_raw.tolist(),
            "edges": [
                {
                    "src": int(self.src[k]), "dst": int(self.dst[k]),
                    "attr": {"relation": self.relation[k], "strength": float(self.strength[k]),
                             "distance_m": float(self.distance_m[k])},
                    "geom": {"ia": float(self.ia[k]), "id_m": float(self.id_m[k]),
                             "ic": ic[k], "target_ia": float(self.target_ia[k]),
                             "target_id": float(self.target_id[k])},
                }
                for k in range(self.n_edges)
            ],
            "labels": {k: v.tolist() for k, v in self.labels.items()},
            "masks": {k: v.tolist() for k, v in self.masks.items()},
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize())

    @classmethod
    def from_dict(cls, data: dict) -> "CellGraph":
        if data.get("schema_version") != GRAPH_SCHEMA_VERSION:
            raise ValueError(f"unsupported graph schema_version {data.get('schema_version')}")
        edges = data["edges"]
        e = len(edges)
        ic = np.full((e, 2), np.nan)
        for k, rec in enumerate(edges):
            if rec["geom"]["ic"][0] is not None:
                ic[k] = rec["geom"]["ic"]
        graph = cls(
            name=data["name"],
            nodes=list(data["nodes"]),
            carriers=tuple(data["carriers"]),
            feature_names=list(data["feature_names"]),
            x_raw=np.array(data["node_features"], dtype=np.float64),
            include_m=bool(data["include_m"]),
            src=np.array([rec["src"] for rec in edges], dtype=np.int64),
            dst=np.array([rec["dst"] for rec in edges], dtype=np.int64),
            relation=[rec["attr"]["relation"] for rec in edges],
            strength=np.array([rec["attr"]["strength"] for rec in edges], dtype=np.float64),
            distance_m=np.array([rec["attr"]["distance_m"] for rec in edges], dtype=np.float64),
            ia=np.array([rec["geom"]["ia"] for rec in edges], dtype=np.float64),
            id_m=np.array([rec["geom"]["id_m"] for rec in edges], dtype=np.float64),
            ic=ic,
            target_ia=np.array([rec["geom"]["target_ia"] for rec in edges], dtype=np.float64),
            target_id=np.array([rec["geom"]["target_id"] for rec in edges], dtype=np.float64),
            labels={k: np.array(v, dtype=np.float64) for k, v in data["labels"].items()},
            masks={k: np.array(v, dtype=np.int64) for k, v in data["masks"].items()},
        )
        graph.validate()
        return graph

    @classmethod
    def load(cls, path: str | Path) -> "CellGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_masks(n_nodes: int, train_frac: float, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_nodes)
    n_train = int(round(train_frac * n_nodes))
    return {
        "train": np.sort(perm[:n_train]),
        "test": np.sort(perm[n_train:]),
        "few_shot": np.empty(0, dtype=np.int64),
    }


def build_graph(
    scenario: Scenario,
    sim: SimulationResult,
    include_m: bool,
    train_frac: float = 0.8,
    split_seed: int = 0,
    grid_step_m: float = geometry.DEFAULT_GRID_STEP_M,
) -> CellGraph:
    """Assemble the attributed graph from a scenario and its oracle outputs.

    Node features are the configuration encoding, concatenated with the RSSI
    measurement bins only when include_m is set. Standardization statistics
    are computed lazily from the training mask alone.
    """
    scenario.validate()
    cells = scenario.cells
    carriers = scenario.carriers
    names = node_feature_names(carriers)
    x = np.array([c.feature_vector(carriers) for c in cells], dtype=np.float64)
    if include_m:
        m = np.array([bins.as_array() for bins in sim.m_rssi], dtype=np.float64)
        x = np.concatenate([x, m], axis=1)
        names = names + [f"{M_FEATURE_PREFIX}{b}" for b in ("perfect", "good", "fair", "bad")]

    edge_list, geom = derive_edges(scenario, sim.coverage, grid_step_m=grid_step_m)
    e = len(edge_list)
    src = np.array([rec[0] for rec in edge_list], dtype=np.int64)
    dst = np.array([rec[1] for rec in edge_list], dtype=np.int64)
    ic = np.full((e, 2), np.nan)
    ia = np.zeros(e)
    id_m = np.zeros(e)
    t_ia = np.zeros(e)
    t_id = np.zeros(e)
    for k, (i, j, _attr) in enumerate(edge_list):
        g = geom.get((min(i, j), max(i, j)))
        if g is None:
            continue
        ia[k], id_m[k], t_ia[k], t_id[k] = g.ia, g.id_m, g.target_ia, g.target_id
        if g.ic is not None:
            ic[k] = g.ic

    graph = CellGraph(
        name=scenario.name,
        nodes=[c.cell_id for c in cells],
        carriers=carriers,
        feature_names=names,
        x_raw=x,
        include_m=include_m,
        src=src,
        dst=dst,
        relation=[rec[2].relation for rec in edge_list],
        strength=np.array([rec[2].strength for rec in edge_list], dtype=np.float64),
        distance_m=np.array([rec[2].distance_m for rec in edge_list], dtype=np.float64),
        ia=ia, id_m=id_m, ic=ic, target_ia=t_ia, target_id=t_id,
        labels={
            "sinr": np.array([b.as_array() for b in sim.z_sinr]),
            "cqi": np.array([b.as_array() for b in sim.z_cqi]),
        },
        masks=split_masks(len(cells), train_frac, split_seed),
    )
    graph.validate()
    return graph
