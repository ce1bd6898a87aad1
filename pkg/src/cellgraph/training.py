"""Training protocols: fully supervised benchmarking (transductive and
inductive), the two-phase SSL pretrain -> freeze -> few-shot fine-tune
procedure, and the gain bookkeeping between them."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import CellGraph, M_FEATURE_PREFIX
from .models import (BackboneConfig, DownstreamHead, PretextHead, build_backbone)

PRETEXT_CHOICES = ("ia", "id", "none")
KPI_CHOICES = ("sinr", "cqi")
SPLIT_CHOICES = ("transductive", "inductive")

# Sub-seed offsets so one config seed drives all randomness.
_SEED_BACKBONE = 1
_SEED_PT_HEAD = 2
_SEED_FT_HEAD = 3
_SEED_FEW_SHOT = 4

LEDGER_COLUMNS = ["config_hash", "mode", "backbone", "kpi", "alpha_pct", "pretext",
                  "seed", "mse_pct", "gain", "wallclock_s", "peak_mem_bytes"]


@dataclass(frozen=True)
class HParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    kpi: str = "sinr"
    pretext: str = "ia"
    alpha_pct: float = 2.5
    n_pt: int = 200
    n_ft: int = 300
    hp_pt: HParams = field(default_factory=lambda: HParams(lr=1e-3))
    hp_ft: HParams = field(default_factory=lambda: HParams(lr=3e-3))
    seed: int = 0
    split: str = "transductive"
    use_o_edge_features: bool = False

    def validate(self) -> None:
        self.backbone.validate()
        if self.kpi not in KPI_CHOICES:
            raise ValueError(f"kpi must be one of {KPI_CHOICES}")
        if self.pretext not in PRETEXT_CHOICES:
            raise ValueError(f"pretext must be one of {PRETEXT_CHOICES}")
        if not 0.0 < self.alpha_pct <= 100.0:
            raise ValueError("alpha_pct must be in (0, 100]")
        if self.n_pt < 1 or self.n_ft < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.split not in SPLIT_CHOICES:
            raise ValueError(f"split must be one of {SPLIT_CHOICES}")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunReport:
    mode: str
    mse_pct: float
    pt_losses: list[float]
    ft_losses: list[float]
    ft_labeled_nodes: int
    eval_node_count: int
    wallclock_s: float
    peak_mem_bytes: int
    config: dict
    gain: float | None = None
    artifacts: "RunArtifacts | None" = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mse_pct": self.mse_pct,
            "pt_losses": self.pt_losses,
            "ft_losses": self.ft_losses,
            "ft_labeled_nodes": self.ft_labeled_nodes,
            "eval_node_count": self.eval_node_count,
            "wallclock_s": self.wallclock_s,
            "peak_mem_bytes": self.peak_mem_bytes,
            "gain": self.gain,
            "config": self.config,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


@dataclass
class RunArtifacts:
    backbone: object
    backbone_store: ad.ParamStore
    downstream_store: ad.ParamStore | None
    pretext_store: ad.ParamStore | None
    downstream_head: object | None
    post_pt_backbone: dict[str, np.ndarray] | None
    node_stats: tuple[np.ndarray, np.ndarray]
    edge_stats: tuple[np.ndarray, np.ndarray]
    few_shot: np.ndarray | None


def loss_ssl(h, src, dst, targets):
    """Mean squared gap between endpoint-embedding cosine and the edge target."""
    if np.asarray(src).size == 0:
        raise ValueError("loss_ssl requires a nonempty edge set")
    cos = ad.cosine_similarity(ad.gather_rows(h, src), ad.gather_rows(h, dst))
    return ad.mse(cos, np.asarray(targets, dtype=np.float64))


def loss_mse(pred, labels):
    """Mean over labeled nodes and the 4 bins of the squared error."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("loss_mse requires a nonempty label set")
    return ad.mse(pred, labels)


def mse_pct(value: float) -> float:
    return 100.0 * value


def sample_few_shot(nodes, alpha_pct: float, seed) -> np.ndarray:
    """Seeded uniform sample without replacement of max(1, ceil(alpha% * |nodes|))."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size < 1:
        raise ValueError("cannot sample from an empty node set")
    k = max(1, math.ceil(alpha_pct / 100.0 * nodes.size))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(nodes, size=min(k, nodes.size), replace=False))


def _eval_mse_pct(backbone, head, graph: CellGraph, kpi: str, nodes: np.ndarray,
                  node_stats, edge_stats, with_o: bool) -> float:
    x = graph.node_features(node_stats)
    eattr = graph.edge_features(with_o=with_o, stats=edge_stats)
    with ad.no_grad():
        h = backbone.forward(ad.Tensor(x), graph.src, graph.dst, ad.Tensor(eattr))
        pred = head(h).values
    z = graph.labels_for(kpi)
    return mse_pct(float(np.mean((pred[nodes] - z[nodes]) ** 2)))


def _assert_no_m(graph: CellGraph) -> None:
    leaked = [n for n in graph.feature_names if n.startswith(M_FEATURE_PREFIX)]
    if graph.include_m or leaked:
        raise ValueError(f"PF2 graph must not carry measurement features, found {leaked}")


def run_pf2(graph: CellGraph, config: TrainConfig) -> RunReport:
    """Algorithm: pretrain backbone + pretext head on the edge-level SSL loss,
    freeze the backbone, then fine-tune a fresh downstream readout on the
    few-shot label subset. pretext == "none" skips pretraining, leaving the
    frozen backbone at its random initialization (the no-PT baseline)."""
    config.validate()
    _assert_no_m(graph)
    t0 = time.perf_counter()
    ad.reset_peak_memory()

    x = graph.node_features()
    eattr = graph.edge_features(with_o=config.use_o_edge_features)
    backbone, gnn_store = build_backbone(
        config.backbone, x.shape[1], eattr.shape[1],
        np.random.default_rng([config.seed, _SEED_BACKBONE]))

    pt_losses: list[float] = []
    pt_store = None
    if config.pretext != "none":
        if graph.n_edges == 0:
            raise ValueError("pretraining requires pretext targets on a nonempty edge set")
        head_pt = PretextHead(config.backbone.hidden,
                              np.random.default_rng([config.seed, _SEED_PT_HEAD]))
        pt_store = head_pt.store
        targets = graph.pretext_targets(config.pretext)
        opt = ad.Adam(ad.ParamStore.union(gnn_store, pt_store),
                      lr=config.hp_pt.lr, beta1=config.hp_pt.beta1,
                      beta2=config.hp_pt.beta2, eps=config.hp_pt.eps)
        for _ in range(config.n_pt):
            opt.zero_grad()
            h = backbone.forward(ad.Tensor(x), graph.src, graph.dst, ad.Tensor(eattr))
            loss = loss_ssl(head_pt(h), graph.src, graph.dst, targets)
            ad.backward(loss)
            opt.step()
            pt_losses.append(loss.item())

    gnn_store.freeze()
    post_pt = gnn_store.snapshot()

    # Frozen backbone + fixed inputs: the embedding is constant across FT epochs.
    with ad.no_grad():
        h_frozen = backbone.forward(ad.Tensor(x), graph.src, graph.dst, ad.Tensor(eattr)).values

    head_ft = DownstreamHead(config.backbone.hidden,
                             np.random.default_rng([config.seed, _SEED_FT_HEAD]))
    few_shot = sample_few_shot(graph.masks["train"], config.alpha_pct,
                               [config.seed, _SEED_FEW_SHOT])
    z = graph.labels_for(config.kpi)[few_shot]
    opt = ad.Adam(head_ft.store, lr=config.hp_ft.lr, beta1=config.hp_ft.beta1,
                  beta2=config.hp_ft.beta2, eps=config.hp_ft.eps)
    ft_losses: list[float] = []
    labeled_rows_touched = 0
    for _ in range(config.n_ft):
        opt.zero_grad()
        h = backbone.forward(ad.Tensor(x), graph.src, graph.dst, ad.Tensor(eattr))
        h_z = ad.gather_rows(head_ft(h), few_shot)
        labeled_rows_touched = h_z.values.shape[0]
        loss = loss_mse(h_z, z)
        ad.backward(loss)
        opt.step()
        ft_losses.append(loss.item())

    train_rest = np.setdiff1d(graph.masks["train"], few_shot)
    eval_nodes = np.sort(np.concatenate([train_rest, graph.masks["test"]])).astype(np.int64)
    node_stats, edge_stats = graph.node_stats(), graph.edge_stats(config.use_o_edge_features)
    final = _eval_mse_pct(backbone, head_ft, graph, config.kpi, eval_nodes,
                          node_stats, edge_stats, config.use_o_edge_features)

    return RunReport(
        mode="pf2",
        mse_pct=final,
        pt_losses=pt_losses,
        ft_losses=ft_losses,
        ft_labeled_nodes=labeled_rows_touched,
        eval_node_count=int(eval_nodes.size),
        wallclock_s=time.perf_counter() - t0,
        peak_mem_bytes=ad.peak_memory_bytes(),
        config=config.to_dict(),
        artifacts=RunArtifacts(
            backbone=backbone, backbone_store=gnn_store,
            downstream_store=head_ft.store, pretext_store=pt_store,
            downstream_head=head_ft, post_pt_backbone=post_pt,
            node_stats=node_stats, edge_stats=edge_stats, few_shot=few_shot,
        ),
    )


def _run_supervised(graph: CellGraph, config: TrainConfig, mode: str,
                    labeled: np.ndarray, eval_graph: CellGraph | None,
                    eval_nodes: np.ndarray) -> RunReport:
    """Joint end-to-end supervised training of backbone + downstream head."""
    t0 = time.perf_counter()
    ad.reset_peak_memory()
    x = graph.node_features()
    eattr = graph.edge_features(with_o=config.use_o_edge_features)
    backbone, gnn_store = build_backbone(
        config.backbone, x.shape[1], eattr.shape[1],
        np.random.default_rng([config.seed, _SEED_BACKBONE]))
    head = DownstreamHead(config.backbone.hidden,
                          np.random.default_rng([config.seed, _SEED_FT_HEAD]))
    z = graph.labels_for(config.kpi)[labeled]
    opt = ad.Adam(ad.ParamStore.union(gnn_store, head.store),
                  lr=config.hp_ft.lr, beta1=config.hp_ft.beta1,
                  beta2=config.hp_ft.beta2, eps=config.hp_ft.eps)
    losses: list[float] = []
    for _ in range(config.n_ft):
        opt.zero_grad()
        h = backbone.forward(ad.Tensor(x), graph.src, graph.dst, ad.Tensor(eattr))
        pred = ad.gather_rows(head(h), labeled)
        loss = loss_mse(pred, z)
        ad.backward(loss)
        opt.step()
        losses.append(loss.item())

    node_stats, edge_stats = graph.node_stats(), graph.edge_stats(config.use_o_edge_features)
    target_graph = eval_graph if eval_graph is not None else graph
    final = _eval_mse_pct(backbone, head, target_graph, config.kpi, eval_nodes,
                          node_stats, edge_stats, config.use_o_edge_features)
    return RunReport(
        mode=mode,
        mse_pct=final,
        pt_losses=[],
        ft_losses=losses,
        ft_labeled_nodes=int(labeled.size),
        eval_node_count=int(eval_nodes.size),
        wallclock_s=time.perf_counter() - t0,
        peak_mem_bytes=ad.peak_memory_bytes(),
        config=config.to_dict(),
        artifacts=RunArtifacts(
            backbone=backbone, backbone_store=gnn_store,
            downstream_store=head.store, pretext_store=None,
            downstream_head=head, post_pt_backbone=None,
            node_stats=node_stats, edge_stats=edge_stats, few_shot=None,
        ),
    )


def run_pf1(graph: CellGraph, config: TrainConfig,
            eval_graph: CellGraph | None = None) -> RunReport:
    """Fully supervised benchmark with abundant labels and measurement features.

    Transductive: held-out nodes of the same graph. Inductive: a different
    scenario's graph, standardized with the training graph's statistics; the
    target graph's labels are provably untouched during training (its
    instrumented read counter must not move)."""
    config.validate()
    if not graph.include_m:
        raise ValueError("PF1 expects a graph built with measurement features (include_m=True)")
    if config.split == "inductive":
        if eval_graph is None:
            raise ValueError("inductive PF1 requires an eval_graph")
        if eval_graph.feature_names != graph.feature_names:
            raise ValueError("train and eval graphs disagree on feature layout")
        reads_before = eval_graph.label_read_count
        eval_nodes = np.arange(eval_graph.n_nodes, dtype=np.int64)
        report = _run_supervised(graph, config, "pf1", graph.masks["train"],
                                 eval_graph, eval_nodes)
        # The only read must be the final evaluation, never training.
        if eval_graph.label_read_count != reads_before + 1:
            raise AssertionError("inductive protocol read target-graph labels during training")
        return report
    return _run_supervised(graph, config, "pf1", graph.masks["train"], None,
                           graph.masks["test"])


def run_sota(graph: CellGraph, config: TrainConfig) -> RunReport:
    """Conventional full training on alpha% of the training mask, no
    pretraining, no measurement features; the baseline the few-shot scheme is
    compared against."""
    config.validate()
    _assert_no_m(graph)
    labeled = sample_few_shot(graph.masks["train"], config.alpha_pct,
                              [config.seed, _SEED_FEW_SHOT])
    train_rest = np.setdiff1d(graph.masks["train"], labeled)
    eval_nodes = np.sort(np.concatenate([train_rest, graph.masks["test"]])).astype(np.int64)
    return _run_supervised(graph, config, "sota", labeled, None, eval_nodes)


def gain(report_pt: RunReport, report_nopt: RunReport) -> float:
    """Improvement from pretraining in MSE percentage points (positive = helped)."""
    for key in ("backbone", "kpi", "alpha_pct", "seed", "n_ft", "hp_ft"):
        if report_pt.config[key] != report_nopt.config[key]:
            raise ValueError(f"reports disagree on {key}; gain would be meaningless")
    if report_pt.config["pretext"] == report_nopt.config["pretext"]:
        raise ValueError("gain compares a pretext run against a no-pretext run")
    return report_nopt.mse_pct - report_pt.mse_pct


def append_ledger(path: str | Path, report: RunReport) -> None:
    path = Path(path)
    new = not path.exists()
    cfg = report.config
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LEDGER_COLUMNS)
        config_hash = hashlib.sha1(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]
        writer.writerow([
            config_hash, report.mode, cfg["backbone"]["kind"], cfg["kpi"],
            cfg["alpha_pct"], cfg["pretext"], cfg["seed"],
            repr(report.mse_pct), "" if report.gain is None else repr(report.gain),
            f"{report.wallclock_s:.3f}", report.peak_mem_bytes,
        ])


def read_ledger(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
