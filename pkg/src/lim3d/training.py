"""Mean-teacher training: EMA weights, metrics, and the three-stage toy run.

Stage 1 trains a student on redundancy-sampled labeled frames while a
teacher tracks it by exponential moving average. Stage 2 freezes the
teacher and turns its predictions on unlabeled frames into entropy-split,
class-and-range-balanced pseudo-labels. Stage 3 retrains a fresh student
on ground truth plus reliable pseudo-labels with the full composite loss:
supervised Jaccard extension, KL consistency to the teacher, and the
contrastive term fed by a FIFO bank of unreliable-voxel negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, softmax
from .errors import DivergenceError, DomainError, ShapeError
from .losses import LossConfig, kl_consistency, lovasz_softmax, total_loss
from .network import MiniSegNet, topology_cost
from .pointcloud import SceneSpec, synth_sequence
from .pseudolabel import (ContrastiveConfig, MemoryBank, PseudoLabelSet,
                          VoxelPredictions, bank_push_negatives,
                          build_anchor_set, entropy_partition, crb_select,
                          infonce_loss, positive_center)
from .reflectivity import ReflecConfig, augment, coarse_histograms, normalize_reflectivity, reflectivity
from .sampling import StrfdConfig, calibrate_beta, plan
from .sparseconv import Rulebook, build_rulebook
from .voxel import CylGridSpec, SparseVoxelTensor, voxelize

__all__ = [
    "ModelState",
    "ema_update",
    "confusion_matrix",
    "iou_per_class",
    "mean_iou",
    "SGD",
    "ToyPipelineConfig",
    "run_toy_pipeline",
]


# ---------------------------------------------------------------------------
# EMA and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelState:
    """Flat student/teacher parameter vectors plus the layer layout."""

    student: np.ndarray
    teacher: np.ndarray
    topology: tuple

    def __post_init__(self):
        if self.student.shape != self.teacher.shape:
            raise ShapeError("student and teacher parameter vectors must align")


def ema_update(teacher: np.ndarray, student: np.ndarray, kappa: float) -> np.ndarray:
    """``kappa * teacher + (1 - kappa) * student`` elementwise."""
    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    if teacher.shape != student.shape:
        raise ShapeError(f"parameter layouts differ: {teacher.shape} vs {student.shape}")
    if not 0.0 <= kappa <= 1.0:
        raise DomainError("kappa must lie in [0, 1]")
    return kappa * teacher + (1.0 - kappa) * student


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ShapeError("prediction and ground truth lengths differ")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (gt, pred), 1)
    return out


def iou_per_class(confusion: np.ndarray) -> np.ndarray:
    """Intersection over union per class; nan where the class never occurs."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def mean_iou(confusion: np.ndarray) -> float:
    per_class = iou_per_class(confusion)
    return float(np.nanmean(per_class))


class SGD:
    """Plain momentum SGD over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray | None]) -> None:
        for i, g in enumerate(grads):
            if g is None:
                continue
            self._velocity[i] = self.momentum * self._velocity[i] - self.lr * g
            self.params[i] = self.params[i] + self._velocity[i]


# ---------------------------------------------------------------------------
# Toy pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyPipelineConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    n_sequences: int = 1
    frames_per_sequence: int = 24
    heldout_fraction: float = 0.25
    labeled_fraction: float = 1.0
    subset_size: int = 8
    grid: CylGridSpec = field(default_factory=lambda: CylGridSpec(
        n_rho=10, n_phi=16, n_z=6, rho_max=20.0, z_range=(-1.0, 5.0)))
    reflec: ReflecConfig | None = field(default_factory=lambda: ReflecConfig(
        n_bins=10, bin_grids=((4, 8), (8, 16), (16, 24))))
    widths: tuple[int, ...] = (16, 32, 64, 64)
    kernel_size: int = 3
    lr: float = 0.05
    momentum: float = 0.9
    steps_stage1: int = 280
    steps_stage3: int = 160
    kappa: float = 0.99
    lambda_u: float = 1.0
    lambda_c: float = 0.3
    literal_gate: bool = False
    percentile: float = 80.0
    per_class_keep: float = 0.9
    contrastive: ContrastiveConfig = field(default_factory=lambda: ContrastiveConfig(
        delta_p=0.7, tau=0.5, n_negatives=8, capacity=256, max_anchors=64))
    use_bank: bool = True
    stages: tuple[int, ...] = (1, 2, 3)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise DomainError("labeled_fraction must lie in (0, 1]")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise DomainError("heldout_fraction must lie in (0, 1)")
        if any(s not in (1, 2, 3) for s in self.stages):
            raise DomainError("stages must be a subset of (1, 2, 3)")


@dataclass
class _Frame:
    svt: SparseVoxelTensor
    rulebook: Rulebook
    radii: np.ndarray
    labeled: bool
    pseudo: PseudoLabelSet | None = None


def _prepare_frame(pc, grid: CylGridSpec, reflec: ReflecConfig | None,
                   kernel_size: int = 3) -> _Frame:
    if reflec is not None:
        feats = coarse_histograms(pc, normalize_reflectivity(reflectivity(pc)), reflec)
        pc = augment(pc, feats)
    svt = voxelize(pc, grid)
    rb = build_rulebook(svt.coords, svt.grid, kernel_size)
    radii = grid.voxel_centers(svt.coords)[:, 0]
    return _Frame(svt=svt, rulebook=rb, radii=radii, labeled=False)


def _finite_or_raise(value: float, stage: str, step: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{stage}: loss became non-finite at step {step}")
    return value


def _forward(net: MiniSegNet, frame: _Frame, params: list[Tensor]):
    logits, emb = net.forward(frame.svt, params=params, rulebook=frame.rulebook)
    return softmax(logits, axis=1), emb


def run_toy_pipeline(cfg: ToyPipelineConfig,
                     sequences: list[list] | None = None,
                     save_model: str | None = None) -> dict:
    """Run the staged loop on synthetic sequences and report metrics.

    `sequences` overrides the generated data; each entry is a list of
    ``(PointCloud, RangeImage)`` pairs as produced by `synth_sequence`.
    Returns a JSON-serializable report with per-stage losses, the sampling
    plan, per-class IoU on the held-out split, and cost totals.
    """
    rng = np.random.default_rng(cfg.seed)
    if sequences is None:
        sequences = [synth_sequence(cfg.scene, cfg.frames_per_sequence, cfg.seed + 1000 * s,
                                    sequence_id=s)
                     for s in range(cfg.n_sequences)]

    # Held-out split: the trailing fraction of every sequence.
    train_seqs, heldout = [], []
    for frames in sequences:
        n_held = max(1, math.ceil(cfg.heldout_fraction * len(frames)))
        if n_held >= len(frames):
            raise DomainError("heldout_fraction leaves no training frames")
        train_seqs.append(frames[:-n_held])
        heldout.extend(frames[-n_held:])

    # Redundancy-driven selection of the labeled subset.
    max_range = max(float(ri.values.max()) for frames in train_seqs for _, ri in frames) or 1.0
    gray = [[np.round(np.clip(ri.values / max_range, 0, 1) * 255.0) for _, ri in frames]
            for frames in train_seqs]
    strfd = StrfdConfig(subset_size=cfg.subset_size, beta=0.0, redundancy_source="range_image")
    if cfg.labeled_fraction >= 1.0:
        beta, labeled_plan = 0.0, plan(gray, strfd)
    else:
        beta, labeled_plan = calibrate_beta(gray, strfd, cfg.labeled_fraction)

    frames: list[_Frame] = []
    labeled_ids, unlabeled_ids = [], []
    for seq_id, seq_frames in enumerate(train_seqs):
        chosen = set(labeled_plan.entries.get(seq_id, []))
        for idx, (pc, _) in enumerate(seq_frames):
            f = _prepare_frame(pc, cfg.grid, cfg.reflec, cfg.kernel_size)
            f.labeled = idx in chosen
            (labeled_ids if f.labeled else unlabeled_ids).append(len(frames))
            frames.append(f)
    heldout_frames = [_prepare_frame(pc, cfg.grid, cfg.reflec, cfg.kernel_size) for pc, _ in heldout]

    in_channels = 4 + (cfg.reflec.feature_dim if cfg.reflec is not None else 0)
    n_classes = cfg.scene.n_classes
    student = MiniSegNet(in_channels, n_classes, cfg.widths, cfg.kernel_size, seed=cfg.seed)
    teacher = student.clone()

    def evaluate(net: MiniSegNet) -> np.ndarray:
        confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
        for f in heldout_frames:
            probs, _ = net.predict(f.svt, rulebook=f.rulebook)
            confusion += confusion_matrix(probs.argmax(axis=1), f.svt.labels, n_classes)
        return confusion

    report: dict = {
        "seed": cfg.seed,
        "labeled_fraction": cfg.labeled_fraction,
        "beta": float(beta),
        "plan": {str(k): v for k, v in labeled_plan.entries.items()},
        "n_labeled_frames": len(labeled_ids),
        "n_unlabeled_frames": len(unlabeled_ids),
        "stages": {},
    }

    def train_stage(name: str, net: MiniSegNet, tnet: MiniSegNet, steps: int,
                    loss_cfg: LossConfig, frame_ids: list[int],
                    bank: MemoryBank | None) -> dict:
        losses = []
        opt = SGD(net.params, lr=cfg.lr, momentum=cfg.momentum)
        order: list[int] = []
        for step in range(steps):
            if not order:
                order = list(frame_ids)
                rng.shuffle(order)
            f = frames[order.pop()]
            params = net.param_tensors()
            probs, emb = _forward(net, f, params)

            # Supervised term on voxels with a hard target.
            if f.labeled:
                ids = np.arange(f.svt.n_active)
                target = f.svt.labels
            elif f.pseudo is not None and f.pseudo.reliable:
                ids = np.array(sorted(f.pseudo.reliable), dtype=np.int64)
                target = np.array([f.pseudo.reliable[int(i)] for i in ids], dtype=np.int64)
            else:
                ids = None
                target = None
            ls = lovasz_softmax(probs.take(ids), target) if ids is not None and len(ids) \
                else Tensor(0.0)

            # Consistency with the teacher on every voxel of the frame.
            t_probs, _ = tnet.predict(f.svt, rulebook=f.rulebook)
            lu = kl_consistency(probs, t_probs)

            lc = None
            if bank is not None and loss_cfg.stage == "distill":
                vp = VoxelPredictions(probs=probs.data, embeddings=emb.data,
                                      labels=f.svt.labels if f.labeled else None,
                                      radii=f.radii)
                pls = f.pseudo if f.pseudo is not None else PseudoLabelSet(
                    reliable={}, unreliable=frozenset(), entropy=np.zeros(f.svt.n_active))
                for c in range(n_classes):
                    bank_push_negatives(bank, vp, pls, c)
                anchors, positives = {}, {}
                for c in range(n_classes):
                    a_ids, _ = build_anchor_set(vp, pls, cfg.contrastive, c)
                    if len(a_ids) == 0:
                        continue
                    anchor_t = emb.take(a_ids)
                    anchors[c] = anchor_t
                    positives[c] = positive_center(anchor_t)
                lc = infonce_loss(anchors, positives, bank, cfg.contrastive)

            loss = total_loss(ls, lu, lc, loss_cfg)
            losses.append(_finite_or_raise(loss.item(), name, step))
            loss.backward()
            opt.step([p.grad for p in params])
            tnet.load_flat(ema_update(tnet.flat(), net.flat(), cfg.kappa))
        return {"steps": steps, "losses": [round(v, 6) for v in losses],
                "final_loss": losses[-1] if losses else None}

    if 1 in cfg.stages:
        loss_cfg = LossConfig(kappa=cfg.kappa, lambda_u=cfg.lambda_u,
                              lambda_c=cfg.lambda_c, stage="train",
                              literal_gate=cfg.literal_gate)
        report["stages"]["train"] = train_stage(
            "train", student, teacher, cfg.steps_stage1, loss_cfg,
            labeled_ids or list(range(len(frames))), bank=None)

    if 2 in cfg.stages:
        n_reliable = n_unreliable = agree_hits = agree_total = 0
        per_class_reliable = np.zeros(n_classes, dtype=np.int64)
        for fid in unlabeled_ids:
            f = frames[fid]
            probs, emb = teacher.predict(f.svt, rulebook=f.rulebook)
            vp = VoxelPredictions(probs=probs, embeddings=emb, radii=f.radii)
            pls = entropy_partition(vp, percentile=cfg.percentile)
            pls = crb_select(pls, vp, cfg.per_class_keep)
            f.pseudo = pls
            n_reliable += len(pls.reliable)
            n_unreliable += len(pls.unreliable)
            for voxel, cls in pls.reliable.items():
                per_class_reliable[cls] += 1
                if f.svt.labels is not None:
                    agree_total += 1
                    agree_hits += int(f.svt.labels[voxel] == cls)
        report["stages"]["pseudo_label"] = {
            "frames": len(unlabeled_ids),
            "reliable_voxels": n_reliable,
            "unreliable_voxels": n_unreliable,
            "per_class_reliable": {str(c): int(n) for c, n in enumerate(per_class_reliable)},
            "agreement_with_labels": round(agree_hits / agree_total, 6) if agree_total else None,
        }

    if 3 in cfg.stages:
        # Distillation keeps optimizing the student against the full composite
        # objective; the teacher that produced the pseudo-labels carries over
        # and keeps tracking the student by EMA.
        bank = MemoryBank(n_classes, cfg.contrastive.capacity) if cfg.use_bank else None
        loss_cfg = LossConfig(kappa=cfg.kappa, lambda_u=cfg.lambda_u,
                              lambda_c=cfg.lambda_c, stage="distill",
                              literal_gate=cfg.literal_gate)
        usable = [i for i in range(len(frames))
                  if frames[i].labeled or frames[i].pseudo is not None]
        report["stages"]["distill"] = train_stage(
            "distill", student, teacher, cfg.steps_stage3, loss_cfg, usable, bank=bank)

    confusion = evaluate(student)
    per_class = iou_per_class(confusion)
    typical_sites = frames[0].svt.n_active if frames else 0
    layer_rows, totals = topology_cost(student.topology, typical_sites)
    report["metrics"] = {
        "per_class_iou": [None if np.isnan(v) else round(float(v), 6) for v in per_class],
        "miou": round(mean_iou(confusion), 6),
        "confusion": confusion.tolist(),
    }
    report["cost"] = {
        "active_sites": typical_sites,
        "trainable_params": totals.trainable_params,
        "mult_adds": totals.mult_adds,
        "per_layer": layer_rows,
    }
    if save_model is not None:
        # The weight file records its input contract so downstream tools can
        # rebuild the featurization and topology.
        reflec_grids = (np.array(cfg.reflec.bin_grids, dtype=np.int64)
                        if cfg.reflec is not None else np.empty((0, 2), dtype=np.int64))
        np.savez(save_model, flat=student.flat(), in_channels=in_channels,
                 n_classes=n_classes, widths=np.array(cfg.widths, dtype=np.int64),
                 kernel_size=cfg.kernel_size,
                 reflec_bins=cfg.reflec.n_bins if cfg.reflec is not None else 0,
                 reflec_grids=reflec_grids)
    return report
