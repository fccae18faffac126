"""Training loop: features -> ADMM inference -> flow + energy losses -> momentum step."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .capnet import REGIONS, OptimConfig, backward, capacity_head, forward, sgd_momentum_step
from .evalmetrics import dice
from .levelset import threshold
from .losses import FlowLossForm, HuberParams, train_loss
from .solver import CapacityMaps, SolverConfig, solve
from .synthdata import Sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optim: OptimConfig = OptimConfig()
    solver: SolverConfig = SolverConfig()
    huber: HuberParams = HuberParams()
    loss_form: FlowLossForm = FlowLossForm.DEVIATION
    epochs: int = 30
    shuffle_seed: int = 0
    # energy integrals are divided by the pixel count when true
    normalize_energy: bool = True
    # 0 disables the flow term (energy-only ablation)
    flow_weight: float = 1.0
    # bound on the foreground source-capacity reward; None leaves it unbounded
    source_ceiling: float = 10.0
    level: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "loss_form", FlowLossForm(self.loss_form))
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class TrainStats:
    total_loss: list = field(default_factory=list)
    flow_loss: list = field(default_factory=list)
    energy_loss: list = field(default_factory=list)
    val_dice: list = field(default_factory=list)  # one {region: mean dice} per epoch

    def log_line(self, epoch):
        d = self.val_dice[epoch] if epoch < len(self.val_dice) else {}
        dice_txt = " ".join(f"dice_{r}={d[r]:.4f}" for r in REGIONS if r in d)
        return (
            f"epoch={epoch + 1} total={self.total_loss[epoch]:.6f} "
            f"flow={self.flow_loss[epoch]:.6f} energy={self.energy_loss[epoch]:.6f} {dice_txt}"
        ).rstrip()


@dataclass
class HierarchyResult:
    lams: tuple
    masks: tuple


def loss_and_grads(params, cfg, sample, tcfg, seed=0, training=True, flows=None, accumulate=True):
    """Forward pass, per-region inference and losses.

    When ``accumulate`` is true the parameter gradients are added to
    ``params.grads``. ``flows`` may supply the three solver states to hold fixed
    (finite-difference checks); otherwise they are computed by solving.

    Returns ``(reports, flows)``.
    """
    raw, tape = forward(params, cfg, sample.image, training=training, seed=seed)
    groups, dsoft = capacity_head(raw)
    n = sample.image.shape[1] * sample.image.shape[2]
    energy_weight = 1.0 / n if tcfg.normalize_energy else 1.0
    if flows is None:
        flows = [solve(caps, tcfg.solver).final_state for caps in groups]
    reports, grad_caps = [], []
    for caps, label, state in zip(groups, sample.labels, flows):
        rep = train_loss(
            label,
            caps,
            state,
            tcfg.huber,
            tcfg.loss_form,
            tcfg.solver.tv_mode,
            energy_weight=energy_weight,
            flow_weight=tcfg.flow_weight,
            source_ceiling=tcfg.source_ceiling,
        )
        reports.append(rep)
        grad_caps.append(rep.grads.stack())
    if accumulate:
        grad_raw = np.concatenate(grad_caps, axis=0) * dsoft
        backward(params, cfg, tape, grad_raw)
    return reports, flows


def train_step(params, cfg, sample, tcfg, seed=0):
    reports, _ = loss_and_grads(params, cfg, sample, tcfg, seed=seed)
    sgd_momentum_step(params, tcfg.optim)
    return reports


def _restrict(caps, parent):
    """Make background free outside ``parent`` so the inner region cannot leave it."""
    out = parent.astype(bool)
    return CapacityMaps(
        np.where(out, caps.c_source, 0.0),
        np.where(out, caps.c_sink, np.maximum(caps.c_sink, 1.0)),
        caps.c_edge,
    )


def infer_full(params, cfg, image, scfg=SolverConfig(), level=0.5, restrict_domain=False):
    """Three solves on the network's capacity groups, nested by intersection.

    With ``restrict_domain`` the TC solve is confined to the WT mask and the EC
    solve to the TC mask before the intersection.
    """
    raw, _ = forward(params, cfg, image, training=False)
    groups, _ = capacity_head(raw)
    lams, masks = [], []
    parent = None
    for caps in groups:
        if restrict_domain and parent is not None:
            caps = _restrict(caps, parent)
        lam = solve(caps, scfg).lam
        mask = threshold(lam, level)
        if parent is not None:
            mask = mask & parent
        lams.append(lam)
        masks.append(mask)
        parent = mask
    return HierarchyResult(tuple(lams), tuple(masks))


def validation_dice(params, cfg, samples, scfg=SolverConfig(), level=0.5):
    scores = {r: [] for r in REGIONS}
    for s in samples:
        res = infer_full(params, cfg, s.image, scfg, level)
        for r, p, t in zip(REGIONS, res.masks, s.labels):
            scores[r].append(dice(p, t))
    return {r: float(np.mean(v)) for r, v in scores.items()}


def train(params, cfg, dataset, tcfg, validation=None, callback=None):
    """Run ``tcfg.epochs`` passes of per-sample updates over ``dataset``.

    Samples are visited in an order shuffled by ``shuffle_seed`` and the epoch
    index. After each epoch the mean Dice on ``validation`` (defaults to the
    training set) is recorded. ``callback(epoch, stats)`` runs after each epoch.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    for s in dataset:
        if not isinstance(s, Sample):
            raise TypeError("dataset items must be Sample instances")
    validation = dataset if validation is None else validation
    stats = TrainStats()
    for epoch in range(tcfg.epochs):
        order = np.random.default_rng([tcfg.shuffle_seed, epoch]).permutation(len(dataset))
        tot = fl = en = 0.0
        for pos, idx in enumerate(order):
            seed = (tcfg.shuffle_seed * 1_000_003 + epoch) * 100_003 + pos
            reports = train_step(params, cfg, dataset[idx], tcfg, seed=seed)
            tot += sum(r.total for r in reports)
            fl += sum(r.flow_loss for r in reports)
            en += sum(r.energy_loss for r in reports)
        n = len(dataset)
        stats.total_loss.append(tot / n)
        stats.flow_loss.append(fl / n)
        stats.energy_loss.append(en / n)
        stats.val_dice.append(validation_dice(params, cfg, validation, tcfg.solver, tcfg.level))
        log.info(stats.log_line(epoch))
        if callback:
            callback(epoch, stats)
    return stats


__all__ = [
    "HierarchyResult",
    "Sample",
    "TrainConfig",
    "TrainStats",
    "infer_full",
    "loss_and_grads",
    "train",
    "train_step",
    "validation_dice",
]
