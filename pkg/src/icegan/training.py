"""Loss functions and training loops.

Three regimes:
  * adversarial training of one GAN per class (alternating D/G updates),
  * class-balanced cross-entropy training of the CNN classifier,
  * the transfer objective L_c - alpha*L_ms + beta*L_md with partitioned
    updates: feature extractors receive the full gradient, the FNN head
    receives only the classification gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffnet as dn
from .diffnet import Adam, TrainingDiverged
from .models import (
    NORMAL, ICING, GanModel, PgancModel, PgantModel,
    gan_forward, pganc_forward, pgant_forward,
)


# --------------------------------------------------------------- reporting

class LossReport:
    """Per-epoch loss series, exportable as (epoch, loss, value) CSV."""

    def __init__(self):
        self.rows: list[tuple[int, str, float]] = []
        self._last_epoch: dict[str, int] = {}

    def add(self, epoch: int, name: str, value: float) -> None:
        value = float(value)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {name}={value} at epoch {epoch}")
        prev = self._last_epoch.get(name)
        if prev is not None and epoch <= prev:
            raise ValueError(f"epochs for {name} must increase: {epoch} after {prev}")
        self._last_epoch[name] = epoch
        self.rows.append((epoch, name, value))

    def series(self, name: str) -> list[float]:
        return [v for _, n, v in self.rows if n == name]

    def merge(self, other: "LossReport", prefix: str = "") -> None:
        for epoch, name, value in other.rows:
            self.add(epoch, prefix + name, value)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "value"])
            for epoch, name, value in self.rows:
                w.writerow([epoch, name, repr(value)])


class _Plateau:
    """Early stop once the tracked loss stops improving for `patience` epochs."""

    def __init__(self, patience: int, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        if value < self.best - self.min_delta:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.patience > 0 and self.stale >= self.patience


# ------------------------------------------------------------------ configs

@dataclass
class GanLossWeights:
    w_con: float = 50.0
    w_adv: float = 1.0
    w_f: float = 1.0

    def __post_init__(self):
        if min(self.w_con, self.w_adv, self.w_f) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_con + self.w_adv + self.w_f <= 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class GanTrainConfig:
    epochs: int = 60
    batch: int = 64
    lr: float = 1e-3
    weights: GanLossWeights = field(default_factory=GanLossWeights)
    patience: int = 10
    min_delta: float = 1e-4


@dataclass
class ClassifierTrainConfig:
    epochs: int = 40
    batch: int = 64
    lr: float = 1e-3
    patience: int = 10
    min_delta: float = 1e-4


@dataclass
class TwoStageConfig:
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    stage1: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    stage2_epochs: int = 20
    stage2_lr_factor: float = 0.1  # fine-tune at a fraction of the stage-1 rate


@dataclass
class TransferConfig:
    alpha: float = 0.1
    beta: float = 1.0
    sigma: object = "median"  # "median" or a fixed positive float
    lr: float = 1e-3
    epochs: int = 100
    # source-supervised epochs before the alignment terms switch on; the
    # marginal alignment has a swapped-cluster optimum, and starting from a
    # trained source classifier keeps it out of reach
    warmup_epochs: int = 10
    batch_source: int = 64
    batch_target: int = 64
    freeze_gans: bool = False
    patience: int = 10
    min_delta: float = 1e-4

    def __post_init__(self):
        for name in ("alpha", "beta", "lr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.sigma != "median":
            s = float(self.sigma)
            if not (s > 0):
                raise ValueError(f"sigma must be positive, got {self.sigma}")


# ------------------------------------------------------------- GAN losses

@dataclass
class GanLosses:
    l_con: dn.Tensor
    l_adv: dn.Tensor
    l_f: dn.Tensor
    l_g: dn.Tensor
    l_d: dn.Tensor
    trace: object


def _mean_log(t: dn.Tensor) -> dn.Tensor:
    return dn.mean(dn.log(dn.clip(t, dn.PROB_EPS, 1.0)))


def gan_losses(gan: GanModel, batch, weights: GanLossWeights | None = None,
               train: bool = False) -> GanLosses:
    """Generator components, their weighted sum, and the discriminator BCE.

    L_con and L_f are mean per-sample Euclidean norms; L_adv is the mean
    log(1 - D(G(x))) the generator minimizes. L_D scores real samples
    against the reconstruction treated as a constant, so its gradient
    never reaches the generator.
    """
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("gan_losses needs a non-empty batch")
    weights = weights or GanLossWeights()
    trace = gan_forward(gan, batch, train=train)

    l_con = dn.mean_row_l2(dn.sub(trace.x, trace.x_gd))
    l_f = dn.mean_row_l2(dn.sub(trace.h_ge, trace.h_de))
    l_adv = _mean_log(dn.rsub_scalar(1.0, trace.d_fake))
    l_g = dn.add(dn.add(dn.scale(l_con, weights.w_con), dn.scale(l_adv, weights.w_adv)),
                 dn.scale(l_f, weights.w_f))

    fake = dn.constant(trace.x_gd.data)  # detached: D is judged, G is not moved
    d_fake_det = gan.d_head(gan.de(fake, train=train), train=train)
    l_d = dn.neg(dn.add(_mean_log(trace.d_real),
                        _mean_log(dn.rsub_scalar(1.0, d_fake_det))))
    return GanLosses(l_con=l_con, l_adv=l_adv, l_f=l_f, l_g=l_g, l_d=l_d, trace=trace)


def _plain_batches(rng: np.random.Generator, n: int, batch: int):
    """Shuffled index chunks; chunks of size 1 are dropped (batchnorm)."""
    perm = rng.permutation(n)
    for lo in range(0, n, batch):
        idx = perm[lo:lo + batch]
        if idx.size >= 2:
            yield idx


def train_gan(gan: GanModel, data, config: GanTrainConfig | None = None,
              rng: np.random.Generator | None = None) -> LossReport:
    """Alternating adversarial training on a single-class dataset, in place."""
    config = config or GanTrainConfig()
    rng = rng or np.random.default_rng(0)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, None, :]
    report = LossReport()
    if config.epochs == 0:
        return report
    if data.shape[0] < 2:
        raise ValueError("need at least 2 samples to train")

    opt_d = Adam(gan.discriminator_params(), lr=config.lr)
    opt_g = Adam(gan.generator_params(), lr=config.lr)
    stopper = _Plateau(config.patience, config.min_delta)

    for epoch in range(1, config.epochs + 1):
        sums = {"l_con": 0.0, "l_adv": 0.0, "l_f": 0.0, "l_g": 0.0, "l_d": 0.0}
        steps = 0
        for idx in _plain_batches(rng, data.shape[0], config.batch):
            xb = data[idx]
            # discriminator step, generator frozen
            losses = gan_losses(gan, xb, config.weights, train=True)
            opt_d.step(dn.gradients(losses.l_d, gan.discriminator_params()))
            # generator step against the updated discriminator
            losses = gan_losses(gan, xb, config.weights, train=True)
            opt_g.step(dn.gradients(losses.l_g, gan.generator_params()))
            for k in sums:
                sums[k] += float(getattr(losses, k).data)
            steps += 1
        for k, v in sums.items():
            report.add(epoch, k, v / max(steps, 1))
        if stopper.update(sums["l_g"] / max(steps, 1)):
            break
    return report


# --------------------------------------------------------- classification

def _log_true_class(probs: dn.Tensor, labels: np.ndarray) -> dn.Tensor:
    labels = np.asarray(labels)
    if labels.ndim != 1 or probs.data.shape[0] != labels.shape[0]:
        raise ValueError("labels must be 1-D and match the batch")
    if not np.isin(labels, (NORMAL, ICING)).all():
        raise ValueError("labels must be 0 (normal) or 1 (icing)")
    picked = dn.select_columns(probs, labels)
    return dn.log(dn.clip(picked, dn.PROB_EPS, 1.0))


def cross_entropy_classbalanced(probs: dn.Tensor, labels) -> dn.Tensor:
    """Sum over classes of the per-class mean negative log-likelihood.

    Weighing each class by 1/N_i counters the heavy normal/icing imbalance;
    both classes must be present since each contributes its own mean.
    """
    labels = np.asarray(labels)
    terms = _log_true_class(probs, labels)
    idx_n = np.flatnonzero(labels == NORMAL)
    idx_ic = np.flatnonzero(labels == ICING)
    if idx_n.size == 0 or idx_ic.size == 0:
        raise ValueError("class-balanced cross entropy needs both classes in the batch")
    return dn.neg(dn.add(dn.mean(dn.take_rows(terms, idx_n)),
                         dn.mean(dn.take_rows(terms, idx_ic))))


def mean_cross_entropy(probs: dn.Tensor, labels) -> dn.Tensor:
    """Plain mean negative log-likelihood (the source classification loss)."""
    return dn.neg(dn.mean(_log_true_class(probs, np.asarray(labels))))


def stratified_batches(rng: np.random.Generator, labels: np.ndarray, batch: int):
    """Index batches with both classes guaranteed: half from each pool.

    The larger pool is covered once per epoch; the smaller one is recycled
    with modular indexing, keeping every batch valid for per-class losses.
    """
    labels = np.asarray(labels)
    idx_n = np.flatnonzero(labels == NORMAL)
    idx_ic = np.flatnonzero(labels == ICING)
    if idx_n.size == 0 or idx_ic.size == 0:
        raise ValueError("both classes required")
    half = max(1, batch // 2)
    pn = rng.permutation(idx_n)
    pic = rng.permutation(idx_ic)
    steps = max(1, max(pn.size, pic.size) // half)
    for s in range(steps):
        sel = np.arange(s * half, (s + 1) * half)
        yield np.concatenate([pn[sel % pn.size], pic[sel % pic.size]])


def train_classifier(model: PgancModel, data, labels,
                     config: ClassifierTrainConfig | None = None,
                     rng: np.random.Generator | None = None,
                     whole_network: bool = False,
                     loss_name: str = "l_cnn") -> LossReport:
    """Class-balanced CE training; whole_network unfreezes the GAN branches."""
    config = config or ClassifierTrainConfig()
    rng = rng or np.random.default_rng(0)
    data = np.asarray(data)
    labels = np.asarray(labels)
    report = LossReport()
    if config.epochs == 0:
        return report
    params = model.params() if whole_network else model.classifier_params()
    opt = Adam(params, lr=config.lr)
    stopper = _Plateau(config.patience, config.min_delta)

    for epoch in range(1, config.epochs + 1):
        total, steps = 0.0, 0
        for idx in stratified_batches(rng, labels, config.batch):
            probs = pganc_forward(model, data[idx], train=True, gan_train=whole_network)
            loss = cross_entropy_classbalanced(probs, labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"{loss_name} became non-finite")
            opt.step(dn.gradients(loss, params))
            total += float(loss.data)
            steps += 1
        report.add(epoch, loss_name, total / max(steps, 1))
        if stopper.update(total / max(steps, 1)):
            break
    return report


@dataclass
class TwoStageResult:
    model: PgancModel
    report: LossReport
    stage1_state: list  # (name, array) snapshot after stage 1
    data_flow: dict     # which labels each stage-1 GAN trainer was fed


def train_two_stage_pganc(data, labels, config: TwoStageConfig | None = None,
                          rng: np.random.Generator | None = None,
                          model: PgancModel | None = None) -> TwoStageResult:
    """Stage 1: per-class GANs, then the classifier over frozen branches.
    Stage 2: whole-network fine-tune from the stage-1 parameters."""
    config = config or TwoStageConfig()
    rng = rng or np.random.default_rng(0)
    data = np.asarray(data)
    labels = np.asarray(labels)
    idx_n = np.flatnonzero(labels == NORMAL)
    idx_ic = np.flatnonzero(labels == ICING)
    if idx_n.size == 0 or idx_ic.size == 0:
        raise ValueError("training set must contain both classes")

    model = model or PgancModel(rng)
    report = LossReport()
    data_flow = {"gan_normal": labels[idx_n].copy(), "gan_icing": labels[idx_ic].copy()}

    rep = train_gan(model.gan_normal, data[idx_n], config.gan, rng)
    report.merge(rep, "gan_normal.")
    rep = train_gan(model.gan_icing, data[idx_ic], config.gan, rng)
    report.merge(rep, "gan_icing.")

    rep = train_classifier(model, data, labels, config.stage1, rng,
                           whole_network=False, loss_name="l_cnn")
    report.merge(rep, "stage1.")
    stage1_state = [(name, arr.copy()) for name, arr in model.state()]

    stage2_cfg = replace(config.stage1, epochs=config.stage2_epochs,
                         lr=config.stage1.lr * config.stage2_lr_factor)
    rep = train_classifier(model, data, labels, stage2_cfg, rng,
                           whole_network=True, loss_name="l_cnn")
    report.merge(rep, "stage2.")
    return TwoStageResult(model=model, report=report,
                          stage1_state=stage1_state, data_flow=data_flow)


# ----------------------------------------------------------------- transfer

def mmd2_rbf(a, b, sigma: float) -> float:
    """Squared maximum mean discrepancy, biased V-statistic, RBF kernel.

    Argument order cannot matter, so the two sets are put in a canonical
    order before any floating-point work.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("expected 2-D sample sets")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if not (sigma > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    if (a.shape, a.tobytes()) > (b.shape, b.tobytes()):
        a, b = b, a
    inv = 1.0 / (2.0 * sigma * sigma)
    k = lambda x, y: np.exp(-((x[:, None, :] - y[None, :, :]) ** 2).sum(-1) * inv)
    return float(k(a, a).mean() + k(b, b).mean() - 2.0 * k(a, b).mean())


def median_sigma(z: np.ndarray) -> float:
    """Median pairwise Euclidean distance; falls back to 1 on degenerate sets."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        return 1.0
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    med = float(np.median(np.sqrt(d2[np.triu_indices(n, k=1)])))
    return med if med > 1e-12 else 1.0


@dataclass
class TransferLosses:
    l_c: dn.Tensor
    l_md: dn.Tensor
    l_ms: dn.Tensor
    l_total: dn.Tensor
    source_probs: dn.Tensor


def combine_losses(l_c: dn.Tensor, l_ms: dn.Tensor, l_md: dn.Tensor,
                   alpha: float, beta: float) -> dn.Tensor:
    """L_c - alpha*L_ms + beta*L_md.

    Combined in float64 so the total decomposes exactly when recomputed
    from the reported component values.
    """
    f64 = lambda t: dn.cast(t, np.float64)
    return dn.add(dn.sub(f64(l_c), dn.scale(f64(l_ms), alpha)),
                  dn.scale(f64(l_md), beta))


def _mmd_term(a: dn.Tensor, b: dn.Tensor, sigma_policy) -> dn.Tensor:
    if sigma_policy == "median":
        sigma = median_sigma(np.concatenate([a.data, b.data], axis=0))
    else:
        sigma = float(sigma_policy)
    return dn.mmd2_rbf_op(a, b, sigma)


def transfer_losses(model: PgantModel, source_x, source_labels, target_x,
                    config: TransferConfig | None = None,
                    train: bool = False) -> TransferLosses:
    """All four transfer-objective terms with their graphs.

    L_md aligns source and target features (both the flattened CNN output
    and the first fully-connected activation); L_ms measures normal/icing
    separation within the source batch and enters the total negatively.
    """
    config = config or TransferConfig()
    source_labels = np.asarray(source_labels)
    idx_n = np.flatnonzero(source_labels == NORMAL)
    idx_ic = np.flatnonzero(source_labels == ICING)
    if idx_n.size == 0 or idx_ic.size == 0:
        raise ValueError("source batch must contain both classes")

    gan_train = train and not config.freeze_gans
    y_s, d_s, fc1_s = pgant_forward(model, source_x, train=train, gan_train=gan_train)
    _, d_t, fc1_t = pgant_forward(model, target_x, train=train, gan_train=gan_train)

    l_c = mean_cross_entropy(y_s, source_labels)
    l_md = dn.add(_mmd_term(d_s, d_t, config.sigma),
                  _mmd_term(fc1_s, fc1_t, config.sigma))
    l_ms = dn.add(
        _mmd_term(dn.take_rows(d_s, idx_n), dn.take_rows(d_s, idx_ic), config.sigma),
        _mmd_term(dn.take_rows(fc1_s, idx_n), dn.take_rows(fc1_s, idx_ic), config.sigma))
    l_total = combine_losses(l_c, l_ms, l_md, config.alpha, config.beta)
    return TransferLosses(l_c=l_c, l_md=l_md, l_ms=l_ms, l_total=l_total,
                          source_probs=y_s)


def transfer_step(model: PgantModel, losses: TransferLosses,
                  opt_features: Adam, opt_classifier: Adam,
                  feature_params: list, classifier_params: list) -> None:
    """One partitioned update: features get the full objective's gradient,
    the FNN head gets the classification gradient only."""
    opt_features.step(dn.gradients(losses.l_total, feature_params))
    opt_classifier.step(dn.gradients(losses.l_c, classifier_params))


def train_pgant(model: PgantModel, source_x, source_labels, target_x,
                config: TransferConfig | None = None,
                rng: np.random.Generator | None = None) -> LossReport:
    """Transfer training; the GAN branches are assumed pre-trained on source.

    Runs warmup_epochs of source-only supervised updates first (classification
    loss, both parameter groups), then the full partitioned objective. Only
    l_c is reported for warmup epochs."""
    config = config or TransferConfig()
    rng = rng or np.random.default_rng(0)
    source_x = np.asarray(source_x)
    source_labels = np.asarray(source_labels)
    target_x = np.asarray(target_x)
    if target_x.shape[0] < 2:
        raise ValueError("target set too small")

    feature_params = model.cnn_feature_params()
    if not config.freeze_gans:
        feature_params = model.gan_feature_params() + feature_params
    classifier_params = model.classifier_params()
    opt_features = Adam(feature_params, lr=config.lr)
    opt_classifier = Adam(classifier_params, lr=config.lr)
    stopper = _Plateau(config.patience, config.min_delta)

    report = LossReport()
    for epoch in range(1, config.warmup_epochs + 1):
        total, steps = 0.0, 0
        for sidx in stratified_batches(rng, source_labels, config.batch_source):
            y, _, _ = pgant_forward(model, source_x[sidx], train=True,
                                    gan_train=not config.freeze_gans)
            loss = mean_cross_entropy(y, source_labels[sidx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged("warmup loss became non-finite")
            opt_features.step(dn.gradients(loss, feature_params))
            opt_classifier.step(dn.gradients(loss, classifier_params))
            total += float(loss.data)
            steps += 1
        report.add(epoch, "l_c", total / max(steps, 1))

    for epoch in range(config.warmup_epochs + 1,
                       config.warmup_epochs + config.epochs + 1):
        sums = {"l_c": 0.0, "l_md": 0.0, "l_ms": 0.0, "l_total": 0.0}
        steps = 0
        tperm = rng.permutation(target_x.shape[0])
        for sidx in stratified_batches(rng, source_labels, config.batch_source):
            sel = np.arange(steps * config.batch_target,
                            (steps + 1) * config.batch_target) % tperm.size
            tidx = tperm[sel]
            if tidx.size < 2:
                tidx = tperm[:2]
            losses = transfer_losses(model, source_x[sidx], source_labels[sidx],
                                     target_x[tidx], config, train=True)
            if not np.isfinite(losses.l_total.data):
                raise TrainingDiverged("transfer objective became non-finite")
            transfer_step(model, losses, opt_features, opt_classifier,
                          feature_params, classifier_params)
            for k in sums:
                sums[k] += float(getattr(losses, k).data)
            steps += 1
        for k, v in sums.items():
            report.add(epoch, k, v / max(steps, 1))
        if stopper.update(sums["l_total"] / max(steps, 1)):
            break
    return report
