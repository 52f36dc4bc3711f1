"""Metrics and the comparison harness.

The metric set mirrors what the diagnosis task is scored on: ROC/AUC over the
ranking, a competition score that prices false negatives and false positives
by the opposing class sizes, and MCC. The harness part runs a set of methods
over seeds on either synthetic scenarios or pre-split feature matrices and
emits one results row per (method, seed).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import data, synth, training
from .models import (PgancModel, PgantModel, load_state, pganc_icing_scores,
                     pgant_icing_scores)

ICING = data.ICING

# one generated world per run seed: source uses the seed itself, the target
# turbine a fixed offset, so scenarios never share weather
TARGET_SEED_OFFSET = 50
MODEL_SEED_OFFSET = 100

METHODS = ("KNN", "plain-CNN", "PGANC-stage1", "PGANC-stage2",
           "PGANT", "PGANT-1loss", "CNN-2loss", "CNN-1loss")
TRANSFER_ONLY = ("PGANT", "PGANT-1loss", "CNN-2loss", "CNN-1loss")


# ------------------------------------------------------------------- metrics

@dataclass
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n_fault(self) -> int:
        return self.tp + self.fn

    @property
    def n_normal(self) -> int:
        return self.fp + self.tn


def _check_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary (0 normal, 1 icing)")
    return scores, labels


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts at a fixed decision threshold; icing is the positive class
    and is predicted whenever score >= threshold."""
    scores, labels = _check_scores(scores, labels)
    pred = scores >= threshold
    pos = labels == ICING
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)), fn=int(np.sum(~pred & pos)),
        fp=int(np.sum(pred & ~pos)), tn=int(np.sum(~pred & ~pos)))


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; one entry per distinct score
    fpr: np.ndarray         # len(thresholds) + 1, starts at 0, ends at 1
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """Threshold-swept ROC with the Mann-Whitney AUC (ties get half credit).

    The rank statistic and the trapezoid area under the curve are the same
    number in exact arithmetic; both stay exact in float64 here because all
    intermediate sums are small integers or halves.
    """
    scores, labels = _check_scores(scores, labels)
    n_pos = int(np.sum(labels == ICING))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes required for a ROC curve")

    uniq, inverse, counts = np.unique(scores, return_inverse=True,
                                      return_counts=True)
    # average rank of each distinct value, 1-based
    ends = np.cumsum(counts)
    avg_rank = ends - (counts - 1) / 2.0
    rank_sum = float(np.sum(avg_rank[inverse[labels == ICING]]))
    auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (float(n_pos) * n_neg)

    pos_per_value = np.bincount(inverse, weights=(labels == ICING))
    neg_per_value = counts - pos_per_value
    # sweep thresholds high to low; each step admits one distinct value
    tp = np.concatenate([[0.0], np.cumsum(pos_per_value[::-1])])
    fp = np.concatenate([[0.0], np.cumsum(neg_per_value[::-1])])
    return RocCurve(thresholds=uniq[::-1].copy(), fpr=fp / n_neg,
                    tpr=tp / n_pos, auc=float(auc))


def trapezoid_auc(curve: RocCurve) -> float:
    """Area under the swept curve; cross-check for the rank statistic."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1])) / 2.0)


def competition_score(c: ConfusionCounts, convention: str = "paper") -> float:
    """S = 1 - a*FN/N_normal - (1-a)*FP/N_fault with a = N_fault/N_normal.

    The printed form divides each error count by the opposite class size;
    convention="swapped" divides by the own class sizes instead, which is the
    usual normalized-error form and keeps S in [0, 1].
    """
    if c.n_normal == 0 or c.n_fault == 0:
        raise ValueError("competition score needs both classes present")
    a = c.n_fault / c.n_normal
    if convention == "paper":
        return 1.0 - a * c.fn / c.n_normal - (1.0 - a) * c.fp / c.n_fault
    if convention == "swapped":
        return 1.0 - a * c.fn / c.n_fault - (1.0 - a) * c.fp / c.n_normal
    raise ValueError(f"unknown convention {convention!r}")


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; degenerate denominators give 0 with a warning."""
    factors = [c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn]
    if min(factors) == 0:
        warnings.warn("MCC denominator degenerate, returning 0")
        return 0.0
    num = float(c.tp) * c.tn - float(c.fp) * c.fn
    den = np.sqrt(np.prod(np.asarray(factors, dtype=np.float64)))
    return float(num / den)


def knn_baseline(train_x, train_y, test_x, k: int = 5,
                 chunk: int = 1024) -> np.ndarray:
    """Fraction of icing among the k nearest training rows, per test row.
    Distance ties resolve in favor of earlier training records."""
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_x = np.asarray(test_x, dtype=np.float64)
    n = train_x.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k={k} outside [1, {n}]")
    if train_x.shape[1] != test_x.shape[1]:
        raise ValueError("dimension mismatch between train and test")
    t2 = (train_x ** 2).sum(axis=1)
    out = np.empty(test_x.shape[0], dtype=np.float64)
    for lo in range(0, test_x.shape[0], chunk):
        te = test_x[lo:lo + chunk]
        d2 = (te ** 2).sum(axis=1)[:, None] + t2[None, :] - 2.0 * te @ train_x.T
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[lo:lo + te.shape[0]] = (train_y[idx] == ICING).mean(axis=1)
    return out


# ---------------------------------------------------------------- harness

@dataclass
class ScenarioData:
    """One prepared experiment: normalized matrices plus their provenance."""
    scenario: str
    seed: int
    scaler: data.Scaler
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    target_x: np.ndarray | None = None


def normalize_bundle(scenario, seed, split: data.DatasetSplit) -> ScenarioData:
    scaler = data.fit_normalize(split.train_x)
    out = ScenarioData(
        scenario=scenario, seed=seed, scaler=scaler,
        train_x=data.apply_normalize(scaler, split.train_x).astype(np.float32),
        train_y=split.train_y,
        test_x=data.apply_normalize(scaler, split.test_x).astype(np.float32),
        test_y=split.test_y)
    if split.target_x is not None:
        out.target_x = data.apply_normalize(scaler, split.target_x).astype(np.float32)
    return out


def prepare_single(x, labels, seed: int) -> ScenarioData:
    return normalize_bundle("single", seed, data.split_single(x, labels, seed=seed))


def prepare_transfer(source_x, source_y, target_x, target_y,
                     seed: int) -> ScenarioData:
    split = data.split_transfer(source_x, source_y, target_x, target_y, seed=seed)
    return normalize_bundle("transfer", seed, split)


def _features_of(config: synth.SynthConfig):
    records = data.eliminate_invalid(synth.generate(config))
    x, labels, _ = data.features_matrix(records)
    return x, labels


def prepare_synthetic(scenario: str, seed: int,
                      synth_config: synth.SynthConfig | None = None,
                      shift: dict | None = None) -> ScenarioData:
    """Generate the scenario's turbines and split them for one run seed."""
    base = synth_config or synth.SynthConfig()
    x, labels = _features_of(replace(base, seed=seed, domain_shift={}))
    if scenario == "single":
        return prepare_single(x, labels, seed)
    if scenario == "transfer":
        tx, ty = _features_of(replace(base, seed=seed + TARGET_SEED_OFFSET,
                                      domain_shift=dict(shift if shift is not None
                                                        else synth.TARGET_SHIFT)))
        return prepare_transfer(x, labels, tx, ty, seed)
    raise ValueError(f"unknown scenario {scenario!r}")


@dataclass
class TrainedPganc:
    model: PgancModel
    stage1_state: list
    report: training.LossReport


def train_pganc_method(bundle: ScenarioData, seed: int,
                       config: training.TwoStageConfig | None = None,
                       front_end: str = "gan") -> TrainedPganc:
    """Two-stage training for the GAN front end; single supervised phase for
    the conv ablation, which has no adversarial criterion to pretrain."""
    model = PgancModel(np.random.default_rng(seed + MODEL_SEED_OFFSET),
                       front_end=front_end)
    rng = np.random.default_rng(seed)
    config = config or training.TwoStageConfig()
    if front_end == "gan":
        res = training.train_two_stage_pganc(bundle.train_x, bundle.train_y,
                                             config, rng, model=model)
        return TrainedPganc(model=res.model, stage1_state=res.stage1_state,
                            report=res.report)
    epochs = config.stage1.epochs + config.stage2_epochs
    rep = training.train_classifier(
        model, bundle.train_x, bundle.train_y,
        replace(config.stage1, epochs=epochs), rng, whole_network=True)
    return TrainedPganc(model=model, stage1_state=[], report=rep)


def train_pgant_method(bundle: ScenarioData, seed: int,
                       config: training.TransferConfig | None = None,
                       front_end: str = "gan",
                       gan_config: training.GanTrainConfig | None = None) -> PgantModel:
    if bundle.target_x is None:
        raise ValueError("transfer training needs an unlabeled target sample")
    model = PgantModel(np.random.default_rng(seed + MODEL_SEED_OFFSET),
                       front_end=front_end)
    rng = np.random.default_rng(seed)
    if front_end == "gan":
        gcfg = gan_config or training.GanTrainConfig()
        training.train_gan(model.gan_normal,
                           bundle.train_x[bundle.train_y == data.NORMAL], gcfg, rng)
        training.train_gan(model.gan_icing,
                           bundle.train_x[bundle.train_y == data.ICING], gcfg, rng)
    training.train_pgant(model, bundle.train_x, bundle.train_y,
                         bundle.target_x, config, rng)
    return model


def score_row(scores, labels, method: str, scenario: str, seed,
              convention: str = "paper") -> dict:
    c = confusion(scores, labels)
    return {"method": method, "scenario": scenario, "seed": seed,
            "score": competition_score(c, convention),
            "auc": roc_auc(scores, labels).auc, "mcc": mcc(c)}


def _method_scores(method: str, bundle: ScenarioData, seed: int,
                   pganc_cache: dict, knn_k: int,
                   two_stage: training.TwoStageConfig | None,
                   transfer: training.TransferConfig | None) -> np.ndarray:
    if method == "KNN":
        return knn_baseline(bundle.train_x, bundle.train_y, bundle.test_x, k=knn_k)
    if method == "plain-CNN":
        trained = train_pganc_method(bundle, seed, two_stage, front_end="conv")
        return pganc_icing_scores(trained.model, bundle.test_x)
    if method in ("PGANC-stage1", "PGANC-stage2"):
        if seed not in pganc_cache:
            pganc_cache[seed] = train_pganc_method(bundle, seed, two_stage)
        trained = pganc_cache[seed]
        if method == "PGANC-stage2":
            return pganc_icing_scores(trained.model, bundle.test_x)
        m1 = PgancModel(np.random.default_rng(seed + MODEL_SEED_OFFSET))
        load_state(m1, trained.stage1_state)
        return pganc_icing_scores(m1, bundle.test_x)
    if method in TRANSFER_ONLY:
        cfg = transfer or training.TransferConfig()
        if method in ("PGANT-1loss", "CNN-1loss"):
            cfg = replace(cfg, alpha=0.0)
        front = "gan" if method.startswith("PGANT") else "conv"
        model = train_pgant_method(bundle, seed, cfg, front_end=front)
        return pgant_icing_scores(model, bundle.test_x)
    raise ValueError(f"unknown method {method!r}")


def run_comparison(scenario: str, methods, seeds,
                   synth_config: synth.SynthConfig | None = None,
                   shift: dict | None = None,
                   bundles: dict | None = None,
                   knn_k: int = 5,
                   two_stage: training.TwoStageConfig | None = None,
                   transfer: training.TransferConfig | None = None,
                   convention: str = "paper") -> list:
    """Rows of method/scenario/seed/score/auc/mcc, plus one mean row per
    method when several seeds are given. Pass `bundles` (seed -> ScenarioData)
    to run on already-prepared data instead of generating synthetic turbines.
    """
    methods = list(methods)
    seeds = list(seeds)
    if not methods or not seeds:
        raise ValueError("need at least one method and one seed")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
        if scenario == "single" and m in TRANSFER_ONLY:
            raise ValueError(f"{m} needs the transfer scenario")
    if scenario not in ("single", "transfer"):
        raise ValueError(f"unknown scenario {scenario!r}")

    results: dict = {}
    for seed in seeds:
        if bundles is not None:
            bundle = bundles[seed]
        else:
            bundle = prepare_synthetic(scenario, seed, synth_config, shift)
        pganc_cache: dict = {}
        for method in methods:
            scores = _method_scores(method, bundle, seed, pganc_cache,
                                    knn_k, two_stage, transfer)
            results[(method, seed)] = score_row(scores, bundle.test_y, method,
                                                scenario, seed, convention)

    rows = []
    for method in methods:
        per_seed = [results[(method, s)] for s in seeds]
        rows.extend(per_seed)
        if len(seeds) > 1:
            rows.append({
                "method": method, "scenario": scenario, "seed": "mean",
                "score": sum(r["score"] for r in per_seed) / len(per_seed),
                "auc": sum(r["auc"] for r in per_seed) / len(per_seed),
                "mcc": sum(r["mcc"] for r in per_seed) / len(per_seed)})
    return rows


RESULT_COLUMNS = ["method", "scenario", "seed", "score", "auc", "mcc"]


def write_results(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r["method"], r["scenario"], str(r["seed"]),
                        repr(float(r["score"])), repr(float(r["auc"])),
                        repr(float(r["mcc"]))])


def write_roc(curve: RocCurve, path) -> None:
    """threshold,fpr,tpr rows; the leading (0,0) point carries an empty
    threshold cell since no finite threshold produces it."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        w.writerow(["", repr(0.0), repr(0.0)])
        for t, f, p in zip(curve.thresholds, curve.fpr[1:], curve.tpr[1:]):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
