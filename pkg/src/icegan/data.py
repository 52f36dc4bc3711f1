"""SCADA ingestion and the preprocessing chain.

Pipeline order: ingest -> eliminate invalid -> engineer features ->
experiment split -> strong-rule balancing of training normals ->
normalization fitted on the training portion only.

The raw-column manifest (26 continuous variables with loose physical
bounds) ships with the package; bounds are placeholders sized for the
encrypted-unit value ranges and the synthetic generator.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

NORMAL = 0
ICING = 1
UNLABELED = -1  # also used for rows that fail validation

EPS_DENOM = 1e-6  # guard for encrypted-unit singular points (p = -5, v_ws = 0, ...)

FEATURE_NAMES = [
    "wind_speed", "generator_speed", "power", "wind_direction",
    "wind_direction_mean", "yaw_position", "yaw_speed", "acc_x", "acc_y",
    "environment_tmp", "int_tmp", "pitch1_ng5_tmp", "pitch2_ng5_tmp",
    "pitch3_ng5_tmp", "pitch1_ng5_DC", "pitch2_ng5_DC", "pitch3_ng5_DC",
    "pitch_angle_mean", "pitch_speed_mean", "pitch_moto_tmp_mean",
    "kappa_w2p", "kappa_w2g", "kappa_w2pg", "kappa_1", "kappa_2",
    "kappa_3", "kappa_4", "kappa_5",
]
POWER_IDX = FEATURE_NAMES.index("power")


class IngestError(ValueError):
    """Input file does not satisfy the raw-data contract."""


@dataclass
class RawColumn:
    name: str
    lower: float
    upper: float


def load_manifest() -> list[RawColumn]:
    text = resources.files("icegan.manifests").joinpath("raw_columns.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    return [RawColumn(r["name"], float(r["lower"]), float(r["upper"])) for r in rows]


_MANIFEST: list[RawColumn] | None = None


def manifest() -> list[RawColumn]:
    global _MANIFEST
    if _MANIFEST is None:
        _MANIFEST = load_manifest()
    return _MANIFEST


def raw_column_names() -> list[str]:
    return [c.name for c in manifest()]


@dataclass
class ScadaRecord:
    timestamp: float
    values: dict  # raw column name -> float (nan when missing)
    label: int    # 0 normal, 1 icing, -1 unlabeled
    invalid: bool = False


def validate_values(values: dict) -> bool:
    """True when every manifest variable is present, finite, and in bounds."""
    for col in manifest():
        v = values.get(col.name)
        if v is None or not math.isfinite(v) or not (col.lower <= v <= col.upper):
            return False
    return True


def ingest_scada(path) -> list[ScadaRecord]:
    """Parse the canonical raw CSV. Unparseable rows become invalid records
    rather than disappearing, so downstream counts stay honest."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = ["timestamp"] + raw_column_names() + ["label"]
        for col in required:
            if col not in header:
                raise IngestError(f"missing mandatory column: {col}")
        records = []
        last_ts = -math.inf
        for row in reader:
            bad = False
            try:
                ts = float(row["timestamp"])
            except (TypeError, ValueError):
                ts, bad = math.nan, True
            values = {}
            for name in raw_column_names():
                cell = (row.get(name) or "").strip()
                try:
                    values[name] = float(cell)
                except ValueError:
                    values[name] = math.nan
                    bad = True
            try:
                label = int(row["label"])
                if label not in (NORMAL, ICING, UNLABELED):
                    raise ValueError
            except (TypeError, ValueError):
                label, bad = UNLABELED, True
            bad = bad or not validate_values(values)
            if not bad:
                if ts < last_ts:
                    raise IngestError(f"timestamps not monotone at t={ts}")
                last_ts = ts
            records.append(ScadaRecord(timestamp=ts, values=values,
                                       label=label, invalid=bad))
    return records


def write_scada(records: list[ScadaRecord], path) -> None:
    """Canonical raw CSV: timestamp, the 26 manifest columns, label.
    NaN cells are written empty."""
    names = raw_column_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + names + ["label"])
        for r in records:
            cells = [repr(r.timestamp)]
            for name in names:
                v = r.values.get(name, math.nan)
                cells.append("" if not math.isfinite(v) else repr(v))
            cells.append(str(r.label))
            w.writerow(cells)


def eliminate_invalid(records: list[ScadaRecord]) -> list[ScadaRecord]:
    out = [r for r in records if not r.invalid]
    if not out:
        warnings.warn("all records were invalid; nothing left to process")
    return out


@dataclass
class FeatureVector:
    values: np.ndarray  # length 28, Table-attribute order
    degenerate: bool    # a guarded denominator was hit


def _guarded_div(num: float, den: float, flags: list) -> float:
    if abs(den) < EPS_DENOM:
        den = math.copysign(EPS_DENOM, den if den != 0 else 1.0)
        flags.append(True)
    return num / den


def engineer_features(record: ScadaRecord) -> FeatureVector:
    """Assemble the 28 input variables: 17 raw, 3 blade means, 8 derived."""
    v = record.values
    flags: list = []
    v_ws, v_gs, p = v["wind_speed"], v["generator_speed"], v["power"]
    t_env, t_int = v["environment_tmp"], v["int_tmp"]

    k_w2p = _guarded_div(v_ws + 5.0, p + 5.0, flags) ** 2 - 1.0
    k_w2g = _guarded_div(v_ws + 5.0, v_gs + 5.0, flags) ** 2 - 1.0
    k_w2pg = (k_w2p + 1.0) * (k_w2g + 1.0) - 1.0
    k1 = t_int - t_env
    k2 = _guarded_div(p, v_gs, flags)
    k3 = _guarded_div(p, v_ws ** 3, flags)
    k4 = _guarded_div(k2, v_ws ** 2, flags)
    k5 = _guarded_div(v_gs, v_ws, flags)

    out = np.array([
        v_ws, v_gs, p, v["wind_direction"], v["wind_direction_mean"],
        v["yaw_position"], v["yaw_speed"], v["acc_x"], v["acc_y"],
        t_env, t_int, v["pitch1_ng5_tmp"], v["pitch2_ng5_tmp"],
        v["pitch3_ng5_tmp"], v["pitch1_ng5_DC"], v["pitch2_ng5_DC"],
        v["pitch3_ng5_DC"],
        (v["pitch1_angle"] + v["pitch2_angle"] + v["pitch3_angle"]) / 3.0,
        (v["pitch1_speed"] + v["pitch2_speed"] + v["pitch3_speed"]) / 3.0,
        (v["pitch1_moto_tmp"] + v["pitch2_moto_tmp"] + v["pitch3_moto_tmp"]) / 3.0,
        k_w2p, k_w2g, k_w2pg, k1, k2, k3, k4, k5,
    ], dtype=np.float64)
    assert out.shape == (len(FEATURE_NAMES),)
    return FeatureVector(values=out, degenerate=bool(flags))


def features_matrix(records: list[ScadaRecord]):
    """(X, labels, degenerate mask) over valid records, in order."""
    feats = [engineer_features(r) for r in records]
    x = np.stack([f.values for f in feats]) if feats else np.empty((0, 28))
    labels = np.array([r.label for r in records], dtype=np.int64)
    degen = np.array([f.degenerate for f in feats], dtype=bool)
    return x, labels, degen


# ------------------------------------------------------------------ balance

def balance(x: np.ndarray, labels: np.ndarray, power_threshold: float = 2.0,
            seed: int = 0, ratio: float = 1.0) -> np.ndarray:
    """Index selection: all icing rows plus `ratio` times as many normal rows
    drawn from the strong-rule candidates (power below the threshold)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    idx_ic = np.flatnonzero(labels == ICING)
    idx_n = np.flatnonzero(labels == NORMAL)
    candidates = idx_n[x[idx_n, POWER_IDX] < power_threshold]
    want = int(round(ratio * idx_ic.size))
    if candidates.size < want:
        raise ValueError(
            f"only {candidates.size} normal candidates below power "
            f"{power_threshold}, need {want}")
    chosen = rng.choice(candidates, size=want, replace=False)
    return np.sort(np.concatenate([idx_ic, chosen]))


# -------------------------------------------------------------- normalization

@dataclass
class Scaler:
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float = -1.0
    y_max: float = 1.0
    names: list = field(default_factory=lambda: list(FEATURE_NAMES))


def fit_normalize(x: np.ndarray) -> Scaler:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (N, features) matrix")
    x_min = x.min(axis=0)
    x_max = x.max(axis=0)
    const = np.flatnonzero(x_max == x_min)
    if const.size:
        names = [FEATURE_NAMES[i] if i < len(FEATURE_NAMES) else str(i) for i in const]
        warnings.warn(f"constant features map to 0: {', '.join(names)}")
    return Scaler(x_min=x_min, x_max=x_max,
                  names=list(FEATURE_NAMES[:x.shape[1]]))


def apply_normalize(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    span = scaler.x_max - scaler.x_min
    safe = np.where(span == 0, 1.0, span)
    out = scaler.y_min + (scaler.y_max - scaler.y_min) * (x - scaler.x_min) / safe
    return np.where(span == 0, 0.5 * (scaler.y_min + scaler.y_max), out)


def invert_normalize(scaler: Scaler, x_tilde: np.ndarray) -> np.ndarray:
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    span = scaler.x_max - scaler.x_min
    return scaler.x_min + (x_tilde - scaler.y_min) * span / (scaler.y_max - scaler.y_min)


def save_scaler(scaler: Scaler, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"target {float(scaler.y_min)!r} {float(scaler.y_max)!r}\n")
        for name, lo, hi in zip(scaler.names, scaler.x_min, scaler.x_max):
            fh.write(f"{name} {float(lo)!r} {float(hi)!r}\n")


def load_scaler(path) -> Scaler:
    with open(path) as fh:
        lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0][0] != "target":
        raise ValueError("not a scaler file")
    y_min, y_max = float(lines[0][1]), float(lines[0][2])
    names = [ln[0] for ln in lines[1:]]
    x_min = np.array([float(ln[1]) for ln in lines[1:]])
    x_max = np.array([float(ln[2]) for ln in lines[1:]])
    return Scaler(x_min=x_min, x_max=x_max, y_min=y_min, y_max=y_max, names=names)


# ------------------------------------------------------------------- splits

@dataclass
class DatasetSplit:
    scenario: str
    seed: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    target_x: np.ndarray | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    target_idx: np.ndarray | None = None


def _split_counts(n_icing: int, train_frac: float, test_frac: float):
    n_tr = int(math.floor(train_frac * n_icing))
    n_te = int(math.floor(test_frac * n_icing))
    if n_tr < 1 or n_te < 1:
        raise ValueError(f"too few icing samples ({n_icing}) for the split")
    return n_tr, n_te


def split_single(x: np.ndarray, labels: np.ndarray, seed: int = 0,
                 icing_train_frac: float = 0.1, icing_test_frac: float = 0.4,
                 test_normal_ratio: int = 10,
                 power_threshold: float = 2.0) -> DatasetSplit:
    """Single-turbine split: train on a balanced sliver, test on the skew.

    Train: icing_train_frac of icing plus an equal number of strong-rule
    normals. Test: a disjoint icing_test_frac of icing plus ten times as
    many normals drawn from the natural distribution.
    """
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    idx_ic = rng.permutation(np.flatnonzero(labels == ICING))
    idx_n = np.flatnonzero(labels == NORMAL)
    n_tr_ic, n_te_ic = _split_counts(idx_ic.size, icing_train_frac, icing_test_frac)

    train_ic = idx_ic[:n_tr_ic]
    test_ic = idx_ic[n_tr_ic:n_tr_ic + n_te_ic]

    candidates = idx_n[x[idx_n, POWER_IDX] < power_threshold]
    if candidates.size < n_tr_ic:
        raise ValueError(
            f"only {candidates.size} strong-rule normal candidates, "
            f"need {n_tr_ic}")
    train_n = rng.choice(candidates, size=n_tr_ic, replace=False)

    n_te_n = test_normal_ratio * n_te_ic
    remaining = np.setdiff1d(idx_n, train_n, assume_unique=False)
    if remaining.size < n_te_n:
        raise ValueError(f"only {remaining.size} normals left for the test set, "
                         f"need {n_te_n}")
    test_n = rng.choice(remaining, size=n_te_n, replace=False)

    train_idx = np.concatenate([train_ic, train_n])
    test_idx = np.concatenate([test_ic, test_n])
    return DatasetSplit(
        scenario="single", seed=seed,
        train_x=x[train_idx], train_y=labels[train_idx],
        test_x=x[test_idx], test_y=labels[test_idx],
        train_idx=train_idx, test_idx=test_idx)


def split_transfer(source_x: np.ndarray, source_labels: np.ndarray,
                   target_x: np.ndarray, target_labels: np.ndarray,
                   seed: int = 0, icing_source_frac: float = 0.6,
                   icing_test_frac: float = 0.4, test_normal_ratio: int = 10,
                   power_threshold: float = 2.0) -> DatasetSplit:
    """Transfer split: labeled source sliver, unlabeled target sample, and a
    target test set disjoint from that sample.

    The target sample mirrors the source construction (a fraction of icing
    rows plus as many strong-rule normals); its labels are used only to draw
    it and are not carried into the split. A class-skewed sample would make
    marginal feature alignment counterproductive by construction, so the
    mirrored draw is what keeps the alignment losses meaningful.
    """
    rng = np.random.default_rng(seed)
    source_labels = np.asarray(source_labels)
    target_labels = np.asarray(target_labels)

    s_ic = rng.permutation(np.flatnonzero(source_labels == ICING))
    n_src_ic = int(math.floor(icing_source_frac * s_ic.size))
    if n_src_ic < 1:
        raise ValueError(f"too few source icing samples ({s_ic.size})")
    train_ic = s_ic[:n_src_ic]

    s_n = np.flatnonzero(source_labels == NORMAL)
    candidates = s_n[source_x[s_n, POWER_IDX] < power_threshold]
    if candidates.size < n_src_ic:
        raise ValueError(
            f"only {candidates.size} strong-rule source normals, need {n_src_ic}")
    train_n = rng.choice(candidates, size=n_src_ic, replace=False)
    train_idx = np.concatenate([train_ic, train_n])

    t_ic = rng.permutation(np.flatnonzero(target_labels == ICING))
    n_smp_ic = int(math.floor(icing_source_frac * t_ic.size))
    n_te_ic = int(math.floor(icing_test_frac * t_ic.size))
    if n_smp_ic < 1 or n_te_ic < 1:
        raise ValueError(f"too few target icing samples ({t_ic.size})")
    sample_ic = t_ic[:n_smp_ic]
    test_ic = t_ic[n_smp_ic:n_smp_ic + n_te_ic]

    t_n = np.flatnonzero(target_labels == NORMAL)
    t_candidates = t_n[target_x[t_n, POWER_IDX] < power_threshold]
    if t_candidates.size < n_smp_ic:
        raise ValueError(
            f"only {t_candidates.size} strong-rule target normals, need {n_smp_ic}")
    sample_n = rng.choice(t_candidates, size=n_smp_ic, replace=False)
    target_sample = np.concatenate([sample_ic, sample_n])

    n_te_n = test_normal_ratio * n_te_ic
    remaining_n = np.setdiff1d(t_n, sample_n, assume_unique=False)
    if remaining_n.size < n_te_n:
        raise ValueError(
            f"target test needs {n_te_n} normals, have {remaining_n.size} "
            "outside the unlabeled sample")
    test_n = rng.choice(remaining_n, size=n_te_n, replace=False)
    test_idx = np.concatenate([test_ic, test_n])

    return DatasetSplit(
        scenario="transfer", seed=seed,
        train_x=source_x[train_idx], train_y=source_labels[train_idx],
        test_x=target_x[test_idx], test_y=target_labels[test_idx],
        target_x=target_x[target_sample],
        train_idx=train_idx, test_idx=test_idx, target_idx=target_sample)


# --------------------------------------------------------------- flat files

def write_features(path, x: np.ndarray, labels: np.ndarray) -> None:
    """Processed CSV: the 28 feature columns plus label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_NAMES + ["label"])
        for row, lab in zip(np.asarray(x), np.asarray(labels)):
            w.writerow([repr(float(v)) for v in row] + [str(int(lab))])


def read_features(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_NAMES + ["label"]:
            raise IngestError("not a processed feature CSV (header mismatch)")
        rows, labels = [], []
        for cells in reader:
            rows.append([float(c) for c in cells[:-1]])
            labels.append(int(cells[-1]))
    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))
    return x, np.array(labels, dtype=np.int64)
