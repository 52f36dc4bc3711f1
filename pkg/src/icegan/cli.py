"""Command-line surface binding the pipeline end to end.

Commands: synth, preprocess, train, eval, compare. Every command is a pure
function of (config file, flags, input files, seed): rerunning writes
byte-identical outputs. Exit codes: 0 success, 2 configuration or input
error, 3 training divergence, 4 checkpoint integrity failure.

Configuration is flat INI-style key/value text with one section per
concern; command-line flags override file values, and unknown sections or
keys are rejected outright. ICEGAN_SEED supplies the default seed when
neither a flag nor the file sets one.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint, data, eval as ev, synth, training
from .diffnet import TrainingDiverged
from .models import PgancModel, PgantModel, load_state, pganc_icing_scores, pgant_icing_scores


class ConfigError(ValueError):
    """Configuration file or flag combination is unusable."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_sigma(raw: str):
    if raw.strip() == "median":
        return "median"
    return float(raw)


# section -> key -> parser; the single source of truth for accepted keys
_SECTION_FIELDS = {
    "run": {"seed": int, "out_dir": str},
    "synth": {
        "n_records": int, "icing_fraction": float, "invalid_fraction": float,
        "noise_scale": float, "icing_power_factor": float, "cadence": float,
        "start_time": float,
    },
    "gan": {
        "epochs": int, "batch": int, "lr": float, "patience": int,
        "min_delta": float, "w_con": float, "w_adv": float, "w_f": float,
    },
    "classifier": {
        "epochs": int, "batch": int, "lr": float, "patience": int,
        "min_delta": float,
    },
    "two_stage": {"stage2_epochs": int, "stage2_lr_factor": float},
    "transfer": {
        "alpha": float, "beta": float, "sigma": _parse_sigma, "lr": float,
        "epochs": int, "warmup_epochs": int, "batch_source": int,
        "batch_target": int, "freeze_gans": _parse_bool, "patience": int,
        "min_delta": float,
    },
    "split": {
        "icing_train_frac": float, "icing_test_frac": float,
        "icing_source_frac": float, "test_normal_ratio": int,
        "power_threshold": float,
    },
}


@dataclass
class RunConfig:
    """Typed key/value store mirroring the config file sections."""

    sections: dict = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value) -> None:
        if key not in _SECTION_FIELDS.get(section, {}):
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.sections.setdefault(section, {})[key] = value

    def kwargs(self, section: str) -> dict:
        return dict(self.sections.get(section, {}))


def parse_run_config(path) -> RunConfig:
    rc = RunConfig()
    if path is None:
        return rc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            kind = _SECTION_FIELDS[section].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                rc.set(section, key, kind(raw))
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(
                    f"bad value for {key!r} in [{section}]: {raw!r}") from exc
    return rc


def resolve_seed(flag_seed, rc: RunConfig) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    file_seed = rc.get("run", "seed")
    if file_seed is not None:
        return int(file_seed)
    env = os.environ.get("ICEGAN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"ICEGAN_SEED is not an integer: {env!r}") from exc
    return 0


def _override(rc: RunConfig, section: str, key: str, value) -> None:
    if value is not None:
        rc.set(section, key, value)


# ------------------------------------------------------------- config builders

def _synth_config(rc: RunConfig, seed: int, shift: dict | None) -> synth.SynthConfig:
    return synth.SynthConfig(seed=seed, domain_shift=dict(shift or {}),
                             **rc.kwargs("synth"))


def _gan_config(rc: RunConfig) -> training.GanTrainConfig:
    kw = rc.kwargs("gan")
    weights = training.GanLossWeights(
        **{k: kw.pop(k) for k in ("w_con", "w_adv", "w_f") if k in kw})
    return training.GanTrainConfig(weights=weights, **kw)


def _two_stage_config(rc: RunConfig) -> training.TwoStageConfig:
    return training.TwoStageConfig(
        gan=_gan_config(rc),
        stage1=training.ClassifierTrainConfig(**rc.kwargs("classifier")),
        **rc.kwargs("two_stage"))


def _transfer_config(rc: RunConfig) -> training.TransferConfig:
    return training.TransferConfig(**rc.kwargs("transfer"))


def _split_kwargs(rc: RunConfig, scenario: str) -> dict:
    kw = rc.kwargs("split")
    drop = "icing_source_frac" if scenario == "single" else "icing_train_frac"
    kw.pop(drop, None)
    return kw


# ------------------------------------------------------------ pipeline pieces

def _load_features(path):
    """Raw CSV -> (features, labels): ingest, drop invalid, engineer."""
    records = data.eliminate_invalid(data.ingest_scada(path))
    if not records:
        raise ConfigError(f"no valid records in {path}")
    x, labels, _ = data.features_matrix(records)
    return x, labels


def _prepare_bundle(args, rc: RunConfig, seed: int) -> ev.ScenarioData:
    scenario = args.scenario
    x, labels = _load_features(args.data)
    if scenario == "single":
        split = data.split_single(x, labels, seed=seed,
                                  **_split_kwargs(rc, scenario))
    else:
        if not args.target_data:
            raise ConfigError("transfer scenario needs --target-data")
        tx, ty = _load_features(args.target_data)
        split = data.split_transfer(x, labels, tx, ty, seed=seed,
                                    **_split_kwargs(rc, scenario))
    return ev.normalize_bundle(scenario, seed, split)


def _default_scenario(args) -> None:
    if args.scenario is None:
        args.scenario = "transfer" if args.framework == "pgant" else "single"


def _load_init_model(path, framework: str):
    model, _ = checkpoint.load_checkpoint(path)
    expected = PgantModel if framework == "pgant" else PgancModel
    if not isinstance(model, expected):
        raise ConfigError(
            f"--init-from holds a {type(model).__name__}, need {expected.__name__}")
    return model


# ------------------------------------------------------------------- commands

def cmd_synth(args, rc: RunConfig) -> int:
    seed = resolve_seed(args.seed, rc)
    _override(rc, "synth", "n_records", args.n)
    _override(rc, "synth", "icing_fraction", args.icing_frac)
    _override(rc, "synth", "invalid_fraction", args.invalid_frac)
    _override(rc, "synth", "noise_scale", args.noise_scale)
    _override(rc, "synth", "icing_power_factor", args.icing_power_factor)
    shift = synth.TARGET_SHIFT if args.shift_preset == "target" else None
    records = synth.generate(_synth_config(rc, seed, shift))
    data.write_scada(records, args.out)
    print(f"wrote {args.out} ({len(records)} records)")
    return 0


def cmd_preprocess(args, rc: RunConfig) -> int:
    """Chain: drop invalid rows, balance on the raw power reading, engineer
    the 28 features, normalize. Feature engineering is row-pure, so the
    balancing selection commutes with it and is keyed on the same power
    values either way."""
    seed = resolve_seed(args.seed, rc)
    records = data.eliminate_invalid(data.ingest_scada(args.input))
    if not records:
        raise ConfigError(f"no valid records in {args.input}")
    x, labels, _ = data.features_matrix(records)
    if not args.no_balance:
        idx = data.balance(x, labels, power_threshold=args.power_threshold,
                           seed=seed, ratio=args.balance_ratio)
        x, labels = x[idx], labels[idx]
    scaler = data.fit_normalize(x)
    data.write_features(args.out, data.apply_normalize(scaler, x), labels)
    scaler_out = args.scaler_out or f"{args.out}.scaler"
    data.save_scaler(scaler, scaler_out)
    print(f"wrote {args.out} ({x.shape[0]} rows) and {scaler_out}")
    return 0


def _train_pganc(args, rc: RunConfig, bundle: ev.ScenarioData, seed: int):
    config = _two_stage_config(rc)
    model = (PgancModel(np.random.default_rng(seed + ev.MODEL_SEED_OFFSET))
             if args.init_from is None
             else _load_init_model(args.init_from, "pganc"))
    res = training.train_two_stage_pganc(bundle.train_x, bundle.train_y,
                                         config, np.random.default_rng(seed),
                                         model=model)
    stage1 = PgancModel(np.random.default_rng(seed + ev.MODEL_SEED_OFFSET),
                        front_end=model.front_end)
    load_state(stage1, res.stage1_state)
    paths = [os.path.join(args.out_dir, "pganc_stage1.ckpt"),
             os.path.join(args.out_dir, "pganc_stage2.ckpt")]
    checkpoint.save_checkpoint(paths[0], stage1, bundle.scaler)
    checkpoint.save_checkpoint(paths[1], res.model, bundle.scaler)
    return res.report, paths


def _train_pgant(args, rc: RunConfig, bundle: ev.ScenarioData, seed: int):
    if bundle.target_x is None:
        raise ConfigError("pgant needs the transfer scenario")
    transfer = _transfer_config(rc)
    if args.alpha is not None:
        transfer = replace(transfer, alpha=args.alpha)
    if args.beta is not None:
        transfer = replace(transfer, beta=args.beta)
    model = (PgantModel(np.random.default_rng(seed + ev.MODEL_SEED_OFFSET))
             if args.init_from is None
             else _load_init_model(args.init_from, "pgant"))
    rng = np.random.default_rng(seed)
    gan_cfg = _gan_config(rc)
    report = training.LossReport()
    if model.front_end == "gan":
        rep = training.train_gan(model.gan_normal,
                                 bundle.train_x[bundle.train_y == data.NORMAL],
                                 gan_cfg, rng)
        report.merge(rep, "gan_normal.")
        rep = training.train_gan(model.gan_icing,
                                 bundle.train_x[bundle.train_y == data.ICING],
                                 gan_cfg, rng)
        report.merge(rep, "gan_icing.")
    paths = [os.path.join(args.out_dir, "pgant_pretrain.ckpt"),
             os.path.join(args.out_dir, "pgant_transfer.ckpt")]
    checkpoint.save_checkpoint(paths[0], model, bundle.scaler)
    rep = training.train_pgant(model, bundle.train_x, bundle.train_y,
                               bundle.target_x, transfer, rng)
    report.merge(rep, "transfer.")
    checkpoint.save_checkpoint(paths[1], model, bundle.scaler)
    return report, paths


def cmd_train(args, rc: RunConfig) -> int:
    _default_scenario(args)
    seed = resolve_seed(args.seed, rc)
    os.makedirs(args.out_dir, exist_ok=True)
    bundle = _prepare_bundle(args, rc, seed)
    if args.framework == "pgant":
        report, paths = _train_pgant(args, rc, bundle, seed)
    else:
        report, paths = _train_pganc(args, rc, bundle, seed)
    losses = os.path.join(args.out_dir, f"{args.framework}_losses.csv")
    report.to_csv(losses)
    print(f"wrote {paths[0]}, {paths[1]} and {losses}")
    return 0


EVAL_COLUMNS = ["method", "scenario", "seed", "tp", "fn", "fp", "tn",
                "score", "auc", "mcc"]


def cmd_eval(args, rc: RunConfig) -> int:
    seed = resolve_seed(args.seed, rc)
    model, scaler = checkpoint.load_checkpoint(args.checkpoint)
    if scaler is None:
        raise ConfigError("checkpoint carries no scaler; retrain to evaluate")
    if args.scenario is None:
        args.scenario = "transfer" if isinstance(model, PgantModel) else "single"
    x, labels = _load_features(args.data)
    if args.scenario == "single":
        split = data.split_single(x, labels, seed=seed,
                                  **_split_kwargs(rc, "single"))
    else:
        if not args.target_data:
            raise ConfigError("transfer scenario needs --target-data")
        tx, ty = _load_features(args.target_data)
        split = data.split_transfer(x, labels, tx, ty, seed=seed,
                                    **_split_kwargs(rc, "transfer"))
    test_x = data.apply_normalize(scaler, split.test_x).astype(np.float32)
    if isinstance(model, PgantModel):
        scores = pgant_icing_scores(model, test_x)
        label = args.label or "PGANT"
    else:
        scores = pganc_icing_scores(model, test_x)
        label = args.label or "PGANC"
    c = ev.confusion(scores, split.test_y, threshold=args.threshold)
    row = [label, args.scenario, str(seed), str(c.tp), str(c.fn), str(c.fp),
           str(c.tn), repr(ev.competition_score(c, args.score_convention)),
           repr(ev.roc_auc(scores, split.test_y).auc), repr(ev.mcc(c))]
    with open(args.results, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        w.writerow(row)
    ev.write_roc(ev.roc_auc(scores, split.test_y), args.roc)
    print(f"wrote {args.results} and {args.roc}")
    return 0


def cmd_compare(args, rc: RunConfig) -> int:
    seed = resolve_seed(None, rc)
    _override(rc, "synth", "n_records", args.n)
    _override(rc, "synth", "icing_fraction", args.icing_frac)
    _override(rc, "synth", "invalid_fraction", args.invalid_frac)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    base = _synth_config(rc, seed, None)
    rows = ev.run_comparison(args.scenario, methods, seeds, synth_config=base,
                             two_stage=_two_stage_config(rc),
                             transfer=_transfer_config(rc),
                             convention=args.score_convention)
    ev.write_results(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="icegan",
        description="Blade icing diagnosis: data synthesis, preprocessing, "
                    "training, and evaluation.")
    p.add_argument("--config", help="INI config file; flags override its values")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a raw SCADA CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--icing-frac", type=float)
    s.add_argument("--invalid-frac", type=float)
    s.add_argument("--noise-scale", type=float)
    s.add_argument("--icing-power-factor", type=float)
    s.add_argument("--shift-preset", choices=["none", "target"], default="none")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="raw CSV -> normalized feature CSV")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--scaler-out")
    s.add_argument("--balance-ratio", type=float, default=1.0)
    s.add_argument("--power-threshold", type=float, default=2.0)
    s.add_argument("--no-balance", action="store_true")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a framework, write checkpoints")
    s.add_argument("framework", choices=["pganc", "pgant"])
    s.add_argument("--data", required=True, help="raw source CSV")
    s.add_argument("--target-data", help="raw target CSV (transfer)")
    s.add_argument("--scenario", choices=["single", "transfer"])
    s.add_argument("--out-dir", default=".")
    s.add_argument("--alpha", type=float, help="class-separation weight (pgant)")
    s.add_argument("--beta", type=float, help="domain-alignment weight (pgant)")
    s.add_argument("--init-from", help="checkpoint to start from")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="raw source CSV")
    s.add_argument("--target-data", help="raw target CSV (transfer)")
    s.add_argument("--scenario", choices=["single", "transfer"])
    s.add_argument("--results", required=True)
    s.add_argument("--roc", required=True)
    s.add_argument("--label", help="method name for the results row")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--score-convention", choices=["paper", "swapped"],
                   default="paper")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="run the method comparison harness")
    s.add_argument("--scenario", choices=["single", "transfer"], required=True)
    s.add_argument("--methods", required=True, help="comma-separated list")
    s.add_argument("--seeds", required=True, help="comma-separated integers")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--icing-frac", type=float)
    s.add_argument("--invalid-frac", type=float)
    s.add_argument("--score-convention", choices=["paper", "swapped"],
                   default="paper")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = parse_run_config(args.config)
        return args.func(args, rc)
    except checkpoint.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
