"""Command surface: exit codes, artifact contracts, replay purity.

Commands run in-process through cli.main, so a test sees the same exit code
a shell would. The corpus fixture builds one small raw pair (source plus a
shifted target) and a fast training config shared by the whole module."""

import csv

import numpy as np
import pytest

from icegan import checkpoint, cli, data, eval as ev
from icegan.models import PgancModel, PgantModel

TINY_INI = """\
[gan]
epochs = 2

[classifier]
epochs = 2

[two_stage]
stage2_epochs = 1

[transfer]
epochs = 2
warmup_epochs = 1
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    ini = root / "tiny.ini"
    ini.write_text(TINY_INI)
    src, tgt = root / "src.csv", root / "tgt.csv"
    assert run("synth", "--out", src, "--n", 4000, "--icing-frac", 0.1,
               "--invalid-frac", 0.02, "--seed", 0) == 0
    assert run("synth", "--out", tgt, "--n", 4000, "--icing-frac", 0.1,
               "--invalid-frac", 0.02, "--seed", 50,
               "--shift-preset", "target") == 0
    return {"root": root, "ini": ini, "src": src, "tgt": tgt}


@pytest.fixture(scope="module")
def pganc_run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("pganc_run")
    assert run("--config", corpus["ini"], "train", "pganc",
               "--data", corpus["src"], "--seed", 1, "--out-dir", out) == 0
    return out


class TestSynth:
    def test_icing_row_count_pinned(self, tmp_path):
        out = tmp_path / "big.csv"
        assert run("synth", "--out", out, "--n", 50000,
                   "--icing-frac", 0.06, "--seed", 7) == 0
        records = data.ingest_scada(out)
        assert sum(r.label == data.ICING for r in records) == 3000

    def test_same_invocation_identical_files(self, corpus, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run("synth", "--out", p, "--n", 800, "--seed", 4) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_fraction_exits_2(self, tmp_path, capsys):
        code = run("synth", "--out", tmp_path / "x.csv", "--invalid-frac", 1.5)
        assert code == 2
        assert "invalid_fraction" in capsys.readouterr().err


class TestPreprocess:
    def test_feature_columns_and_normalization(self, corpus, tmp_path):
        out = tmp_path / "feat.csv"
        assert run("preprocess", corpus["src"], "--out", out, "--seed", 3) == 0
        x, labels = data.read_features(out)
        assert x.shape[1] == 28
        assert np.all(x >= -1.0) and np.all(x <= 1.0)
        assert np.sum(labels == data.ICING) == np.sum(labels == data.NORMAL)
        scaler = data.load_scaler(f"{out}.scaler")
        assert scaler.names == data.FEATURE_NAMES

    def test_replay_identical(self, corpus, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run("preprocess", corpus["src"], "--out", p, "--seed", 3) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_empty_input_exits_2(self, corpus, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text(corpus["src"].read_text().splitlines()[0] + "\n")
        with pytest.warns(UserWarning):
            assert run("preprocess", empty, "--out", tmp_path / "x.csv") == 2


class TestTrainPganc:
    def test_writes_two_loadable_checkpoints(self, pganc_run):
        for name in ("pganc_stage1.ckpt", "pganc_stage2.ckpt"):
            model, scaler = checkpoint.load_checkpoint(pganc_run / name)
            assert isinstance(model, PgancModel)
            assert scaler is not None
        losses = (pganc_run / "pganc_losses.csv").read_text().splitlines()
        assert losses[0] == "epoch,loss,value"
        assert len(losses) > 1

    def test_stage_checkpoints_differ(self, pganc_run):
        s1 = (pganc_run / "pganc_stage1.ckpt").read_bytes()
        s2 = (pganc_run / "pganc_stage2.ckpt").read_bytes()
        assert s1 != s2

    def test_replay_identical_artifacts(self, corpus, pganc_run, tmp_path):
        out = tmp_path / "again"
        assert run("--config", corpus["ini"], "train", "pganc",
                   "--data", corpus["src"], "--seed", 1, "--out-dir", out) == 0
        for name in ("pganc_stage1.ckpt", "pganc_stage2.ckpt",
                     "pganc_losses.csv"):
            assert (out / name).read_bytes() == (pganc_run / name).read_bytes()

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_exits_3(self, corpus, tmp_path, capsys):
        bad = tmp_path / "diverge.ini"
        bad.write_text("[gan]\nepochs = 2\nlr = 1e12\n"
                       "[classifier]\nepochs = 1\n[two_stage]\nstage2_epochs = 1\n")
        code = run("--config", bad, "train", "pganc", "--data", corpus["src"],
                   "--seed", 1, "--out-dir", tmp_path / "run")
        assert code == 3
        assert "diverged" in capsys.readouterr().err


class TestTrainPgant:
    def test_transfer_artifacts(self, corpus, tmp_path):
        out = tmp_path / "run"
        assert run("--config", corpus["ini"], "train", "pgant",
                   "--data", corpus["src"], "--target-data", corpus["tgt"],
                   "--seed", 2, "--out-dir", out) == 0
        for name in ("pgant_pretrain.ckpt", "pgant_transfer.ckpt"):
            model, _ = checkpoint.load_checkpoint(out / name)
            assert isinstance(model, PgantModel)

    def test_missing_target_exits_2(self, corpus, tmp_path):
        assert run("--config", corpus["ini"], "train", "pgant",
                   "--data", corpus["src"], "--seed", 2,
                   "--out-dir", tmp_path) == 2

    def test_zero_weights_reduce_to_classification_loss(self, corpus, tmp_path):
        out = tmp_path / "run"
        assert run("--config", corpus["ini"], "train", "pgant",
                   "--data", corpus["src"], "--target-data", corpus["tgt"],
                   "--seed", 2, "--out-dir", out,
                   "--alpha", 0, "--beta", 0) == 0
        by_epoch = {}
        with open(out / "pgant_losses.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                if row["loss"].startswith("transfer."):
                    by_epoch.setdefault(row["epoch"], {})[row["loss"]] = float(row["value"])
        full = [d for d in by_epoch.values() if "transfer.l_total" in d]
        assert full
        for d in full:
            assert abs(d["transfer.l_total"] - d["transfer.l_c"]) <= 1e-12


class TestEval:
    def eval_stage2(self, corpus, pganc_run, tmp_path, *extra):
        res, roc = tmp_path / "res.csv", tmp_path / "roc.csv"
        code = run("eval", "--checkpoint", pganc_run / "pganc_stage2.ckpt",
                   "--data", corpus["src"], "--seed", 1,
                   "--results", res, "--roc", roc, *extra)
        assert code == 0
        with open(res, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return rows, res, roc

    def test_single_results_row(self, corpus, pganc_run, tmp_path):
        rows, _, roc = self.eval_stage2(corpus, pganc_run, tmp_path)
        assert len(rows) == 1
        assert rows[0]["method"] == "PGANC"
        lines = roc.read_text().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert lines[1] == ",0.0,0.0"

    def test_metrics_consistent_with_emitted_counts(self, corpus, pganc_run,
                                                    tmp_path):
        rows, _, _ = self.eval_stage2(corpus, pganc_run, tmp_path)
        r = rows[0]
        c = ev.ConfusionCounts(tp=int(r["tp"]), fn=int(r["fn"]),
                               fp=int(r["fp"]), tn=int(r["tn"]))
        assert float(r["score"]) == ev.competition_score(c)
        assert float(r["mcc"]) == ev.mcc(c)

    def test_swapped_convention_touches_only_score(self, corpus, pganc_run,
                                                   tmp_path):
        rows_a, _, roc_a = self.eval_stage2(corpus, pganc_run, tmp_path)
        sub = tmp_path / "swapped"
        sub.mkdir()
        rows_b, _, roc_b = self.eval_stage2(corpus, pganc_run, sub,
                                            "--score-convention", "swapped")
        a, b = rows_a[0], rows_b[0]
        assert a["score"] != b["score"]
        for col in ("method", "scenario", "seed", "tp", "fn", "fp", "tn",
                    "auc", "mcc"):
            assert a[col] == b[col]
        assert roc_a.read_bytes() == roc_b.read_bytes()

    def test_corrupted_checkpoint_exits_4(self, corpus, pganc_run, tmp_path,
                                          capsys):
        raw = bytearray((pganc_run / "pganc_stage2.ckpt").read_bytes())
        raw[len(raw) // 2] ^= 0x01
        bad = tmp_path / "corrupt.ckpt"
        bad.write_bytes(bytes(raw))
        code = run("eval", "--checkpoint", bad, "--data", corpus["src"],
                   "--seed", 1, "--results", tmp_path / "r.csv",
                   "--roc", tmp_path / "c.csv")
        assert code == 4
        assert "checksum" in capsys.readouterr().err
        code = run("--config", corpus["ini"], "train", "pganc",
                   "--data", corpus["src"], "--seed", 1,
                   "--out-dir", tmp_path / "run", "--init-from", bad)
        assert code == 4


class TestCompare:
    def test_single_method_seed_one_row(self, corpus, tmp_path):
        out = tmp_path / "cmp.csv"
        assert run("--config", corpus["ini"], "compare", "--scenario", "single",
                   "--methods", "KNN", "--seeds", "0", "--out", out,
                   "--n", 4000, "--icing-frac", 0.1, "--invalid-frac", 0.02) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["method"] == "KNN" and rows[0]["seed"] == "0"

    def test_replay_identical(self, corpus, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run("--config", corpus["ini"], "compare", "--scenario",
                       "single", "--methods", "KNN,PGANC-stage2", "--seeds",
                       "0", "--out", p, "--n", 4000, "--icing-frac", 0.1,
                       "--invalid-frac", 0.02) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_method_exits_2(self, corpus, tmp_path):
        assert run("compare", "--scenario", "single", "--methods", "SVC",
                   "--seeds", "0", "--out", tmp_path / "x.csv", "--n", 2000) == 2


class TestConfigHandling:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[synth]\nbogus = 1\n")
        assert run("--config", bad, "synth", "--out", tmp_path / "x.csv") == 2
        assert "bogus" in capsys.readouterr().err

    def test_unknown_section_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[nosuch]\nx = 1\n")
        assert run("--config", bad, "synth", "--out", tmp_path / "x.csv") == 2

    def test_flag_overrides_file(self, tmp_path):
        ini = tmp_path / "n.ini"
        ini.write_text("[synth]\nn_records = 100\n")
        out = tmp_path / "out.csv"
        assert run("--config", ini, "synth", "--out", out, "--n", 200) == 0
        assert len(data.ingest_scada(out)) == 200

    def test_file_value_used_without_flag(self, tmp_path):
        ini = tmp_path / "n.ini"
        ini.write_text("[synth]\nn_records = 150\n")
        out = tmp_path / "out.csv"
        assert run("--config", ini, "synth", "--out", out) == 0
        assert len(data.ingest_scada(out)) == 150

    def test_env_seed_matches_flag_seed(self, tmp_path, monkeypatch):
        a, b = tmp_path / "env.csv", tmp_path / "flag.csv"
        monkeypatch.setenv("ICEGAN_SEED", "7")
        assert run("synth", "--out", a, "--n", 300) == 0
        monkeypatch.delenv("ICEGAN_SEED")
        assert run("synth", "--out", b, "--n", 300, "--seed", 7) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_garbage_env_seed_exits_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ICEGAN_SEED", "lots")
        assert run("synth", "--out", tmp_path / "x.csv", "--n", 10) == 2
