"""Generator contract: exact composition counts, reproducibility, the icing
signature, and the domain-shift knob."""

import numpy as np
import pytest

from icegan import data, eval as ev, synth, training


def features_of(cfg):
    recs = data.eliminate_invalid(synth.generate(cfg))
    x, labels, _ = data.features_matrix(recs)
    return x, labels


class TestComposition:
    def test_default_counts_exact(self):
        recs = synth.generate(synth.SynthConfig())
        assert len(recs) == 50000
        assert sum(r.label == data.ICING for r in recs) == 3000
        assert sum(r.invalid for r in recs) == 2500

    def test_requested_counts_exact(self):
        cfg = synth.SynthConfig(n_records=10000, icing_fraction=0.1,
                                invalid_fraction=0.0, seed=7)
        recs = synth.generate(cfg)
        assert sum(r.label == data.ICING for r in recs) == 1000
        assert not any(r.invalid for r in recs)

    def test_eliminate_removes_exactly_the_blanked(self):
        cfg = synth.SynthConfig(n_records=5000, invalid_fraction=0.1, seed=3)
        recs = synth.generate(cfg)
        kept = data.eliminate_invalid(recs)
        assert len(kept) == 5000 - 500
        assert all(data.validate_values(r.values) for r in kept)

    def test_timestamps_monotone(self):
        recs = synth.generate(synth.SynthConfig(n_records=300, seed=1))
        ts = [r.timestamp for r in recs]
        assert ts == sorted(ts)


class TestReproducibility:
    def test_generate_is_pure(self):
        cfg = synth.SynthConfig(n_records=2000, seed=11)
        a, b = synth.generate(cfg), synth.generate(cfg)
        names = data.raw_column_names()
        for ra, rb in zip(a, b):
            assert (ra.label, ra.invalid, ra.timestamp) == (rb.label, rb.invalid, rb.timestamp)
            va = np.array([ra.values[n] for n in names])
            vb = np.array([rb.values[n] for n in names])
            assert np.array_equal(va, vb, equal_nan=True)

    def test_files_byte_identical(self, tmp_path):
        cfg = synth.SynthConfig(n_records=2000, seed=11)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        data.write_scada(synth.generate(cfg), p1)
        data.write_scada(synth.generate(cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a = synth.generate(synth.SynthConfig(n_records=500, seed=0))
        b = synth.generate(synth.SynthConfig(n_records=500, seed=1))
        assert any(ra.values != rb.values for ra, rb in zip(a, b))


class TestValidation:
    def test_bad_configs_rejected(self):
        with pytest.raises(ValueError, match="n_records"):
            synth.generate(synth.SynthConfig(n_records=0))
        with pytest.raises(ValueError, match="icing_fraction"):
            synth.generate(synth.SynthConfig(icing_fraction=1.2))
        with pytest.raises(ValueError, match="exceeds 1"):
            synth.generate(synth.SynthConfig(icing_fraction=0.7,
                                             invalid_fraction=0.5))
        with pytest.raises(ValueError, match="icing_power_factor"):
            synth.generate(synth.SynthConfig(icing_power_factor=1.0))
        with pytest.raises(ValueError, match="noise_scale"):
            synth.generate(synth.SynthConfig(noise_scale=-0.5))
        with pytest.raises(ValueError, match="unknown column"):
            synth.generate(synth.SynthConfig(domain_shift={"watts": (2.0, 0.0)}))


class TestIcingSignature:
    def test_power_ratio_separates_classes(self):
        x, labels = features_of(synth.SynthConfig(n_records=20000, seed=2))
        k = data.FEATURE_NAMES.index("kappa_w2p")
        med_ic = np.median(x[labels == data.ICING, k])
        med_n = np.median(x[labels == data.NORMAL, k])
        assert med_ic > med_n

    def test_icing_rows_are_cold(self):
        recs = synth.generate(synth.SynthConfig(n_records=5000, seed=4,
                                                invalid_fraction=0.0))
        t_env = np.array([r.values["environment_tmp"] for r in recs])
        lab = np.array([r.label for r in recs])
        assert np.all(t_env[lab == data.ICING] < 0.0)

    def test_knn_separability_floor(self):
        # the generated classes must be learnable through the real pipeline
        x, labels = features_of(synth.SynthConfig())
        sp = data.split_single(x, labels, seed=0)
        scaler = data.fit_normalize(sp.train_x)
        scores = ev.knn_baseline(data.apply_normalize(scaler, sp.train_x),
                                 sp.train_y,
                                 data.apply_normalize(scaler, sp.test_x), k=5)
        assert ev.roc_auc(scores, sp.test_y).auc >= 0.9


class TestDomainShift:
    def test_shift_increases_feature_discrepancy(self):
        # fixed kernel width from the unshifted pair keeps the comparison fair
        base = synth.SynthConfig(n_records=6000, seed=0, invalid_fraction=0.0)
        for seed in range(5):
            sx, _ = features_of(synth.SynthConfig(n_records=6000, seed=seed,
                                                  invalid_fraction=0.0))
            tx, _ = features_of(synth.SynthConfig(n_records=6000, seed=seed + 50,
                                                  invalid_fraction=0.0))
            tx_sh, _ = features_of(synth.SynthConfig(
                n_records=6000, seed=seed + 50, invalid_fraction=0.0,
                domain_shift=dict(synth.TARGET_SHIFT)))
            scaler = data.fit_normalize(sx)
            a = data.apply_normalize(scaler, sx)[:400]
            b = data.apply_normalize(scaler, tx)[:400]
            c = data.apply_normalize(scaler, tx_sh)[:400]
            sigma = training.median_sigma(np.concatenate([a, b]))
            assert (training.mmd2_rbf(a, c, sigma)
                    > training.mmd2_rbf(a, b, sigma))

    def test_shift_is_per_column_affine(self):
        cfg = synth.SynthConfig(n_records=800, seed=5, invalid_fraction=0.0)
        plain = synth.generate(cfg)
        shifted = synth.generate(synth.SynthConfig(
            n_records=800, seed=5, invalid_fraction=0.0,
            domain_shift={"power": (2.0, 1.0)}))
        for a, b in zip(plain, shifted):
            expect = min(2.0 * a.values["power"] + 1.0, 15.0)  # manifest cap
            assert b.values["power"] == pytest.approx(expect, abs=1e-12)
            assert b.values["wind_speed"] == a.values["wind_speed"]


class TestDirectionMean:
    def test_trailing_window_matches_bruteforce(self):
        cfg = synth.SynthConfig(n_records=60, seed=9, invalid_fraction=0.0)
        recs = synth.generate(cfg)
        ts = np.array([r.timestamp for r in recs])
        wd = np.array([r.values["wind_direction"] for r in recs])
        got = np.array([r.values["wind_direction_mean"] for r in recs])
        for i in range(len(recs)):
            inside = (ts >= ts[i] - 25.0) & (ts <= ts[i])
            assert got[i] == pytest.approx(wd[inside].mean(), abs=1e-9)
