"""Data-bag formation: templates, genomic padding, OTSU, time binning, I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pansurv import bags


def make_meta(**overrides):
    base = dict(sex="female", age=58, race="White", cancer_type="BRCA",
                primary_diagnosis="Infiltrating duct carcinoma", stage="Stage II",
                t_stage="T2", n_stage="N1", m_stage="M0", treatments="radiation")
    base.update(overrides)
    return bags.PatientMeta(**base)


class TestTextBag:
    def test_demographic_template(self):
        bag = bags.render_text_bag(make_meta())
        assert bag.sentences[0] == "She is a 58-year-old White race Woman."

    def test_male_demographic(self):
        bag = bags.render_text_bag(make_meta(sex="male", age=63, race="Asian"))
        assert bag.sentences[0] == "He is a 63-year-old Asian race Man."

    def test_cancer_template_uses_full_name(self):
        bag = bags.render_text_bag(make_meta(cancer_type="BLCA"))
        assert bag.sentences[1] == "This is a patient who has Bladder Urothelial Carcinoma."

    def test_diagnosis_template(self):
        bag = bags.render_text_bag(make_meta())
        assert bag.sentences[2] == ("She has Infiltrating duct carcinoma at Stage II. "
                                    "T2, N1, M0.")

    def test_treatment_templates(self):
        cases = {
            "radiation": "Radiation is applied.",
            "pharmaceutical": "Pharmaceutical is applied.",
            "both": "Radiation and pharmaceutical therapy is applied.",
            "none": "No treatment is applied.",
        }
        for treatment, sentence in cases.items():
            assert bags.render_text_bag(make_meta(treatments=treatment)).sentences[3] == sentence

    def test_missing_field_names_field(self):
        with pytest.raises(bags.TemplateError, match="t_stage"):
            bags.render_text_bag(make_meta(t_stage=""))

    def test_unknown_vocab_rejected(self):
        with pytest.raises(bags.TemplateError):
            bags.render_text_bag(make_meta(race="Martian"))
        with pytest.raises(bags.TemplateError):
            bags.render_text_bag(make_meta(age=0))

    def test_pure_function(self):
        a = bags.render_text_bag(make_meta())
        b = bags.render_text_bag(make_meta())
        assert a.sentences == b.sentences


class TestGenomicBag:
    SCHEMA = {g: [f"{g}_{i:04d}" for i in range(4)] for g in bags.GENOMIC_GROUPS}

    def test_fully_observed_mask_all_ones(self):
        observed = {g: {name: 0.5 for name in names} for g, names in self.SCHEMA.items()}
        bag = bags.build_genomic_bag(observed, self.SCHEMA)
        for g in bags.GENOMIC_GROUPS:
            np.testing.assert_array_equal(bag.mask[g], np.ones(4))

    def test_missing_group_all_zero(self):
        observed = {g: {name: 1.0 for name in names}
                    for g, names in self.SCHEMA.items() if g != "TF"}
        bag = bags.build_genomic_bag(observed, self.SCHEMA)
        np.testing.assert_array_equal(bag.values["TF"], np.zeros(4))
        np.testing.assert_array_equal(bag.mask["TF"], np.zeros(4))

    def test_unknown_gene_rejected(self):
        with pytest.raises(bags.SchemaError, match="NOPE"):
            bags.build_genomic_bag({"TSG": {"NOPE": 1.0}}, self.SCHEMA)

    def test_unknown_group_rejected(self):
        with pytest.raises(bags.SchemaError):
            bags.build_genomic_bag({"XYZ": {}}, self.SCHEMA)

    def test_default_schema_sizes(self):
        schema = bags.table_default_schema()
        sizes = [len(schema[g]) for g in bags.GENOMIC_GROUPS]
        assert sizes == [82, 328, 513, 443, 1536, 452]

    def test_padded_positions_hold_zero(self, rng):
        observed = {"TSG": {"TSG_0001": 2.5}}
        bag = bags.build_genomic_bag(observed, self.SCHEMA)
        prod = bag.values["TSG"] * (1 - bag.mask["TSG"])
        np.testing.assert_array_equal(prod, np.zeros(4))
        assert set(np.unique(bag.mask["TSG"])) <= {0.0, 1.0}


def brute_force_otsu(hist):
    """Exhaustive search over all 256 thresholds, same class convention."""
    h = np.asarray(hist, dtype=float)
    total = h.sum()
    levels = np.arange(256)
    best_t, best_var = -1, -1.0
    for t in range(256):
        w0 = h[:t].sum()
        w1 = total - w0
        if w0 <= 0 or w1 <= 0:
            continue
        mu0 = (h[:t] * levels[:t]).sum() / w0
        mu1 = (h[t:] * levels[t:]).sum() / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var * (1 + 1e-12) + 1e-12:
            best_var, best_t = var, t
    if best_t < 0:
        return int(np.nonzero(h)[0][0])
    return best_t


class TestOtsu:
    def test_two_delta_spikes(self):
        h = np.zeros(256)
        h[10] = 40
        h[200] = 60
        t = bags.otsu_threshold(h)
        assert 10 < t <= 200

    def test_single_spike_degenerate(self):
        h = np.zeros(256)
        h[7] = 5
        assert bags.otsu_threshold(h) == 7

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError):
            bags.otsu_threshold(np.zeros(256))

    def test_matches_brute_force_on_random_histograms(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            h = rng.integers(0, 20, size=256).astype(float)
            if rng.random() < 0.3:  # sparse bimodal-ish histograms too
                h[:] = 0
                lo, hi = sorted(rng.integers(0, 256, size=2))
                h[lo] = rng.integers(1, 50)
                h[hi] = rng.integers(1, 50)
            if h.sum() == 0:
                continue
            assert bags.otsu_threshold(h) == brute_force_otsu(h)


class TestTimeBinning:
    def test_single_bin_empty_edges(self):
        assert len(bags.compute_bin_edges([1.0, 2.0, 3.0], 1)) == 0

    def test_quartile_edges_from_sorting(self):
        times = np.arange(1.0, 101.0)
        edges = bags.compute_bin_edges(times, 4)
        # sort-and-index: element at position i*n/4 for i = 1..3
        np.testing.assert_array_equal(edges, [26.0, 51.0, 76.0])

    def test_too_few_distinct_times(self):
        with pytest.raises(bags.BinningError):
            bags.compute_bin_edges([5.0, 5.0, 5.0, 9.0], 4)

    def test_collapsed_quantile_rejected(self):
        times = [1.0] + [5.0] * 10 + [9.0]
        with pytest.raises(bags.BinningError):
            bags.compute_bin_edges(times, 4)

    def test_assignment_conventions(self):
        edges = [26.0, 51.0, 76.0]
        assert bags.assign_time_bin(3.0, edges) == 0
        assert bags.assign_time_bin(26.0, edges) == 1  # boundary -> higher bin
        assert bags.assign_time_bin(200.0, edges) == 3

    @given(st.lists(st.floats(0, 500), min_size=2, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_assignment_monotone(self, months):
        edges = [10.0, 50.0, 120.0]
        months = sorted(months)
        binned = [bags.assign_time_bin(m, edges) for m in months]
        assert binned == sorted(binned)


class TestCohortIO:
    def _records(self, rng, n=4):
        schema = {g: [f"{g}_{i:04d}" for i in range(3)] for g in bags.GENOMIC_GROUPS}
        recs = []
        for i in range(n):
            genomic = bags.GenomicBag(
                values={g: rng.standard_normal(3) * np.array([1, 1, 0]) for g in bags.GENOMIC_GROUPS},
                mask={g: np.array([1.0, 1.0, 0.0]) for g in bags.GENOMIC_GROUPS},
                schema=schema,
            )
            recs.append(bags.PatientRecord(
                id=f"P{i:03d}", cancer_type="BRCA", meta=make_meta(),
                wsi=bags.WsiBag(rng.standard_normal((5, 6))), genomic=genomic,
                survival_months=float(10 + i), censored=bool(i % 2),
            ))
        return recs

    def test_roundtrip_inline(self, rng, tmp_path):
        recs = self._records(rng)
        path = tmp_path / "cohort.jsonl"
        bags.write_cohort(str(path), recs)
        back = bags.read_cohort(str(path))
        assert [r.id for r in back] == [r.id for r in recs]
        np.testing.assert_allclose(back[0].wsi.patch_features, recs[0].wsi.patch_features)
        np.testing.assert_allclose(back[2].genomic.values["TF"], recs[2].genomic.values["TF"])
        assert back[1].censored is True and back[0].censored is False

    def test_roundtrip_binary_sidecars(self, rng, tmp_path):
        recs = self._records(rng)
        path = tmp_path / "cohort.jsonl"
        bags.write_cohort(str(path), recs, binary_patches=True)
        assert (tmp_path / "cohort.jsonl.P000.patches.bin").exists()
        back = bags.read_cohort(str(path))
        np.testing.assert_array_equal(back[3].wsi.patch_features, recs[3].wsi.patch_features)

    def test_binary_matrix_header(self, rng, tmp_path):
        m = rng.standard_normal((3, 7))
        p = tmp_path / "m.bin"
        bags.write_patch_matrix(str(p), m)
        raw = p.read_bytes()
        assert len(raw) == 8 + 3 * 7 * 8
        assert int.from_bytes(raw[:4], "little") == 3
        assert int.from_bytes(raw[4:8], "little") == 7
        np.testing.assert_array_equal(bags.read_patch_matrix(str(p)), m)

    def test_wsi_bag_requires_patches(self):
        with pytest.raises(ValueError):
            bags.WsiBag(np.zeros((0, 4)))
