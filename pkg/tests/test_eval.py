"""Tests for correlation statistics, condition-level aggregation, the
linear OVRL fit, and the simulated-ratings study.

Pearson and Spearman coefficients are checked against independent
from-the-definition oracles written in plain loops, not against the
implementation's own helpers.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqa.dataset import OVRL_COEFFS, RatedClip, Manifest
from sqa.errors import DegenerateInput, RankDeficient, TooFewGroups
from sqa.evaluate import (
    CorrelationReport,
    RatingsStudyResult,
    ScorePair,
    aggregate_by_model,
    average_ranks,
    correlation_report,
    fit_ovrl_linear,
    pcc,
    ratings_study,
    srcc,
)


# --- independent oracles -------------------------------------------------

def naive_pcc(x, y):
    """Textbook Pearson r computed with explicit loops."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = math.sqrt(sum((a - mx) ** 2 for a in x))
    dy = math.sqrt(sum((b - my) ** 2 for b in y))
    return num / (dx * dy)


def naive_ranks(x):
    """Mean-of-positions ranks via sorting, O(n^2) but obviously right."""
    out = []
    for v in x:
        less = sum(1 for u in x if u < v)
        equal = sum(1 for u in x if u == v)
        # positions occupied by the tie group: less+1 .. less+equal
        out.append(less + (equal + 1) / 2.0)
    return out


def naive_srcc(x, y):
    return naive_pcc(naive_ranks(x), naive_ranks(y))


finite_floats = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


class TestPcc:
    def test_perfect_positive(self):
        assert pcc([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        assert pcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 40)
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            assert pcc(x, y) == pytest.approx(naive_pcc(list(x), list(y)),
                                              abs=1e-12)

    def test_zero_variance_raises(self):
        with pytest.raises(DegenerateInput):
            pcc([1, 1, 1], [1, 2, 3])

    def test_too_short_raises(self):
        with pytest.raises(DegenerateInput):
            pcc([1], [2])

    def test_mismatched_shapes_raise(self):
        with pytest.raises(DegenerateInput):
            pcc([1, 2], [1, 2, 3])

    @given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20),
           st.floats(0.01, 10), st.floats(-5, 5))
    def test_affine_invariance(self, x, scale, shift):
        rng = np.random.default_rng(len(x))
        y = rng.normal(size=len(x))
        try:
            base = pcc(x, y)
        except DegenerateInput:
            return
        assert pcc([scale * v + shift for v in x], y) == pytest.approx(
            base, abs=1e-9)

    @given(st.lists(finite_floats, min_size=3, max_size=20))
    def test_symmetry_and_bounds(self, x):
        rng = np.random.default_rng(len(x) + 1)
        y = list(rng.normal(size=len(x)))
        try:
            r = pcc(x, y)
        except DegenerateInput:
            return
        assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
        assert pcc(y, x) == pytest.approx(r, abs=1e-12)


class TestRanksAndSrcc:
    def test_no_ties(self):
        assert list(average_ranks([30, 10, 20])) == [3.0, 1.0, 2.0]

    def test_tie_gets_mean_rank(self):
        assert list(average_ranks([5, 5, 9])) == [1.5, 1.5, 3.0]

    def test_all_tied(self):
        assert list(average_ranks([7, 7, 7, 7])) == [2.5] * 4

    def test_known_value(self):
        # ranks of x: 1,2,3; ranks of y: 3,1,2 -> r = -0.5
        assert srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-12)

    def test_against_naive_oracle_with_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(3, 30))
            # coarse quantization forces plenty of ties
            x = list(np.round(rng.normal(size=n), 0))
            y = list(np.round(rng.normal(size=n), 0))
            try:
                got = srcc(x, y)
            except DegenerateInput:
                continue
            assert got == pytest.approx(naive_srcc(x, y), abs=1e-12)

    def test_constant_input_raises(self):
        with pytest.raises(DegenerateInput):
            srcc([2, 2, 2], [1, 2, 3])

    @given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=15,
                    unique=True))
    def test_monotone_transform_invariance(self, x):
        rng = np.random.default_rng(len(x) + 2)
        y = list(rng.normal(size=len(x)))
        base = srcc(x, y)
        warped = [math.exp(v / 500.0) for v in x]  # strictly increasing map
        assert srcc(warped, y) == pytest.approx(base, abs=1e-9)

    @given(st.lists(finite_floats, min_size=3, max_size=15, unique=True))
    def test_permutation_consistency(self, x):
        rng = np.random.default_rng(len(x) + 3)
        y = list(rng.normal(size=len(x)))
        perm = rng.permutation(len(x))
        xp = [x[i] for i in perm]
        yp = [y[i] for i in perm]
        assert srcc(xp, yp) == pytest.approx(srcc(x, y), abs=1e-9)


def _pair(cid, mid, human, pred):
    return ScorePair(clip_id=cid, model_id=mid, human=human, predicted=pred)


class TestAggregation:
    def test_means_per_model(self):
        pairs = [
            _pair("a", "m1", (1, 2, 3), (2, 3, 4)),
            _pair("b", "m1", (3, 4, 5), (4, 5, 2)),
            _pair("c", "m2", (2, 2, 2), (3, 3, 3)),
        ]
        groups = aggregate_by_model(pairs)
        assert groups["m1"][0] == pytest.approx((2.0, 3.0, 4.0))
        assert groups["m1"][1] == pytest.approx((3.0, 4.0, 3.0))
        assert groups["m2"][0] == pytest.approx((2.0, 2.0, 2.0))

    def test_single_group_raises(self):
        pairs = [_pair("a", "m1", (1, 2, 3), (1, 2, 3)),
                 _pair("b", "m1", (2, 3, 4), (2, 3, 4))]
        with pytest.raises(TooFewGroups):
            aggregate_by_model(pairs)


def _identity_pairs(n_models=4, per_model=5, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for m in range(n_models):
        for j in range(per_model):
            h = tuple(rng.uniform(1, 5, size=3))
            pairs.append(_pair(f"c{m}_{j}", f"m{m}", h, h))
    return pairs


class TestCorrelationReport:
    def test_identity_predictions_are_perfect(self):
        rep = correlation_report(_identity_pairs())
        for level in ("model", "clip"):
            for stat in ("pcc", "srcc"):
                for head in ("sig", "bak", "ovrl"):
                    assert rep.get(level, stat, head) == pytest.approx(
                        1.0, abs=1e-9)
        assert rep.n_clips == 20 and rep.n_models == 4

    def test_reversed_predictions_are_negative(self):
        pairs = [
            _pair(p.clip_id, p.model_id, p.human,
                  tuple(6.0 - v for v in p.human))
            for p in _identity_pairs()
        ]
        rep = correlation_report(pairs)
        assert rep.get("clip", "pcc", "sig") == pytest.approx(-1.0, abs=1e-9)
        assert rep.get("clip", "srcc", "ovrl") == pytest.approx(-1.0, abs=1e-9)

    def test_degenerate_cells_flagged_not_nan(self):
        pairs = [
            _pair("a", "m1", (3, 3, 3), (1, 2, 3)),
            _pair("b", "m1", (3, 3, 3), (2, 3, 4)),
            _pair("c", "m2", (3, 3, 3), (3, 1, 2)),
        ]
        rep = correlation_report(pairs)
        assert rep.get("clip", "pcc", "sig") is None
        assert ("clip", "pcc", "sig") in rep.notes
        for v in rep.cells.values():
            assert v is None or math.isfinite(v)

    def test_single_model_flags_model_level(self):
        pairs = [_pair(f"c{i}", "m0", (1.0 + i, 2.0, 3.0), (1.0 + i, 2.0, 3.0))
                 for i in range(4)]
        rep = correlation_report(pairs)
        assert rep.get("model", "pcc", "sig") is None
        assert rep.get("clip", "pcc", "sig") == pytest.approx(1.0)

    def test_serializations(self):
        rep = correlation_report(_identity_pairs())
        d = json.loads(rep.to_json())
        assert d["n_clips"] == 20
        assert d["coefficients"]["clip_pcc"]["sig"] == pytest.approx(1.0)
        csv_text = rep.to_csv()
        assert csv_text.splitlines()[0] == "level,stat,sig,bak,ovrl"
        assert len(csv_text.splitlines()) == 5
        table = rep.to_table()
        assert "Model PCC" in table and "Clip SRCC" in table


class TestOvrlFit:
    def test_exact_recovery(self):
        rng = np.random.default_rng(3)
        sig = rng.uniform(1, 5, 200)
        bak = rng.uniform(1, 5, 200)
        a, b, c = OVRL_COEFFS
        ovrl = a * sig + b * bak + c  # unclamped: exact linear data
        (fa, fb, fc), r2 = fit_ovrl_linear(sig, bak, ovrl)
        assert fa == pytest.approx(a, abs=1e-9)
        assert fb == pytest.approx(b, abs=1e-9)
        assert fc == pytest.approx(c, abs=1e-9)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_against_normal_equations(self):
        rng = np.random.default_rng(4)
        sig = rng.uniform(1, 5, 60)
        bak = rng.uniform(1, 5, 60)
        ovrl = 0.4 * sig + 0.3 * bak + 1.0 + rng.normal(0, 0.2, 60)
        (fa, fb, fc), _ = fit_ovrl_linear(sig, bak, ovrl)
        X = np.column_stack([sig, bak, np.ones(60)])
        beta = np.linalg.solve(X.T @ X, X.T @ ovrl)
        assert (fa, fb, fc) == pytest.approx(tuple(beta), abs=1e-9)

    def test_r_squared_drops_with_noise(self):
        rng = np.random.default_rng(5)
        sig = rng.uniform(1, 5, 300)
        bak = rng.uniform(1, 5, 300)
        ovrl = 0.5 * sig + 0.4 * bak + 0.1 + rng.normal(0, 0.5, 300)
        _, r2 = fit_ovrl_linear(sig, bak, ovrl)
        assert 0.3 < r2 < 0.99

    def test_rank_deficient_raises(self):
        sig = np.array([1.0, 2.0, 3.0, 4.0])
        with pytest.raises(RankDeficient):
            fit_ovrl_linear(sig, 2 * sig, sig)  # bak collinear with sig
        with pytest.raises(RankDeficient):
            fit_ovrl_linear([1, 2], [3, 4], [5, 6])  # too few points


def _study_manifest(n=40, seed=0):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        sig = float(rng.uniform(1, 5))
        bak = float(rng.uniform(1, 5))
        ovrl = float(np.clip(0.5 * sig + 0.4 * bak + 0.1, 1, 5))
        clips.append(RatedClip(clip_id=f"c{i}", clip_path=f"/x/c{i}.wav",
                               model_id=f"m{i % 4}", mos_sig=sig,
                               mos_bak=bak, mos_ovrl=ovrl))
    return Manifest(clips=tuple(clips))


class TestRatingsStudy:
    def test_more_raters_correlate_better(self):
        res = ratings_study(_study_manifest(), n_list=[5, 30],
                            noise_sd=1.0, trials=8, seed=0)
        assert isinstance(res, RatingsStudyResult)
        for head in ("sig", "bak", "ovrl"):
            m5 = res.per_n[5]["pcc_vs_truth"][head][0]
            m30 = res.per_n[30]["pcc_vs_truth"][head][0]
            assert m30 > m5

    def test_run_to_run_below_vs_truth_consistency(self):
        res = ratings_study(_study_manifest(), n_list=[5], noise_sd=1.0,
                            trials=8, seed=1)
        stats = res.per_n[5]
        for head in ("sig", "bak", "ovrl"):
            assert 0.0 < stats["run_to_run_pcc"][head][0] < 1.0
            assert stats["run_to_run_pcc"][head][1] >= 0.0  # sd

    def test_deterministic_per_seed(self):
        m = _study_manifest()
        a = ratings_study(m, [5], trials=3, seed=7)
        b = ratings_study(m, [5], trials=3, seed=7)
        assert a.per_n == b.per_n

    def test_validation(self):
        with pytest.raises(ValueError):
            ratings_study(_study_manifest(), n_list=[])
        with pytest.raises(ValueError):
            ratings_study(_study_manifest(), n_list=[5], trials=0)
