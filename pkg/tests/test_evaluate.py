import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logit

from zilm.domain import (
    Attempt,
    ContentType,
    DataError,
    Dataset,
    Delivery,
    Item,
    NdcProfile,
    Outcome,
    ResponseType,
    Split,
    StudentProfile,
    Subject,
)
from zilm.evaluate import (
    HypothesisTestResult,
    classification_metrics,
    contrast_analysis,
    correlation,
    forced_delivery_experiment,
    ndc_hypothesis_test,
    policy_experiment,
    recovery_report,
    swap_student_ndc,
)
from zilm.fit import FitConfig, FittedModel, ModelKind, TrainingTrace, fit
from zilm.models import KTM_CONTEXT_FEATURE_COUNT, PI_FEATURE_COUNT, Ktm1Params, ZilmParams
from zilm.simulate import SimConfig


def plain_item(i, **overrides):
    base = dict(
        id=i, difficulty=0.0, discrimination=1.0, guessing=0.0,
        subject=Subject.MATHS, content=ContentType.BOTH, density=0.5,
        delivery=Delivery.READ, response=ResponseType.WRITTEN,
    )
    base.update(overrides)
    return Item(**base)


def two_by_two(outcomes):
    """2 students x 2 items, one train and one test attempt each."""
    students = [StudentProfile(0, 1.0, NdcProfile()), StudentProfile(1, -1.0, NdcProfile())]
    items = [plain_item(0), plain_item(1)]
    attempts = [
        Attempt(0, 0, outcomes[0], split=Split.TRAIN),
        Attempt(0, 1, outcomes[1], split=Split.TEST),
        Attempt(1, 0, outcomes[2], split=Split.TRAIN),
        Attempt(1, 1, outcomes[3], split=Split.TEST),
    ]
    return Dataset(students=students, items=items, attempts=attempts)


def ktm_model(user, bias=0.0, n_items=2):
    params = Ktm1Params(
        user_weights=np.asarray(user, dtype=float),
        item_weights=np.zeros(n_items),
        context_weights=np.zeros(KTM_CONTEXT_FEATURE_COUNT),
        bias=bias,
    )
    return FittedModel(kind=ModelKind.KTM1, n_students=len(user), n_items=n_items,
                       params=params, trace=TrainingTrace([1.0], 1, True),
                       fit_config=FitConfig())


C, I, N = Outcome.CORRECT, Outcome.INCORRECT, Outcome.NOT_ANSWERED


class TestClassificationMetrics:
    def test_constant_half_on_balanced_labels(self):
        ds = two_by_two([C, C, I, N])  # balanced: two successes, two zeros
        model = ktm_model([0.0, 0.0])
        rep = classification_metrics(model, ds, split="all")
        assert rep.accuracy == 0.5  # ties classify as success
        assert rep.brier == pytest.approx(0.25)
        assert rep.nll == pytest.approx(math.log(2.0), abs=1e-12)
        assert rep.f1 == pytest.approx(2 / 3)  # all-positive predictions, half right

    def test_perfect_predictor(self):
        ds = two_by_two([C, C, I, N])
        model = ktm_model([800.0, -800.0])  # probabilities exactly 1 and 0
        rep = classification_metrics(model, ds, split="all")
        assert rep.accuracy == 1.0 and rep.f1 == 1.0 and rep.brier == 0.0

    def test_brier_hand_value(self):
        ds = two_by_two([C, C, I, I])
        model = ktm_model([float(logit(0.9)), float(logit(0.2))])
        rep = classification_metrics(model, ds, split="all")
        # predictions (0.9, 0.9, 0.2, 0.2) vs labels (1, 1, 0, 0)
        assert rep.brier == pytest.approx((2 * 0.01 + 2 * 0.04) / 4, abs=1e-12)

    def test_empty_split_rejected(self):
        ds = two_by_two([C, C, I, N])
        train_only = Dataset(ds.students, ds.items,
                             [Attempt(a.student_id, a.item_id, a.outcome, split=Split.TRAIN)
                              for a in ds.attempts])
        with pytest.raises(DataError, match="no attempts"):
            classification_metrics(ktm_model([0, 0]), train_only, split="test")


class TestCorrelation:
    def test_identity_is_one(self):
        assert correlation([1.0, 2.0, 5.0], [1.0, 2.0, 5.0], "pearson") == pytest.approx(1.0)
        assert correlation([1.0, 2.0, 5.0], [1.0, 2.0, 5.0], "spearman") == pytest.approx(1.0)

    def test_negation_is_minus_one(self):
        xs = [0.3, 1.7, -2.0, 0.0]
        assert correlation(xs, [-x for x in xs], "pearson") == pytest.approx(-1.0)
        assert correlation(xs, [-x for x in xs], "spearman") == pytest.approx(-1.0)

    def test_monotone_nonlinear_hand_values(self):
        xs, ys = [1.0, 2.0, 3.0], [1.0, 4.0, 9.0]
        assert correlation(xs, ys, "spearman") == pytest.approx(1.0)
        # hand computation: r = 8 / sqrt(2 * 98/3) = 4 * sqrt(3) / 7
        assert correlation(xs, ys, "pearson") == pytest.approx(4 * math.sqrt(3) / 7, abs=1e-12)
        assert 4 * math.sqrt(3) / 7 == pytest.approx(0.9897, abs=5e-5)

    def test_tied_ranks_averaged(self):
        # ranks of xs: (1.5, 1.5, 3); hand-computed spearman vs ys ranks (1, 2, 3)
        r = correlation([4.0, 4.0, 9.0], [1.0, 2.0, 3.0], "spearman")
        assert r == pytest.approx(math.sqrt(3) / 2, abs=1e-12)

    def test_constant_input_is_an_error(self):
        with pytest.raises(DataError, match="constant"):
            correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], "pearson")
        with pytest.raises(DataError, match="constant"):
            correlation([2.0, 2.0, 2.0], [1.0, 2.0, 3.0], "spearman")

    def test_short_or_mismatched_inputs_rejected(self):
        with pytest.raises(DataError, match="at least 3"):
            correlation([1.0, 2.0], [3.0, 4.0])
        with pytest.raises(DataError, match="equal-length"):
            correlation([1.0, 2.0, 3.0], [1.0, 2.0])

    @settings(max_examples=60, deadline=None)
    @given(
        # integer-spaced values keep the affine image exactly representable,
        # so the mathematical invariance is not confounded by float collapse
        xs=st.lists(st.integers(-1000, 1000), min_size=4, max_size=12, unique=True),
        scale=st.floats(0.1, 10.0),
        shift=st.floats(-50.0, 50.0),
        kind=st.sampled_from(["pearson", "spearman"]),
    )
    def test_positive_affine_invariance(self, xs, scale, shift, kind):
        xs = [float(x) for x in xs]
        ys = list(reversed(sorted(xs)))
        base = correlation(xs, ys, kind)
        mapped = correlation([scale * x + shift for x in xs], ys, kind)
        assert mapped == pytest.approx(base, abs=1e-12)


class TestRecovery:
    def test_exact_estimates_give_unit_correlations(self, small_dataset):
        truth_theta = np.array([s.ability for s in small_dataset.students])
        truth_b = np.array([it.difficulty for it in small_dataset.items])
        truth_a = np.array([it.discrimination for it in small_dataset.items])
        params = ZilmParams(
            theta=truth_theta.copy(),
            b=truth_b.copy(),
            a_raw=np.log(np.expm1(truth_a)),  # softplus inverse
            g_raw=np.zeros(len(truth_b)),
            w_pi=np.zeros(PI_FEATURE_COUNT),
        )
        model = FittedModel(ModelKind.IRT_ZILM, len(truth_theta), len(truth_b),
                            params, TrainingTrace([1.0], 1, True), FitConfig())
        rep = recovery_report(model, small_dataset)
        assert rep.ability_pearson == pytest.approx(1.0, abs=1e-12)
        assert rep.ability_spearman == pytest.approx(1.0, abs=1e-12)
        assert rep.difficulty_pearson == pytest.approx(1.0, abs=1e-12)
        assert rep.discrimination_pearson == pytest.approx(1.0, abs=1e-9)
        for bias in rep.ability_bias.values():
            if not math.isnan(bias):
                assert abs(bias) < 1e-9

    def test_positive_affine_estimates_align_away(self, small_dataset):
        truth_theta = np.array([s.ability for s in small_dataset.students])
        truth_b = np.array([it.difficulty for it in small_dataset.items])
        truth_a = np.array([it.discrimination for it in small_dataset.items])
        params = ZilmParams(
            theta=2.0 * truth_theta + 3.0,
            b=0.5 * truth_b - 1.0,
            a_raw=np.log(np.expm1(truth_a)),
            g_raw=np.zeros(len(truth_b)),
            w_pi=np.zeros(PI_FEATURE_COUNT),
        )
        model = FittedModel(ModelKind.IRT_ZILM, len(truth_theta), len(truth_b),
                            params, TrainingTrace([1.0], 1, True), FitConfig())
        rep = recovery_report(model, small_dataset)
        assert rep.ability_pearson == pytest.approx(1.0, abs=1e-12)
        assert rep.ability_spearman == pytest.approx(1.0, abs=1e-12)
        assert rep.difficulty_pearson == pytest.approx(1.0, abs=1e-12)
        for bias in rep.ability_bias.values():
            if not math.isnan(bias):
                assert abs(bias) < 1e-9

    def test_ktm_reports_ability_and_difficulty_only(self, small_dataset):
        model = fit(small_dataset, ModelKind.KTM1, FitConfig(max_iters=30))
        rep = recovery_report(model, small_dataset)
        assert math.isnan(rep.discrimination_pearson)
        assert not math.isnan(rep.ability_pearson)
        assert not math.isnan(rep.difficulty_pearson)


class TestContrast:
    def test_null_partition_sits_at_noise_level(self, default_dataset):
        rep = contrast_analysis(default_dataset, "alternate-attempts")
        for group, cats in rep.group_means.items():
            # comorbidity cells of a few dozen students have a standard error
            # near the band itself; the noise-level claim applies to groups
            # where student-level noise is well inside it
            if rep.group_sizes[group] < 100:
                continue
            for category, value in cats.items():
                assert abs(value) <= 0.03, (group, category, value)

    def test_one_sided_students_are_excluded_and_counted(self):
        students = [StudentProfile(0, 0.0, NdcProfile()), StudentProfile(1, 0.0, NdcProfile())]
        items = [plain_item(0, subject=Subject.MATHS),
                 plain_item(1, subject=Subject.ENGLISH, content=ContentType.LETTER),
                 plain_item(2, subject=Subject.MATHS)]
        attempts = [
            Attempt(0, 0, C), Attempt(0, 1, I),   # both sides
            Attempt(1, 0, C), Attempt(1, 2, C),   # maths only
        ]
        ds = Dataset(students, items, attempts)
        rep = contrast_analysis(ds, "maths-english")
        assert rep.group_sizes["nt"] == 1
        assert rep.excluded["nt"] == 1
        assert rep.group_means["nt"]["correct"] == pytest.approx(1.0 - 0.0)

    def test_unknown_partition_rejected(self, small_dataset):
        with pytest.raises(DataError, match="unknown contrast partition"):
            contrast_analysis(small_dataset, "fast-slow")


class TestDeliveryExperiment:
    def test_nt_rows_are_delivery_invariant(self, default_delivery_report):
        rows = default_delivery_report.rates["nt"]
        assert rows["read"] == rows["listen"] == rows["both"]

    def test_attempted_rate_complements_not_answered(self):
        cfg = SimConfig(n_students=300, n_items=60, seed=21)
        rep = forced_delivery_experiment(cfg)
        for group in rep.rates:
            for cell in rep.rates[group].values():
                assert 0.0 <= cell["correct_rate"] <= cell["attempted_rate"] <= 1.0


class TestPolicies:
    def test_random_policy_reproduces_dataset(self, default_policy_reports):
        rep = default_policy_reports["random"]
        for g, ratio in rep.ratio.items():
            if not math.isnan(ratio):
                assert ratio == 1.0

    def test_active_never_below_baseline_pointwise(self, default_policy_reports):
        rep = default_policy_reports["oracle-active"]
        for g in rep.baseline_rates:
            if not math.isnan(rep.baseline_rates[g]):
                assert rep.policy_rates[g] >= rep.baseline_rates[g]

    def test_adversarial_never_above_baseline(self, default_policy_reports):
        rep = default_policy_reports["oracle-adversarial"]
        for g in rep.baseline_rates:
            if not math.isnan(rep.baseline_rates[g]):
                assert rep.policy_rates[g] <= rep.baseline_rates[g]

    def test_adversarial_collapses_two_condition_success(self, default_policy_reports):
        # students carrying two conditions lose almost everything under
        # adversarial context selection
        rep = default_policy_reports["oracle-adversarial"]
        assert rep.ratio[2] < 0.25

    def test_model_policy_requires_zilm(self):
        cfg = SimConfig(n_students=20, n_items=25, seed=2)
        with pytest.raises(DataError, match="requires a fitted zero-inflated model"):
            policy_experiment(cfg, "model-active", model=None)

    def test_unknown_policy_rejected(self):
        with pytest.raises(DataError, match="unknown policy"):
            policy_experiment(SimConfig(n_students=5, n_items=25), "greedy")


class TestProperScores:
    def test_true_probability_predictor_beats_constants(self, default_dataset):
        y = np.array([1.0 if a.outcome is C else 0.0 for a in default_dataset.attempts])
        q = np.array([(1.0 - a.true_pi) * a.true_p for a in default_dataset.attempts])

        def nll(p):
            p = np.clip(p, 1e-12, 1 - 1e-12)
            return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))

        def brier(p):
            return float(np.mean((p - y) ** 2))

        for const in (0.1, 0.3, float(y.mean()), 0.5, 0.7, 0.9):
            c = np.full_like(y, const)
            assert nll(q) <= nll(c)
            assert brier(q) <= brier(c)


@pytest.fixture(scope="module")
def fitted_small(small_dataset, small_design):
    model = fit(small_dataset, ModelKind.IRT_ZILM, FitConfig(), design=small_design)
    return small_dataset, small_design, model


class TestHypothesisProbe:
    def test_degenerate_alternative_is_exactly_zero(self, fitted_small):
        ds, design, model = fitted_small
        sid = next(s.id for s in ds.students if s.ndc.dyslexia)
        res = ndc_hypothesis_test(ds, sid, ds.students[sid].ndc, FitConfig(),
                                  null_model=model, design=design)
        assert res.statistic == 0.0
        assert res.null_nll == res.alt_nll

    def test_swap_changes_flags_not_attempts(self, small_dataset):
        swapped = swap_student_ndc(small_dataset, 3, NdcProfile(spd=True))
        assert swapped.students[3].ndc == NdcProfile(spd=True)
        assert swapped.students[2] == small_dataset.students[2]
        assert swapped.attempts == small_dataset.attempts

    def test_statistic_sign_convention(self, fitted_small):
        # a mislabeled dyslexic student: the alternative should win (stat > 0)
        ds, design, model = fitted_small
        sid = next(s.id for s in ds.students
                   if s.ndc.dyslexia and s.ndc.count() == 1)
        mislabeled = swap_student_ndc(ds, sid, NdcProfile())
        res = ndc_hypothesis_test(mislabeled, sid, NdcProfile(dyslexia=True), FitConfig())
        assert isinstance(res, HypothesisTestResult)
        assert res.statistic == pytest.approx(2.0 * (res.null_nll - res.alt_nll), abs=1e-12)

    def test_bad_student_id(self, small_dataset):
        with pytest.raises(IndexError):
            ndc_hypothesis_test(small_dataset, 10_000, NdcProfile(), FitConfig())
