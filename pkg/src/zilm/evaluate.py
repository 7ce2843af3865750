"""Experiments and metrics: predictive quality, parameter recovery,
forced-delivery outcome matrices, context contrasts, selection policies, and
the condition-mislabeling likelihood-ratio probe.

Every function here is a pure function of (model, dataset, config); reports
carry plain dicts/lists and serialize to both JSON and plot-ready CSV rows.
"""

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .domain import (
    DataError,
    Dataset,
    Delivery,
    NdcProfile,
)
from .fit import (
    FitConfig,
    FittedModel,
    ModelKind,
    _check_compatible,
    fit,
    predict_attempt_probs,
)
from .models import Design, build_design, pi_features, softplus
from .rng import RandomSource
from .simulate import (
    DELIVERY_CODE,
    RESPONSE_CODE,
    SimConfig,
    context_pi,
    item_arrays,
    plan_attempts,
    realize_outcomes,
    sample_items,
    sample_students,
    student_arrays,
    success_p,
)

OUTCOME_CATEGORIES = ("correct", "incorrect", "not_answered")


# ---------------------------------------------------------------------------
# correlation

def correlation(xs, ys, kind: str = "pearson") -> float:
    """Pearson or Spearman correlation; Spearman is Pearson on average ranks."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DataError(f"correlation inputs must be equal-length vectors, got {xs.shape} and {ys.shape}")
    if len(xs) < 3:
        raise DataError(f"correlation needs at least 3 points, got {len(xs)}")
    if kind not in ("pearson", "spearman"):
        raise DataError(f"unknown correlation kind {kind!r} (use 'pearson' or 'spearman')")
    if kind == "spearman":
        xs = rankdata(xs)  # ties averaged
        ys = rankdata(ys)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DataError("correlation undefined for constant input")
    return float(np.sum(dx * dy) / (sx * sy))


# ---------------------------------------------------------------------------
# predictive metrics

@dataclass(frozen=True)
class MetricsReport:
    model_kind: str
    split: str
    n_attempts: int
    accuracy: float
    f1: float
    nll: float
    brier: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def csv_rows(self):
        fields = ("model_kind", "split", "n_attempts", "accuracy", "f1", "nll", "brier")
        return fields, [{f: getattr(self, f) for f in fields}]


def classification_metrics(model: FittedModel, dataset, split: str = "test",
                           design: Design = None) -> MetricsReport:
    """Threshold-0.5 accuracy (ties classify as success), positive-class F1,
    mean unpenalized NLL, and Brier score on one split."""
    if design is None:
        design = build_design(dataset)
    _check_compatible(model, design)
    mask = design.split_mask(split)
    y = design.y[mask]
    phat = predict_attempt_probs(model, design, mask)
    pred = phat >= 0.5
    acc = float((pred == (y == 1)).mean())
    tp = float(np.sum(pred & (y == 1)))
    fp = float(np.sum(pred & (y == 0)))
    fn = float(np.sum(~pred & (y == 1)))
    f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2.0 * tp + fp + fn) > 0 else 0.0
    pc = np.clip(phat, 1e-12, 1.0 - 1e-12)
    nll = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))
    brier = float(np.mean((phat - y) ** 2))
    return MetricsReport(model_kind=model.kind.value, split=split, n_attempts=int(mask.sum()),
                         accuracy=acc, f1=f1, nll=nll, brier=brier)


# ---------------------------------------------------------------------------
# parameter recovery

@dataclass(frozen=True)
class RecoveryReport:
    model_kind: str
    ability_pearson: float
    ability_spearman: float
    difficulty_pearson: float
    difficulty_spearman: float
    discrimination_pearson: float  # nan for the KTM baseline
    discrimination_spearman: float
    ability_bias: dict  # ndc_count -> mean aligned residual
    group_sizes: dict

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ability_bias"] = {str(k): v for k, v in self.ability_bias.items()}
        d["group_sizes"] = {str(k): v for k, v in self.group_sizes.items()}
        return d

    def csv_rows(self):
        fields = ("kind", "name", "value")
        rows = []
        for par in ("ability", "difficulty", "discrimination"):
            for corr in ("pearson", "spearman"):
                rows.append({"kind": "correlation", "name": f"{par}_{corr}",
                             "value": getattr(self, f"{par}_{corr}")})
        for g, v in sorted(self.ability_bias.items()):
            rows.append({"kind": "ability_bias", "name": f"ndc_count_{g}", "value": v})
        return fields, rows


def _affine_align(estimate, truth):
    """Least-squares affine map of the estimate onto the truth, over everyone."""
    a = np.vstack([estimate, np.ones_like(estimate)]).T
    coef, *_ = np.linalg.lstsq(a, truth, rcond=None)
    return a @ coef


def recovery_report(model: FittedModel, dataset: Dataset) -> RecoveryReport:
    """Correlate fitted parameters against the simulator's ground truth.

    Ability bias per group is the mean of (aligned estimate - truth), with a
    single affine alignment fitted over all students, so a globally shifted
    or scaled solution shows no bias while a per-group distortion does.
    """
    _check_compatible(model, dataset)
    truth_theta = np.array([s.ability for s in dataset.students])
    truth_b = np.array([it.difficulty for it in dataset.items])
    truth_a = np.array([it.discrimination for it in dataset.items])
    if model.kind is ModelKind.KTM1:
        est_theta = model.params.user_weights
        est_b = -model.params.item_weights  # larger item weight = easier item
        est_a = None
    else:
        est_theta = model.params.theta
        est_b = model.params.b
        est_a = softplus(model.params.a_raw)

    report = {
        "ability_pearson": correlation(truth_theta, est_theta, "pearson"),
        "ability_spearman": correlation(truth_theta, est_theta, "spearman"),
        "difficulty_pearson": correlation(truth_b, est_b, "pearson"),
        "difficulty_spearman": correlation(truth_b, est_b, "spearman"),
        "discrimination_pearson": float("nan"),
        "discrimination_spearman": float("nan"),
    }
    if est_a is not None:
        report["discrimination_pearson"] = correlation(truth_a, est_a, "pearson")
        report["discrimination_spearman"] = correlation(truth_a, est_a, "spearman")

    aligned = _affine_align(np.asarray(est_theta, dtype=float), truth_theta)
    resid = aligned - truth_theta
    counts = np.array([s.ndc.count() for s in dataset.students])
    bias = {}
    sizes = {}
    for g in range(4):
        m = counts == g
        sizes[g] = int(m.sum())
        bias[g] = float(resid[m].mean()) if m.any() else float("nan")
    return RecoveryReport(model_kind=model.kind.value, ability_bias=bias,
                          group_sizes=sizes, **report)


# ---------------------------------------------------------------------------
# forced-delivery experiment

DELIVERY_GROUPS = ("nt", "dyslexia", "dyscalculia", "spd", "all")


@dataclass(frozen=True)
class DeliveryReport:
    """Correct and attempted rates per group when one delivery is forced.

    Condition groups are exclusive (students carrying exactly that one
    condition) so comorbidity does not blur single-condition effects; "all"
    is the whole population.
    """

    rates: dict  # group -> delivery -> {"correct_rate", "attempted_rate"}
    group_sizes: dict

    def to_dict(self) -> dict:
        return {"rates": self.rates, "group_sizes": self.group_sizes}

    def csv_rows(self):
        fields = ("group", "delivery", "correct_rate", "attempted_rate")
        rows = []
        for group in DELIVERY_GROUPS:
            for delivery in ("read", "listen", "both"):
                cell = self.rates[group][delivery]
                rows.append({"group": group, "delivery": delivery,
                             "correct_rate": cell["correct_rate"],
                             "attempted_rate": cell["attempted_rate"]})
        return fields, rows


def _resimulate_base(cfg: SimConfig):
    cfg.ensure_valid()
    rs = RandomSource(cfg.seed)
    students = sample_students(cfg, rs)
    items = sample_items(cfg, rs)
    plan = plan_attempts(cfg)
    ability, flags = student_arrays(students)
    arrays = item_arrays(items)
    p = success_p(ability[plan.student_idx], arrays.difficulty[plan.item_idx],
                  arrays.discrimination[plan.item_idx], arrays.guessing[plan.item_idx])
    return students, items, plan, flags, arrays, p


def forced_delivery_experiment(cfg: SimConfig) -> DeliveryReport:
    """Re-simulate the same population once per forced delivery type.

    The plan (item assignments, outcome uniforms, splits) is identical across
    the three runs, so differences are purely delivery-driven.
    """
    students, items, plan, flags, arrays, p = _resimulate_base(cfg)
    ii = plan.item_idx
    si = plan.student_idx
    counts = flags.sum(axis=1)
    group_masks = {
        "nt": counts == 0,
        "dyslexia": (flags[:, 0] == 1) & (counts == 1),
        "dyscalculia": (flags[:, 1] == 1) & (counts == 1),
        "spd": (flags[:, 2] == 1) & (counts == 1),
        "all": np.ones(len(students), dtype=bool),
    }
    rates = {g: {} for g in DELIVERY_GROUPS}
    for delivery in (Delivery.READ, Delivery.LISTEN, Delivery.BOTH):
        code = DELIVERY_CODE[delivery]
        pi = context_pi(flags[si], arrays.content[ii], arrays.density[ii],
                        np.full(len(ii), code), arrays.response[ii], cfg.lqf)
        outcome = realize_outcomes(plan, pi, p)
        for g, mask in group_masks.items():
            m = mask[si]
            rates[g][delivery.value] = {
                "correct_rate": float((outcome[m] == 0).mean()) if m.any() else float("nan"),
                "attempted_rate": float((outcome[m] != 2).mean()) if m.any() else float("nan"),
            }
    sizes = {g: int(mask.sum()) for g, mask in group_masks.items()}
    return DeliveryReport(rates=rates, group_sizes=sizes)


# ---------------------------------------------------------------------------
# contrast analysis

#: "alternate-attempts" is a null control: each student's attempts alternate
#: sides, so the two sides are identically distributed and every group's mean
#: differences should sit at sampling noise.
CONTRAST_PARTITIONS = ("maths-english", "read-listen", "both-read", "alternate-attempts")


@dataclass(frozen=True)
class ContrastReport:
    """Per-student outcome-rate differences between two contexts, aggregated
    by exact condition combination."""

    partition: str
    side_a: str
    side_b: str
    group_means: dict  # group label -> category -> mean per-student difference
    group_sizes: dict  # students contributing (attempts on both sides)
    excluded: dict     # students with a side missing, per group

    def to_dict(self) -> dict:
        return dict(partition=self.partition, side_a=self.side_a, side_b=self.side_b,
                    group_means=self.group_means, group_sizes=self.group_sizes,
                    excluded=self.excluded)

    def csv_rows(self):
        fields = ("group", "category", "mean_difference", "n_students", "n_excluded")
        rows = []
        for group, cats in self.group_means.items():
            for category in OUTCOME_CATEGORIES:
                rows.append({"group": group, "category": category,
                             "mean_difference": cats[category],
                             "n_students": self.group_sizes[group],
                             "n_excluded": self.excluded[group]})
        return fields, rows


def _within_student_positions(student_idx):
    n = len(student_idx)
    order = np.argsort(student_idx, kind="stable")
    sorted_si = student_idx[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_si)) + 1])
    counts = np.diff(np.concatenate([starts, [n]]))
    pos = np.empty(n, dtype=int)
    pos[order] = np.arange(n) - np.repeat(starts, counts)
    return pos


def _partition_masks(partition: str, arrays, item_idx, student_idx):
    deliv = arrays.delivery[item_idx]
    subj = arrays.subject[item_idx]
    if partition == "maths-english":
        return subj == 0, subj == 1, "maths", "english"
    if partition == "read-listen":
        return (deliv == DELIVERY_CODE[Delivery.READ],
                deliv == DELIVERY_CODE[Delivery.LISTEN], "read", "listen")
    if partition == "both-read":
        return (deliv == DELIVERY_CODE[Delivery.BOTH],
                deliv == DELIVERY_CODE[Delivery.READ], "both", "read")
    if partition == "alternate-attempts":
        pos = _within_student_positions(student_idx)
        return pos % 2 == 0, pos % 2 == 1, "even_attempts", "odd_attempts"
    raise DataError(f"unknown contrast partition {partition!r} (choose from {CONTRAST_PARTITIONS})")


def contrast_analysis(dataset: Dataset, partition: str) -> ContrastReport:
    """rate(A) - rate(B) per outcome category and student; group means by
    exact NDC combination.  Students lacking attempts on a side are excluded
    from the mean and counted in the report."""
    _, flags = student_arrays(dataset.students)
    arrays = item_arrays(dataset.items)
    n_students = len(dataset.students)
    si = np.array([a.student_id for a in dataset.attempts])
    ii = np.array([a.item_id for a in dataset.attempts])
    outcome = np.array([OUTCOME_CATEGORIES.index(a.outcome.value) for a in dataset.attempts])

    mask_a, mask_b, name_a, name_b = _partition_masks(partition, arrays, ii, si)

    def side_rates(side):
        totals = np.bincount(si[side], minlength=n_students).astype(float)
        rates = np.full((n_students, 3), np.nan)
        with np.errstate(invalid="ignore"):
            for c in range(3):
                hits = np.bincount(si[side & (outcome == c)], minlength=n_students)
                rates[:, c] = np.where(totals > 0, hits / np.maximum(totals, 1), np.nan)
        return rates, totals > 0

    rates_a, has_a = side_rates(mask_a)
    rates_b, has_b = side_rates(mask_b)
    both = has_a & has_b
    diffs = rates_a - rates_b

    labels = np.array([s.ndc.label() for s in dataset.students])
    order = sorted(set(labels), key=lambda lb: (lb.count("+"), lb != "nt", lb))
    group_means, group_sizes, excluded = {}, {}, {}
    for lb in order:
        g = labels == lb
        contributing = g & both
        group_sizes[lb] = int(contributing.sum())
        excluded[lb] = int((g & ~both).sum())
        group_means[lb] = {
            cat: (float(diffs[contributing, c].mean()) if contributing.any() else float("nan"))
            for c, cat in enumerate(OUTCOME_CATEGORIES)
        }
    return ContrastReport(partition=partition, side_a=name_a, side_b=name_b,
                          group_means=group_means, group_sizes=group_sizes, excluded=excluded)


# ---------------------------------------------------------------------------
# DRT selection policies

POLICIES = ("random", "oracle-active", "oracle-adversarial", "model-active")


@dataclass(frozen=True)
class PolicyReport:
    """Success rates per condition count under a DRT-selection policy.

    ``ratio`` is policy rate / random-baseline rate: a lift (> 1) for active
    selection, a drop (< 1) for adversarial selection.
    """

    policy: str
    baseline_rates: dict  # ndc_count -> correct rate under sampled DRTs
    policy_rates: dict
    ratio: dict
    group_sizes: dict  # attempts per group

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "baseline_rates": {str(k): v for k, v in self.baseline_rates.items()},
            "policy_rates": {str(k): v for k, v in self.policy_rates.items()},
            "ratio": {str(k): v for k, v in self.ratio.items()},
            "group_sizes": {str(k): v for k, v in self.group_sizes.items()},
        }

    def csv_rows(self):
        fields = ("ndc_count", "n_attempts", "baseline_rate", "policy_rate", "ratio")
        rows = []
        for g in sorted(self.baseline_rates):
            rows.append({"ndc_count": g, "n_attempts": self.group_sizes[g],
                         "baseline_rate": self.baseline_rates[g],
                         "policy_rate": self.policy_rates[g], "ratio": self.ratio[g]})
        return fields, rows


def policy_experiment(cfg: SimConfig, policy: str, model: FittedModel = None) -> PolicyReport:
    """Re-simulate with (delivery, response) chosen per attempt by the policy.

    Oracle policies search the full delivery x response cross product for the
    true inflation minimum (active) or maximum (adversarial); the model
    policy minimizes the fitted inflation and is scored against the truth.
    "random" keeps the sampled DRTs, which reproduces the dataset itself.
    """
    if policy not in POLICIES:
        raise DataError(f"unknown policy {policy!r} (choose from {POLICIES})")
    students, items, plan, flags, arrays, p = _resimulate_base(cfg)
    ii = plan.item_idx
    si = plan.student_idx
    aflags = flags[si]

    pi_random = context_pi(aflags, arrays.content[ii], arrays.density[ii],
                           arrays.delivery[ii], arrays.response[ii], cfg.lqf)
    out_random = realize_outcomes(plan, pi_random, p)

    if policy == "random":
        out_policy = out_random
    else:
        combos = list(itertools.product(sorted(DELIVERY_CODE.values()),
                                        sorted(RESPONSE_CODE.values())))
        true_grid = np.stack([
            context_pi(aflags, arrays.content[ii], arrays.density[ii],
                       np.full(len(ii), dc), np.full(len(ii), rc), cfg.lqf)
            for dc, rc in combos
        ])
        if policy == "oracle-active":
            chosen = true_grid.argmin(axis=0)
        elif policy == "oracle-adversarial":
            chosen = true_grid.argmax(axis=0)
        else:
            if model is None or model.kind is not ModelKind.IRT_ZILM:
                raise DataError("model-active policy requires a fitted zero-inflated model")
            if model.n_students != len(students) or model.n_items != len(items):
                raise DataError(
                    f"model sized for {model.n_students} students x {model.n_items} items, "
                    f"population has {len(students)} x {len(items)}"
                )
            fitted_grid = np.stack([
                pi_features(aflags, arrays.content[ii], arrays.density[ii],
                            np.full(len(ii), dc), np.full(len(ii), rc)) @ model.params.w_pi
                for dc, rc in combos
            ])
            chosen = fitted_grid.argmin(axis=0)
        pi_policy = np.take_along_axis(true_grid, chosen[None, :], axis=0)[0]
        out_policy = realize_outcomes(plan, pi_policy, p)

    counts = flags.sum(axis=1).astype(int)
    att_counts = counts[si]
    baseline_rates, policy_rates, ratio, sizes = {}, {}, {}, {}
    for g in range(4):
        m = att_counts == g
        sizes[g] = int(m.sum())
        if not m.any():
            baseline_rates[g] = policy_rates[g] = ratio[g] = float("nan")
            continue
        baseline_rates[g] = float((out_random[m] == 0).mean())
        policy_rates[g] = float((out_policy[m] == 0).mean())
        ratio[g] = (policy_rates[g] / baseline_rates[g]
                    if baseline_rates[g] > 0 else float("nan"))
    return PolicyReport(policy=policy, baseline_rates=baseline_rates,
                        policy_rates=policy_rates, ratio=ratio, group_sizes=sizes)


# ---------------------------------------------------------------------------
# condition-mislabeling hypothesis probe

@dataclass(frozen=True)
class HypothesisTestResult:
    """Likelihood-ratio statistic for one student's alternative condition state.

    statistic = 2 * (null NLL - alternative NLL) summed over the student's
    attempts; positive values favor the alternative flags.
    """

    student_id: int
    reported: tuple
    alternative: tuple
    statistic: float
    null_nll: float
    alt_nll: float

    def to_dict(self) -> dict:
        return {
            "student_id": self.student_id,
            "reported_ndc": list(self.reported),
            "alternative_ndc": list(self.alternative),
            "statistic": self.statistic,
            "null_nll": self.null_nll,
            "alt_nll": self.alt_nll,
        }

    def csv_rows(self):
        fields = ("student_id", "reported_ndc", "alternative_ndc", "statistic", "null_nll", "alt_nll")
        row = self.to_dict()
        row["reported_ndc"] = "+".join(n for n in row.pop("reported_ndc")) or "nt"
        row["alternative_ndc"] = "+".join(n for n in row.pop("alternative_ndc")) or "nt"
        return fields, [row]


def _student_nll_sum(model: FittedModel, design: Design, student_id: int) -> float:
    mask = design.student_idx == student_id
    y = design.y[mask]
    phat = predict_attempt_probs(model, design, mask)
    pc = np.clip(phat, 1e-12, 1.0 - 1e-12)
    return float(-np.sum(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def swap_student_ndc(dataset: Dataset, student_id: int, ndc: NdcProfile) -> Dataset:
    """Dataset with one student's recorded flags replaced (attempts unchanged)."""
    students = list(dataset.students)
    students[student_id] = replace(students[student_id], ndc=ndc)
    return Dataset(students=students, items=dataset.items, attempts=dataset.attempts,
                   sim_config_digest=dataset.sim_config_digest)


def ndc_hypothesis_test(dataset: Dataset, student_id: int, alternative_ndc: NdcProfile,
                        cfg: FitConfig = None, null_model: FittedModel = None,
                        design: Design = None) -> HypothesisTestResult:
    """Compare the reported-flags model against an alternative-flags model.

    Fits (or reuses) the null zero-inflated model, refits with only this
    student's flags replaced, and returns the likelihood-ratio statistic over
    that student's attempts.  An alternative equal to the reported flags is
    degenerate: no refit happens and the statistic is exactly zero.
    """
    if not 0 <= student_id < len(dataset.students):
        raise IndexError(f"student id {student_id} out of range")
    cfg = cfg or FitConfig()
    reported = dataset.students[student_id].ndc
    if design is None:
        design = build_design(dataset)
    if null_model is None:
        null_model = fit(dataset, ModelKind.IRT_ZILM, cfg, design=design)
    _check_compatible(null_model, design)
    null_nll = _student_nll_sum(null_model, design, student_id)

    if alternative_ndc == reported:
        return HypothesisTestResult(
            student_id=student_id, reported=reported.names(),
            alternative=alternative_ndc.names(), statistic=0.0,
            null_nll=null_nll, alt_nll=null_nll,
        )

    alt_dataset = swap_student_ndc(dataset, student_id, alternative_ndc)
    alt_design = build_design(alt_dataset)
    alt_model = fit(alt_dataset, ModelKind.IRT_ZILM, cfg, design=alt_design)
    alt_nll = _student_nll_sum(alt_model, alt_design, student_id)
    return HypothesisTestResult(
        student_id=student_id, reported=reported.names(),
        alternative=alternative_ndc.names(),
        statistic=2.0 * (null_nll - alt_nll), null_nll=null_nll, alt_nll=alt_nll,
    )
