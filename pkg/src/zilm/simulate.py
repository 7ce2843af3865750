"""Synthetic interaction data generator.

Students get an ability and independent condition flags; items get 3PL
parameters plus context features (subject, content type, information
density, delivery type, response type).  Per attempt the simulator first
draws "did the context block the attempt?" from the context-dependent
inflation probability, then success from the 3PL curve:

    u1 < pi                 ->  NotAnswered
    else u2 < p             ->  Correct
    else                    ->  Incorrect

so the effective success probability of a (student, item) cell is
``(1 - pi) * p`` and a low learning-quality context lowers the item curve's
upper asymptote.
"""

import hashlib
import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.special import expit

from .domain import (
    Attempt,
    ConfigError,
    ContentType,
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
from .rng import STREAM_ATTEMPTS, STREAM_ITEMS, STREAM_STUDENTS, RandomSource

# --------------------------------------------------------------------------
# context codes used by the vectorized paths (order matches the enums)

CONTENT_ORDER = (ContentType.LETTER, ContentType.DIGIT, ContentType.BOTH)
DELIVERY_ORDER = (Delivery.READ, Delivery.LISTEN, Delivery.BOTH)
RESPONSE_ORDER = (
    ResponseType.WRITTEN,
    ResponseType.SPEAK,
    ResponseType.CLICK_PICTURE,
    ResponseType.CLICK_READ,
)
OUTCOME_ORDER = (Outcome.CORRECT, Outcome.INCORRECT, Outcome.NOT_ANSWERED)

CONTENT_CODE = {c: i for i, c in enumerate(CONTENT_ORDER)}
DELIVERY_CODE = {c: i for i, c in enumerate(DELIVERY_ORDER)}
RESPONSE_CODE = {c: i for i, c in enumerate(RESPONSE_ORDER)}

TEST_FRACTION = 0.2  # per-student holdout share; at least one test attempt


def student_arrays(students):
    """(ability, flags) arrays; flags is (n, 3) float of condition indicators."""
    ability = np.array([s.ability for s in students], dtype=float)
    flags = np.array([s.ndc.as_tuple() for s in students], dtype=float)
    return ability, flags


@dataclass(frozen=True)
class ItemArrays:
    difficulty: np.ndarray
    discrimination: np.ndarray
    guessing: np.ndarray
    subject: np.ndarray  # 0 maths, 1 english
    content: np.ndarray
    density: np.ndarray
    delivery: np.ndarray
    response: np.ndarray


def item_arrays(items) -> ItemArrays:
    return ItemArrays(
        difficulty=np.array([it.difficulty for it in items], dtype=float),
        discrimination=np.array([it.discrimination for it in items], dtype=float),
        guessing=np.array([it.guessing for it in items], dtype=float),
        subject=np.array([0 if it.subject is Subject.MATHS else 1 for it in items]),
        content=np.array([CONTENT_CODE[it.content] for it in items]),
        density=np.array([it.density for it in items], dtype=float),
        delivery=np.array([DELIVERY_CODE[it.delivery] for it in items]),
        response=np.array([RESPONSE_CODE[it.response] for it in items]),
    )


# --------------------------------------------------------------------------
# configuration

LQF_INTERCEPT_DEFAULT = math.log(0.02 / 0.98)  # inflation ~2% for NT students

# Within-condition pathway mix, frozen by calibration against the behavioural
# bands (forced-delivery gaps, contrast spikes, policy lift/drop); see README.
DYSLEXIA_READ_SHARE = 0.42      # delivery presents letters to read
DYSLEXIA_TEXT_SHARE = 1.0       # response requires reading/writing letters
DYSCALCULIA_DELIVERY_SHARE = 0.30  # digit content reaches under any delivery
DYSCALCULIA_TEXT_SHARE = 0.70   # response requires writing/reading digits
SPD_OVERLOAD_SHARE = 1.0        # simultaneous read+listen delivery
SPD_SCAN_SHARE = 1.15           # response requires scanning multiple options


@dataclass(frozen=True)
class LqfWeights:
    """Weights mapping (condition, context) to inflation log-odds.

    The defaults are calibrated, not measured: they were tuned until the
    simulator reproduces the documented behavioural bands and then frozen.
    """

    intercept: float = LQF_INTERCEPT_DEFAULT
    w_dyslexia: float = 18.0
    w_dyscalculia: float = 18.0
    w_spd: float = 3.1

    def validate(self) -> list:
        out = []
        if not expit(self.intercept) < 0.1:
            out.append(f"lqf.intercept: sigmoid({self.intercept}) must be < 0.1")
        for name in ("w_dyslexia", "w_dyscalculia", "w_spd"):
            v = getattr(self, name)
            if v < 0:
                out.append(f"lqf.{name}: must be non-negative, got {v}")
        return out


def _range_tuple(v, name):
    try:
        lo, hi = float(v[0]), float(v[1])
    except (TypeError, ValueError, IndexError):
        raise ConfigError(f"{name}: expected a [low, high] pair, got {v!r}")
    return (lo, hi)


@dataclass(frozen=True)
class SimConfig:
    """Full description of one synthetic dataset (see README for the schema)."""

    n_students: int = 5000
    n_items: int = 400
    n_attempts_per_student: int = 20
    seed: int = 0
    ability_mean: float = 0.0
    ability_sd: float = 1.0
    # prevalence of dyslexia, dyscalculia, SPD; comorbidity arises naturally
    ndc_prevalence: tuple = (0.1, 0.06, 0.11)
    difficulty_range: tuple = (-2.0, 2.0)
    discrimination_range: tuple = (0.5, 4.0)
    guessing_range: tuple = (0.0, 0.15)
    subject_probs: tuple = (0.5, 0.5)  # maths, english
    # content-type probabilities (letter, digit, both) conditional on subject;
    # the maths row is a renormalization of an inconsistent source row and the
    # adjustment is recorded in every manifest (see MATHS_CONTENT_NOTE)
    maths_content_probs: tuple = (0.1, 0.3, 0.6)
    english_content_probs: tuple = (1.0, 0.0, 0.0)
    density_mean: float = 0.35
    density_sd: float = 0.15
    density_range: tuple = (0.1, 1.0)
    delivery_probs: tuple = (0.3, 0.3, 0.4)  # read, listen, both
    response_probs: tuple = (0.4, 0.2, 0.2, 0.2)  # written, speak, click picture, click read
    lqf: LqfWeights = field(default_factory=LqfWeights)

    def validate(self) -> list:
        out = []
        for name in ("n_students", "n_items", "n_attempts_per_student"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                out.append(f"{name}: must be a positive integer, got {v!r}")
        if isinstance(self.n_attempts_per_student, int) and isinstance(self.n_items, int):
            if self.n_attempts_per_student > self.n_items:
                out.append(
                    f"n_attempts_per_student ({self.n_attempts_per_student}) exceeds "
                    f"n_items ({self.n_items}); items are drawn without replacement"
                )
        if not 0 <= self.seed < 2**64:
            out.append(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.ability_sd < 0:
            out.append(f"ability_sd: must be non-negative, got {self.ability_sd}")
        if self.density_sd < 0:
            out.append(f"density_sd: must be non-negative, got {self.density_sd}")
        for p, name in zip(self.ndc_prevalence, ("dyslexia", "dyscalculia", "spd")):
            if not 0.0 <= p <= 1.0:
                out.append(f"ndc_prevalence.{name}: not a probability: {p}")
        for name in ("difficulty_range", "discrimination_range", "guessing_range", "density_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                out.append(f"{name}: low {lo} exceeds high {hi}")
        for name, probs in (
            ("subject_probs", self.subject_probs),
            ("maths_content_probs", self.maths_content_probs),
            ("english_content_probs", self.english_content_probs),
            ("delivery_probs", self.delivery_probs),
            ("response_probs", self.response_probs),
        ):
            if any(p < 0 for p in probs):
                out.append(f"{name}: negative entry in {probs}")
            elif abs(sum(probs) - 1.0) > 1e-9:
                out.append(f"{name}: entries sum to {sum(probs)!r}, expected 1")
        if tuple(self.english_content_probs) != (1.0, 0.0, 0.0):
            out.append("english_content_probs: english items must always have letter content")
        out.extend(self.lqf.validate())
        return out

    def ensure_valid(self) -> "SimConfig":
        problems = self.validate()
        if problems:
            raise ConfigError("invalid simulation config:\n  " + "\n  ".join(problems))
        return self

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lqf"] = asdict(self.lqf)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        if not isinstance(obj, dict):
            raise ConfigError(f"simulation config must be a JSON object, got {type(obj).__name__}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown simulation config key(s): {sorted(unknown)}")
        kwargs = dict(obj)
        if "lqf" in kwargs:
            lqf = kwargs["lqf"]
            bad = set(lqf) - set(LqfWeights.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown lqf key(s): {sorted(bad)}")
            kwargs["lqf"] = LqfWeights(**lqf)
        for name in ("ndc_prevalence", "subject_probs", "maths_content_probs",
                     "english_content_probs", "delivery_probs", "response_probs"):
            if name in kwargs:
                kwargs[name] = tuple(float(x) for x in kwargs[name])
        for name in ("difficulty_range", "discrimination_range", "guessing_range", "density_range"):
            if name in kwargs:
                kwargs[name] = _range_tuple(kwargs[name], name)
        return cls(**kwargs).ensure_valid()

    @classmethod
    def from_json_file(cls, path) -> "SimConfig":
        try:
            with open(path) as f:
                obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
        except OSError as e:
            raise ConfigError(f"{path}: {e.strerror or e}")
        return cls.from_dict(obj)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


MATHS_CONTENT_NOTE = (
    "maths content-type probabilities given as (0.1, 0.5, 0.6) do not sum to 1; "
    "using (0.1, 0.3, 0.6)"
)


# --------------------------------------------------------------------------
# population sampling

def sample_students(cfg: SimConfig, rng: RandomSource) -> list:
    """Abilities i.i.d. normal and condition flags independent Bernoullis."""
    gen = rng.generator(STREAM_STUDENTS)
    ability = cfg.ability_mean + cfg.ability_sd * gen.standard_normal(cfg.n_students)
    flags = gen.random((cfg.n_students, 3)) < np.asarray(cfg.ndc_prevalence)
    return [
        StudentProfile(id=i, ability=float(ability[i]),
                       ndc=NdcProfile(*map(bool, flags[i])))
        for i in range(cfg.n_students)
    ]


def _categorical(gen, probs, n):
    cuts = np.cumsum(np.asarray(probs, dtype=float))
    codes = np.searchsorted(cuts, gen.random(n), side="right")
    return np.minimum(codes, len(cuts) - 1)


def sample_items(cfg: SimConfig, rng: RandomSource) -> list:
    gen = rng.generator(STREAM_ITEMS)
    n = cfg.n_items
    difficulty = gen.uniform(*cfg.difficulty_range, size=n)
    discrimination = gen.uniform(*cfg.discrimination_range, size=n)
    guessing = gen.uniform(*cfg.guessing_range, size=n)
    subject = _categorical(gen, cfg.subject_probs, n)  # 0 maths, 1 english
    u_content = gen.random(n)
    maths_cuts = np.cumsum(cfg.maths_content_probs)
    english_cuts = np.cumsum(cfg.english_content_probs)
    cuts = np.where(subject[:, None] == 0, maths_cuts[None, :], english_cuts[None, :])
    content = np.minimum((u_content[:, None] > cuts).sum(axis=1), 2)
    density = np.clip(gen.normal(cfg.density_mean, cfg.density_sd, size=n), *cfg.density_range)
    delivery = _categorical(gen, cfg.delivery_probs, n)
    response = _categorical(gen, cfg.response_probs, n)
    return [
        Item(
            id=i,
            difficulty=float(difficulty[i]),
            discrimination=float(discrimination[i]),
            guessing=float(guessing[i]),
            subject=Subject.MATHS if subject[i] == 0 else Subject.ENGLISH,
            content=CONTENT_ORDER[content[i]],
            density=float(density[i]),
            delivery=DELIVERY_ORDER[delivery[i]],
            response=RESPONSE_ORDER[response[i]],
        )
        for i in range(n)
    ]


# --------------------------------------------------------------------------
# ground-truth inflation and success probabilities

def context_severity(flags, content, density, delivery, response, w: LqfWeights):
    """Summed per-condition penalty terms on the log-odds scale.

    ``flags`` is (..., 3); the remaining context arrays broadcast against its
    leading shape.  Each pathway is non-negative, so the inflation probability
    is monotonically non-decreasing in every weight.
    """
    content = np.asarray(content)
    delivery = np.asarray(delivery)
    response = np.asarray(response)
    density = np.asarray(density, dtype=float)

    has_letters = (content != CONTENT_CODE[ContentType.DIGIT]).astype(float)
    has_digits = (content != CONTENT_CODE[ContentType.LETTER]).astype(float)
    read_delivery = (delivery != DELIVERY_CODE[Delivery.LISTEN]).astype(float)
    both_delivery = (delivery == DELIVERY_CODE[Delivery.BOTH]).astype(float)
    text_response = (
        (response == RESPONSE_CODE[ResponseType.WRITTEN])
        | (response == RESPONSE_CODE[ResponseType.CLICK_READ])
    ).astype(float)
    scan_response = (response == RESPONSE_CODE[ResponseType.CLICK_READ]).astype(float)

    dyslexia = (
        w.w_dyslexia * density * has_letters
        * (DYSLEXIA_READ_SHARE * read_delivery + DYSLEXIA_TEXT_SHARE * text_response)
    )
    dyscalculia = (
        w.w_dyscalculia * density * has_digits
        * (DYSCALCULIA_DELIVERY_SHARE + DYSCALCULIA_TEXT_SHARE * text_response)
    )
    spd = w.w_spd * (SPD_OVERLOAD_SHARE * both_delivery + SPD_SCAN_SHARE * scan_response)

    flags = np.asarray(flags, dtype=float)
    return flags[..., 0] * dyslexia + flags[..., 1] * dyscalculia + flags[..., 2] * spd


def context_pi(flags, content, density, delivery, response, w: LqfWeights):
    """Inflation probability for (condition flags, item context) arrays."""
    return expit(w.intercept + context_severity(flags, content, density, delivery, response, w))


def true_lqf_pi(student: StudentProfile, item: Item, w: LqfWeights) -> float:
    """Ground-truth inflation probability for one student-item pair."""
    pi = context_pi(
        np.asarray(student.ndc.as_tuple(), dtype=float),
        CONTENT_CODE[item.content],
        item.density,
        DELIVERY_CODE[item.delivery],
        RESPONSE_CODE[item.response],
        w,
    )
    return float(pi)


def success_p(ability, difficulty, discrimination, guessing):
    """3PL success curve ``g + (1 - g) * sigmoid(a * (theta - b))`` (arrays ok)."""
    ability = np.asarray(ability, dtype=float)
    return guessing + (1.0 - guessing) * expit(discrimination * (ability - difficulty))


def irt3pl_prob(ability: float, item: Item) -> float:
    """3PL success probability of one student on one item."""
    return float(success_p(ability, item.difficulty, item.discrimination, item.guessing))


# --------------------------------------------------------------------------
# attempt generation

@dataclass(frozen=True)
class AttemptPlan:
    """RNG-only part of a simulation run.

    The plan is independent of item context and of the weight vector, so
    counterfactual re-simulations (forced delivery, policy selection) reuse
    the same item assignments, outcome uniforms, and splits.
    """

    student_idx: np.ndarray
    item_idx: np.ndarray
    u_answer: np.ndarray
    u_correct: np.ndarray
    is_train: np.ndarray


def plan_attempts(cfg: SimConfig) -> AttemptPlan:
    """Draw item assignments, outcome uniforms and splits for every student.

    Each student consumes an independent substream keyed by (seed, student),
    so generation order (or parallel generation) cannot change the data.
    Output is canonical: sorted by student, then draw order.
    """
    if cfg.n_attempts_per_student > cfg.n_items:
        raise ConfigError(
            f"n_attempts_per_student ({cfg.n_attempts_per_student}) exceeds "
            f"n_items ({cfg.n_items})"
        )
    rs = RandomSource(cfg.seed)
    k = cfg.n_attempts_per_student
    n_test = max(1, int(round(k * TEST_FRACTION)))

    student_idx = np.repeat(np.arange(cfg.n_students), k)
    item_idx = np.empty(cfg.n_students * k, dtype=int)
    u_answer = np.empty(cfg.n_students * k)
    u_correct = np.empty(cfg.n_students * k)
    is_train = np.ones(cfg.n_students * k, dtype=bool)

    for s in range(cfg.n_students):
        gen = rs.generator(STREAM_ATTEMPTS, s)
        lo = s * k
        item_idx[lo:lo + k] = gen.choice(cfg.n_items, size=k, replace=False)
        u_answer[lo:lo + k] = gen.random(k)
        u_correct[lo:lo + k] = gen.random(k)
        is_train[lo + gen.choice(k, size=n_test, replace=False)] = False

    return AttemptPlan(student_idx, item_idx, u_answer, u_correct, is_train)


def realize_outcomes(plan: AttemptPlan, pi, p):
    """Outcome codes (index into OUTCOME_ORDER) for given probability arrays."""
    not_answered = plan.u_answer < pi
    correct = ~not_answered & (plan.u_correct < p)
    return np.where(not_answered, 2, np.where(correct, 0, 1))


def generate_attempts(students, items, cfg: SimConfig, rng: RandomSource = None) -> list:
    """Simulate every student's attempts under the configured weights.

    ``rng`` exists for signature symmetry with the samplers; attempt draws
    are keyed off ``cfg.seed`` directly so plans can be reproduced without
    the original source object.
    """
    if rng is not None and rng.seed != cfg.seed:
        raise ConfigError(f"rng seed {rng.seed} does not match config seed {cfg.seed}")
    plan = plan_attempts(cfg)
    ability, flags = student_arrays(students)
    arrays = item_arrays(items)

    ii = plan.item_idx
    pi = context_pi(flags[plan.student_idx], arrays.content[ii], arrays.density[ii],
                    arrays.delivery[ii], arrays.response[ii], cfg.lqf)
    p = success_p(ability[plan.student_idx], arrays.difficulty[ii],
                  arrays.discrimination[ii], arrays.guessing[ii])
    outcome = realize_outcomes(plan, pi, p)

    return [
        Attempt(
            student_id=int(plan.student_idx[k]),
            item_id=int(plan.item_idx[k]),
            outcome=OUTCOME_ORDER[outcome[k]],
            true_pi=float(pi[k]),
            true_p=float(p[k]),
            split=Split.TRAIN if plan.is_train[k] else Split.TEST,
        )
        for k in range(len(outcome))
    ]


def generate_dataset(cfg: SimConfig) -> Dataset:
    """Deterministic function of the config, including its seed."""
    cfg.ensure_valid()
    rs = RandomSource(cfg.seed)
    students = sample_students(cfg, rs)
    items = sample_items(cfg, rs)
    attempts = generate_attempts(students, items, cfg)
    return Dataset(students=students, items=items, attempts=attempts,
                   sim_config_digest=cfg.digest())
