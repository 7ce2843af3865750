"""Full-batch first-order fitting of the penalized negative log likelihood.

One deterministic optimization loop serves all three model kinds.  Adaptive
moments is the default because the 3PL surface is poorly scaled; plain
gradient descent is retained for descent-monotonicity checks.  Identical
(dataset, kind, config) inputs produce bit-identical fitted models: the
initializer is seeded, the data is consumed full batch, and reductions run
in a fixed order.
"""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, asdict, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit

from .domain import ConfigError, DataError, Dataset, NumericError
from .models import (
    IRT_FROZEN_PI_BIAS,
    KTM_CONTEXT_FEATURE_COUNT,
    KTM_CONTEXT_FEATURE_NAMES,
    PI_FEATURE_COUNT,
    PI_FEATURE_NAMES,
    Design,
    Ktm1Params,
    ZilmParams,
    build_design,
    irt_prob,
    ktm1_grad,
    ktm1_nll,
    ktm1_prob,
    softplus,
    zilm_grad,
    zilm_nll,
)
from .rng import STREAM_FIT_INIT, RandomSource

PI_BIAS_INIT = math.log(0.05 / 0.95)  # inflation starts near 5%

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ModelKind(Enum):
    IRT = "irt"
    IRT_ZILM = "irt_zilm"
    KTM1 = "ktm1"


class Optimizer(Enum):
    GRADIENT_DESCENT = "gradient_descent"
    ADAPTIVE_MOMENTS = "adaptive_moments"


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.05
    max_iters: int = 3000
    rel_tol: float = 1e-7
    # 0.5 / 16 train attempts: the mean-NLL-scale equivalent of a standard
    # normal prior on ability, which is also where recovery quality plateaus
    l2_theta: float = 0.03125
    l2_item: float = 0.001
    l2_weights: float = 0.001
    init_scale: float = 0.01
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAPTIVE_MOMENTS

    def validate(self) -> list:
        out = []
        if not self.learning_rate > 0:
            out.append(f"learning_rate: must be positive, got {self.learning_rate}")
        if not (isinstance(self.max_iters, int) and self.max_iters >= 1):
            out.append(f"max_iters: must be a positive integer, got {self.max_iters!r}")
        if not self.rel_tol > 0:
            out.append(f"rel_tol: must be positive, got {self.rel_tol}")
        for name in ("l2_theta", "l2_item", "l2_weights"):
            if getattr(self, name) < 0:
                out.append(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.init_scale < 0:
            out.append(f"init_scale: must be non-negative, got {self.init_scale}")
        if not 0 <= self.seed < 2**64:
            out.append(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        return out

    def ensure_valid(self) -> "FitConfig":
        problems = self.validate()
        if problems:
            raise ConfigError("invalid fit config:\n  " + "\n  ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "FitConfig":
        if not isinstance(obj, dict):
            raise ConfigError(f"fit config must be a JSON object, got {type(obj).__name__}")
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fit config key(s): {sorted(unknown)}")
        kwargs = dict(obj)
        if "optimizer" in kwargs:
            try:
                kwargs["optimizer"] = Optimizer(kwargs["optimizer"])
            except ValueError:
                raise ConfigError(
                    f"unknown optimizer {kwargs['optimizer']!r} "
                    f"(choose from {[o.value for o in Optimizer]})"
                )
        return cls(**kwargs).ensure_valid()

    @classmethod
    def from_json_file(cls, path) -> "FitConfig":
        try:
            with open(path) as f:
                obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
        except OSError as e:
            raise ConfigError(f"{path}: {e.strerror or e}")
        return cls.from_dict(obj)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class TrainingTrace:
    """Penalized train NLL per iteration plus the stopping outcome."""

    nll: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass
class FittedModel:
    kind: ModelKind
    n_students: int
    n_items: int
    params: object  # ZilmParams or Ktm1Params
    trace: TrainingTrace
    fit_config: FitConfig


# ---------------------------------------------------------------------------
# initialization and objective wiring

def _init_params(kind: ModelKind, n_students: int, n_items: int, cfg: FitConfig):
    gen = RandomSource(cfg.seed).generator(STREAM_FIT_INIT)
    if kind in (ModelKind.IRT, ModelKind.IRT_ZILM):
        params = ZilmParams(
            theta=cfg.init_scale * gen.standard_normal(n_students),
            b=cfg.init_scale * gen.standard_normal(n_items),
            a_raw=cfg.init_scale * gen.standard_normal(n_items),
            g_raw=cfg.init_scale * gen.standard_normal(n_items),
            w_pi=cfg.init_scale * gen.standard_normal(PI_FEATURE_COUNT),
        )
        if kind is ModelKind.IRT:
            params.w_pi = np.zeros(PI_FEATURE_COUNT)
            params.w_pi[0] = IRT_FROZEN_PI_BIAS
        else:
            params.w_pi[0] = PI_BIAS_INIT
        return params
    if kind is ModelKind.KTM1:
        return Ktm1Params(
            user_weights=cfg.init_scale * gen.standard_normal(n_students),
            item_weights=cfg.init_scale * gen.standard_normal(n_items),
            context_weights=cfg.init_scale * gen.standard_normal(KTM_CONTEXT_FEATURE_COUNT),
            bias=float(cfg.init_scale * gen.standard_normal(1)[0]),
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def _frozen_mask(kind: ModelKind, n_students: int, n_items: int):
    """Boolean mask of parameter-vector entries excluded from optimization."""
    if kind is ModelKind.IRT:
        sl = ZilmParams.block_slices(n_students, n_items)
        size = sl["w_pi"].stop
        mask = np.zeros(size, dtype=bool)
        mask[sl["w_pi"]] = True
        return mask
    cls = ZilmParams if kind is ModelKind.IRT_ZILM else Ktm1Params
    size = cls.block_slices(n_students, n_items)[cls.BLOCKS[-1]].stop
    return np.zeros(size, dtype=bool)


def _objective(kind: ModelKind, design: Design, cfg: FitConfig):
    l2 = dict(l2_theta=cfg.l2_theta, l2_item=cfg.l2_item, l2_weights=cfg.l2_weights)
    if kind in (ModelKind.IRT, ModelKind.IRT_ZILM):
        def value(vec):
            p = ZilmParams.from_vector(vec, design.n_students, design.n_items)
            return zilm_nll(p, design, "train", **l2)

        def grad(vec):
            p = ZilmParams.from_vector(vec, design.n_students, design.n_items)
            return zilm_grad(p, design, "train", **l2).to_vector()
    else:
        def value(vec):
            p = Ktm1Params.from_vector(vec, design.n_students, design.n_items)
            return ktm1_nll(p, design, "train", **l2)

        def grad(vec):
            p = Ktm1Params.from_vector(vec, design.n_students, design.n_items)
            return ktm1_grad(p, design, "train", **l2).to_vector()
    return value, grad


def fit(dataset: Dataset, kind: ModelKind, cfg: FitConfig = None,
        design: Design = None) -> FittedModel:
    """Fit one model kind on the dataset's train split.

    ``design`` may be passed to reuse prebuilt matrices across fits of the
    same dataset; it must match the dataset exactly.
    """
    if isinstance(kind, str):
        try:
            kind = ModelKind(kind)
        except ValueError:
            raise ConfigError(f"unknown model kind {kind!r} (choose from {[k.value for k in ModelKind]})")
    cfg = (cfg or FitConfig()).ensure_valid()
    if design is None:
        design = build_design(dataset)
    design.split_mask("train")  # raises DataError when empty

    params = _init_params(kind, design.n_students, design.n_items, cfg)
    vec = params.to_vector()
    frozen = _frozen_mask(kind, design.n_students, design.n_items)
    value, grad = _objective(kind, design, cfg)

    trace = TrainingTrace()
    m = np.zeros_like(vec)
    v = np.zeros_like(vec)
    prev = None
    for t in range(1, cfg.max_iters + 1):
        nll = value(vec)
        if not np.isfinite(nll):
            raise NumericError(f"non-finite penalized NLL at iteration {t}")
        trace.nll.append(float(nll))
        trace.iterations = t
        if prev is not None and abs(nll - prev) / max(abs(prev), 1e-12) < cfg.rel_tol:
            trace.converged = True
            break
        prev = nll

        g = grad(vec)
        g[frozen] = 0.0
        if cfg.optimizer is Optimizer.ADAPTIVE_MOMENTS:
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            m_hat = m / (1.0 - ADAM_BETA1 ** t)
            v_hat = v / (1.0 - ADAM_BETA2 ** t)
            vec = vec - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            vec = vec - cfg.learning_rate * g

    cls = Ktm1Params if kind is ModelKind.KTM1 else ZilmParams
    fitted = cls.from_vector(vec, design.n_students, design.n_items)
    return FittedModel(kind=kind, n_students=design.n_students, n_items=design.n_items,
                       params=fitted, trace=trace, fit_config=cfg)


# ---------------------------------------------------------------------------
# prediction

def predict(model: FittedModel, dataset: Dataset, student_id: int, item_id: int,
            delivery=None, response=None) -> float:
    """Probability of a correct attempt for one (student, item) pair.

    ``delivery`` / ``response`` override the item's own context (enums or
    codes), which is how counterfactual selections are scored.
    """
    _check_compatible(model, dataset)
    if not 0 <= student_id < len(dataset.students):
        raise IndexError(f"student id {student_id} out of range")
    if not 0 <= item_id < len(dataset.items):
        raise IndexError(f"item id {item_id} out of range")
    if model.kind is ModelKind.IRT:
        return irt_prob(model.params, student_id, item_id)

    from .models import ktm_context_features, pi_features
    from .simulate import CONTENT_CODE, DELIVERY_CODE, RESPONSE_CODE

    item = dataset.items[item_id]
    student = dataset.students[student_id]
    d_code = DELIVERY_CODE.get(delivery, delivery if delivery is not None else DELIVERY_CODE[item.delivery])
    r_code = RESPONSE_CODE.get(response, response if response is not None else RESPONSE_CODE[item.response])
    flags = np.asarray(student.ndc.as_tuple(), dtype=float)[None, :]
    c_code = CONTENT_CODE[item.content]

    if model.kind is ModelKind.KTM1:
        ctx = ktm_context_features(flags, c_code, item.density, d_code, r_code)[0]
        return ktm1_prob(model.params, student_id, item_id, ctx)

    x = pi_features(flags, c_code, item.density, d_code, r_code)[0]
    pi = float(expit(x @ model.params.w_pi))
    p = irt_prob(model.params, student_id, item_id)
    return (1.0 - pi) * p


def predict_attempt_probs(model: FittedModel, design: Design, mask=None) -> np.ndarray:
    """Vectorized success probabilities over (a subset of) a design's attempts."""
    if mask is None:
        mask = np.ones(len(design.y), dtype=bool)
    si = design.student_idx[mask]
    ii = design.item_idx[mask]
    if model.kind is ModelKind.KTM1:
        pr = model.params
        z = pr.bias + pr.user_weights[si] + pr.item_weights[ii] + design.x_ctx[mask] @ pr.context_weights
        return expit(z)
    pr = model.params
    a = softplus(pr.a_raw)[ii]
    g = 0.15 * expit(pr.g_raw)[ii]
    p = g + (1.0 - g) * expit(a * (pr.theta[si] - pr.b[ii]))
    if model.kind is ModelKind.IRT:
        return p
    pi = expit(design.x_pi[mask] @ pr.w_pi)
    return (1.0 - pi) * p


def _check_compatible(model: FittedModel, data) -> None:
    n_students = data.n_students() if isinstance(data, Dataset) else data.n_students
    n_items = data.n_items() if isinstance(data, Dataset) else data.n_items
    if model.n_students != n_students or model.n_items != n_items:
        raise DataError(
            f"model sized for {model.n_students} students x {model.n_items} items, "
            f"dataset has {n_students} x {n_items}"
        )


# ---------------------------------------------------------------------------
# gradient checking

def check_gradients(kind: ModelKind, dataset: Dataset, cfg: FitConfig = None,
                    epsilon: float = 1e-5) -> dict:
    """Max relative error of the analytic gradient vs central differences.

    Returns a mapping of parameter block name to its worst relative error,
    plus an ``"overall"`` entry.  Frozen blocks (plain IRT's inflation
    weights) are excluded: they carry no gradient.
    """
    if isinstance(kind, str):
        kind = ModelKind(kind)
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    cfg = (cfg or FitConfig()).ensure_valid()
    design = build_design(dataset)
    params = _init_params(kind, design.n_students, design.n_items, cfg)
    vec = params.to_vector()
    frozen = _frozen_mask(kind, design.n_students, design.n_items)
    value, grad = _objective(kind, design, cfg)

    analytic = grad(vec)
    cls = Ktm1Params if kind is ModelKind.KTM1 else ZilmParams
    slices = cls.block_slices(design.n_students, design.n_items)

    fd = np.zeros_like(vec)
    for i in range(len(vec)):
        if frozen[i]:
            continue
        step = np.zeros_like(vec)
        step[i] = epsilon
        fd[i] = (value(vec + step) - value(vec - step)) / (2.0 * epsilon)

    report = {}
    worst = 0.0
    for name, sl in slices.items():
        if frozen[sl].all():
            continue
        a = analytic[sl]
        f = fd[sl]
        # entries below 1e-6 in both gradients are numerically zero at the
        # parameter scale; the floor keeps central-difference roundoff
        # (~1e-11 absolute) from dominating their ratio
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        err = float(np.max(np.abs(a - f) / denom))
        report[name] = err
        worst = max(worst, err)
    report["overall"] = worst
    return report


# ---------------------------------------------------------------------------
# serialization

_TRANSFORMS = {
    "discrimination": "softplus(a_raw)",
    "guessing": "0.15*sigmoid(g_raw)",
}


def save_model(model: FittedModel, path) -> None:
    obj = {
        "kind": model.kind.value,
        "n_students": model.n_students,
        "n_items": model.n_items,
        "fit_config": model.fit_config.to_dict(),
        "trace": {
            "penalized_train_nll": model.trace.nll,
            "iterations": model.trace.iterations,
            "converged": model.trace.converged,
        },
    }
    if model.kind is ModelKind.KTM1:
        p = model.params
        obj["context_feature_names"] = list(KTM_CONTEXT_FEATURE_NAMES)
        obj["params"] = {
            "user_weights": p.user_weights.tolist(),
            "item_weights": p.item_weights.tolist(),
            "context_weights": p.context_weights.tolist(),
            "bias": p.bias,
        }
    else:
        p = model.params
        obj["transforms"] = dict(_TRANSFORMS)
        obj["pi_feature_names"] = list(PI_FEATURE_NAMES)
        obj["params"] = {
            "theta": p.theta.tolist(),
            "b": p.b.tolist(),
            "a_raw": p.a_raw.tolist(),
            "g_raw": p.g_raw.tolist(),
            "w_pi": p.w_pi.tolist(),
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    tmp.replace(path)


def load_model(path) -> FittedModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no model file at {path}")
    with open(path) as f:
        obj = json.load(f)
    try:
        kind = ModelKind(obj["kind"])
        raw = obj["params"]
        if kind is ModelKind.KTM1:
            params = Ktm1Params(
                user_weights=np.asarray(raw["user_weights"], dtype=float),
                item_weights=np.asarray(raw["item_weights"], dtype=float),
                context_weights=np.asarray(raw["context_weights"], dtype=float),
                bias=float(raw["bias"]),
            )
        else:
            params = ZilmParams(
                theta=np.asarray(raw["theta"], dtype=float),
                b=np.asarray(raw["b"], dtype=float),
                a_raw=np.asarray(raw["a_raw"], dtype=float),
                g_raw=np.asarray(raw["g_raw"], dtype=float),
                w_pi=np.asarray(raw["w_pi"], dtype=float),
            )
        trace = TrainingTrace(
            nll=list(obj["trace"]["penalized_train_nll"]),
            iterations=int(obj["trace"]["iterations"]),
            converged=bool(obj["trace"]["converged"]),
        )
        fit_config = FitConfig.from_dict(obj["fit_config"])
        return FittedModel(kind=kind, n_students=int(obj["n_students"]),
                           n_items=int(obj["n_items"]), params=params,
                           trace=trace, fit_config=fit_config)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed model file ({e})")


def save_trace(trace: TrainingTrace, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "nll"])
        for i, nll in enumerate(trace.nll, start=1):
            w.writerow([i, repr(nll)])
