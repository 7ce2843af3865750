"""Model families: zero-inflated IRT, plain IRT, and a degree-1 KTM baseline.

The zero-inflated learner model mixes two explanations of a failed attempt,

    Pr(Y=1) = (1 - pi) * p
    Pr(Y=0) = pi + (1 - pi) * (1 - p)

where ``p`` is a 3PL success curve in the student's ability and ``pi`` is a
logistic-linear function of a frozen feature map over condition flags and
item context.  Plain IRT is the special case with ``pi`` frozen near zero.
The degree-1 KTM baseline is a logistic model over user, item, and context
features.  All negative log-likelihoods come with analytic gradients that
are validated against central finite differences.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .domain import DataError, Dataset
from .simulate import item_arrays, student_arrays

CLAMP = 1e-12  # floor for log arguments during optimization
GUESS_SCALE = 0.15  # guessing = GUESS_SCALE * sigmoid(g_raw), matching the generator range
IRT_FROZEN_PI_BIAS = -13.8  # sigmoid(-13.8) ~ 1e-6: the pi = 0 special case

_NDC = ("dyslexia", "dyscalculia", "spd")
_DELIVERY = ("read", "listen", "both")
_RESPONSE = ("written", "speak", "click_picture", "click_read")
_CONTENT = ("letter", "digit", "both")

#: Frozen order of the inflation-model features.  The same (student, item)
#: pair always yields the identical vector.
PI_FEATURE_NAMES = (
    ("bias",)
    + _NDC
    + tuple(f"delivery_{d}" for d in _DELIVERY)
    + tuple(f"response_{r}" for r in _RESPONSE)
    + tuple(f"content_{c}" for c in _CONTENT)
    + ("density",)
    + tuple(f"{n}_x_delivery_{d}" for n in _NDC for d in _DELIVERY)
    + tuple(f"{n}_x_response_{r}" for n in _NDC for r in _RESPONSE)
    + tuple(f"{n}_x_content_{c}" for n in _NDC for c in _CONTENT)
)
PI_FEATURE_COUNT = len(PI_FEATURE_NAMES)  # 45

#: Frozen order of the KTM context features.
KTM_CONTEXT_FEATURE_NAMES = (
    tuple(f"delivery_{d}" for d in _DELIVERY)
    + tuple(f"response_{r}" for r in _RESPONSE)
    + tuple(f"content_{c}" for c in _CONTENT)
    + ("density",)
    + _NDC
)
KTM_CONTEXT_FEATURE_COUNT = len(KTM_CONTEXT_FEATURE_NAMES)  # 14


def _one_hot(codes, n):
    codes = np.asarray(codes)
    return np.equal(codes[..., None], np.arange(n)).astype(float)


def pi_features(flags, content, density, delivery, response) -> np.ndarray:
    """Feature matrix of the inflation model, one row per attempt.

    Argument order matches :func:`zilm.simulate.context_pi`; scalars
    broadcast against the leading shape of ``flags``.
    """
    flags = np.atleast_2d(np.asarray(flags, dtype=float))
    n = flags.shape[0]
    content = np.broadcast_to(np.asarray(content), (n,))
    density = np.broadcast_to(np.asarray(density, dtype=float), (n,))
    delivery = np.broadcast_to(np.asarray(delivery), (n,))
    response = np.broadcast_to(np.asarray(response), (n,))

    deliv = _one_hot(delivery, 3)
    resp = _one_hot(response, 4)
    cont = _one_hot(content, 3)
    cols = [
        np.ones((n, 1)),
        flags,
        deliv,
        resp,
        cont,
        density[:, None],
        (flags[:, :, None] * deliv[:, None, :]).reshape(n, -1),
        (flags[:, :, None] * resp[:, None, :]).reshape(n, -1),
        (flags[:, :, None] * cont[:, None, :]).reshape(n, -1),
    ]
    return np.concatenate(cols, axis=1)


def ktm_context_features(flags, content, density, delivery, response) -> np.ndarray:
    """Context feature matrix of the KTM baseline (no bias column)."""
    flags = np.atleast_2d(np.asarray(flags, dtype=float))
    n = flags.shape[0]
    content = np.broadcast_to(np.asarray(content), (n,))
    density = np.broadcast_to(np.asarray(density, dtype=float), (n,))
    delivery = np.broadcast_to(np.asarray(delivery), (n,))
    response = np.broadcast_to(np.asarray(response), (n,))
    return np.concatenate(
        [
            _one_hot(delivery, 3),
            _one_hot(response, 4),
            _one_hot(content, 3),
            density[:, None],
            flags,
        ],
        axis=1,
    )


# ---------------------------------------------------------------------------
# design matrices

@dataclass(frozen=True)
class Design:
    """Numeric view of a dataset, built once and shared by NLL evaluations."""

    n_students: int
    n_items: int
    student_idx: np.ndarray
    item_idx: np.ndarray
    y: np.ndarray
    is_train: np.ndarray
    x_pi: np.ndarray
    x_ctx: np.ndarray

    def split_mask(self, split: str) -> np.ndarray:
        if split == "train":
            mask = self.is_train
        elif split == "test":
            mask = ~self.is_train
        elif split == "all":
            mask = np.ones(len(self.y), dtype=bool)
        else:
            raise ValueError(f"unknown split {split!r} (use 'train', 'test' or 'all')")
        if not mask.any():
            raise DataError(f"split {split!r} contains no attempts")
        return mask


def build_design(dataset: Dataset) -> Design:
    _, flags = student_arrays(dataset.students)
    arrays = item_arrays(dataset.items)
    si = np.array([a.student_id for a in dataset.attempts], dtype=int)
    ii = np.array([a.item_id for a in dataset.attempts], dtype=int)
    y = np.array([a.y for a in dataset.attempts], dtype=float)
    is_train = np.array([a.split.value == "train" for a in dataset.attempts], dtype=bool)
    aflags = flags[si]
    content, density = arrays.content[ii], arrays.density[ii]
    delivery, response = arrays.delivery[ii], arrays.response[ii]
    return Design(
        n_students=len(dataset.students),
        n_items=len(dataset.items),
        student_idx=si,
        item_idx=ii,
        y=y,
        is_train=is_train,
        x_pi=pi_features(aflags, content, density, delivery, response),
        x_ctx=ktm_context_features(aflags, content, density, delivery, response),
    )


# ---------------------------------------------------------------------------
# parameters

def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class ZilmParams:
    """Unconstrained parameters of the (zero-inflated) IRT model.

    ``discrimination = softplus(a_raw)`` keeps it positive and
    ``guessing = 0.15 * sigmoid(g_raw)`` keeps it inside the generator range,
    so the optimizer runs unconstrained.
    """

    theta: np.ndarray
    b: np.ndarray
    a_raw: np.ndarray
    g_raw: np.ndarray
    w_pi: np.ndarray

    BLOCKS = ("theta", "b", "a_raw", "g_raw", "w_pi")

    def discrimination(self) -> np.ndarray:
        return softplus(self.a_raw)

    def guessing(self) -> np.ndarray:
        return GUESS_SCALE * expit(self.g_raw)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name in self.BLOCKS])

    @classmethod
    def block_slices(cls, n_students: int, n_items: int) -> dict:
        sizes = (n_students, n_items, n_items, n_items, PI_FEATURE_COUNT)
        out, lo = {}, 0
        for name, size in zip(cls.BLOCKS, sizes):
            out[name] = slice(lo, lo + size)
            lo += size
        return out

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_students: int, n_items: int) -> "ZilmParams":
        sl = cls.block_slices(n_students, n_items)
        return cls(**{name: np.asarray(vec[s], dtype=float) for name, s in sl.items()})


@dataclass
class Ktm1Params:
    """Degree-1 (purely linear) knowledge-tracing-machine parameters."""

    user_weights: np.ndarray
    item_weights: np.ndarray
    context_weights: np.ndarray
    bias: float

    BLOCKS = ("user_weights", "item_weights", "context_weights", "bias")

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.user_weights, self.item_weights, self.context_weights, [self.bias]]
        )

    @classmethod
    def block_slices(cls, n_students: int, n_items: int) -> dict:
        sizes = (n_students, n_items, KTM_CONTEXT_FEATURE_COUNT, 1)
        out, lo = {}, 0
        for name, size in zip(cls.BLOCKS, sizes):
            out[name] = slice(lo, lo + size)
            lo += size
        return out

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_students: int, n_items: int) -> "Ktm1Params":
        sl = cls.block_slices(n_students, n_items)
        return cls(
            user_weights=np.asarray(vec[sl["user_weights"]], dtype=float),
            item_weights=np.asarray(vec[sl["item_weights"]], dtype=float),
            context_weights=np.asarray(vec[sl["context_weights"]], dtype=float),
            bias=float(vec[sl["bias"]][0]),
        )


# ---------------------------------------------------------------------------
# probabilities

def zilm_success_prob(pi, p):
    """Mixture success probability ``(1 - pi) * p``; the y=0 branch is its complement."""
    pi = np.asarray(pi, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((pi < 0) | (pi > 1)):
        raise ValueError(f"pi outside [0, 1]: {pi!r}")
    if np.any((p < 0) | (p > 1)):
        raise ValueError(f"p outside [0, 1]: {p!r}")
    out = (1.0 - pi) * p
    return float(out) if out.ndim == 0 else out


def pi_of(params: ZilmParams, x) -> np.ndarray:
    """Inflation probability ``sigmoid(w_pi . x)`` for feature rows ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.w_pi.shape[0]:
        raise ValueError(
            f"feature dimension {x.shape[-1]} does not match w_pi dimension {params.w_pi.shape[0]}"
        )
    out = expit(x @ params.w_pi)
    return float(out) if out.ndim == 0 else out


def irt_prob(params: ZilmParams, student_id: int, item_id: int) -> float:
    """3PL probability from the derived (difficulty, discrimination, guessing)."""
    if not 0 <= student_id < len(params.theta):
        raise IndexError(f"student id {student_id} out of range")
    if not 0 <= item_id < len(params.b):
        raise IndexError(f"item id {item_id} out of range")
    a = softplus(params.a_raw[item_id])
    g = GUESS_SCALE * expit(params.g_raw[item_id])
    return float(g + (1.0 - g) * expit(a * (params.theta[student_id] - params.b[item_id])))


def ktm1_prob(params: Ktm1Params, student_id: int, item_id: int, context) -> float:
    """Logistic probability ``sigmoid(bias + user + item + w . context)``."""
    context = np.asarray(context, dtype=float)
    if context.shape[-1] != params.context_weights.shape[0]:
        raise ValueError(
            f"context dimension {context.shape[-1]} does not match "
            f"context_weights dimension {params.context_weights.shape[0]}"
        )
    if not 0 <= student_id < len(params.user_weights):
        raise IndexError(f"student id {student_id} out of range")
    if not 0 <= item_id < len(params.item_weights):
        raise IndexError(f"item id {item_id} out of range")
    z = (
        params.bias
        + params.user_weights[student_id]
        + params.item_weights[item_id]
        + context @ params.context_weights
    )
    return float(expit(z))


# ---------------------------------------------------------------------------
# negative log likelihood and analytic gradients

def _clip_prob(q):
    qc = np.clip(q, CLAMP, 1.0 - CLAMP)
    inside = (q > CLAMP) & (q < 1.0 - CLAMP)
    return qc, inside.astype(float)


def _zilm_parts(params: ZilmParams, design: Design, mask):
    si = design.student_idx[mask]
    ii = design.item_idx[mask]
    pi = expit(design.x_pi[mask] @ params.w_pi)
    a = softplus(params.a_raw)[ii]
    g = (GUESS_SCALE * expit(params.g_raw))[ii]
    s = expit(a * (params.theta[si] - params.b[ii]))
    p = g + (1.0 - g) * s
    return si, ii, pi, a, g, s, p


def _penalty(blocks, l2s):
    total = 0.0
    for arr, l2 in zip(blocks, l2s):
        if l2:
            total += l2 * float(np.mean(np.square(arr)))
    return total


def zilm_nll(params: ZilmParams, design: Design, split: str = "train",
             l2_theta: float = 0.0, l2_item: float = 0.0, l2_weights: float = 0.0) -> float:
    """Mean NLL of the mixture over the split, plus optional L2 penalties.

    Log arguments are clamped at 1e-12, so the value is finite for all
    finite parameters.
    """
    mask = design.split_mask(split)
    _, _, pi, _, _, _, p = _zilm_parts(params, design, mask)
    q = (1.0 - pi) * p
    qc, _ = _clip_prob(q)
    y = design.y[mask]
    nll = -float(np.mean(y * np.log(qc) + (1.0 - y) * np.log1p(-qc)))
    nll += _penalty((params.theta,), (l2_theta,))
    nll += _penalty((params.b, params.a_raw, params.g_raw), (l2_item,) * 3)
    nll += _penalty((params.w_pi,), (l2_weights,))
    return nll


def zilm_grad(params: ZilmParams, design: Design, split: str = "train",
              l2_theta: float = 0.0, l2_item: float = 0.0, l2_weights: float = 0.0) -> ZilmParams:
    """Analytic gradient of :func:`zilm_nll` over every parameter block."""
    mask = design.split_mask(split)
    si, ii, pi, a, g, s, p = _zilm_parts(params, design, mask)
    y = design.y[mask]
    n = float(len(y))

    q = (1.0 - pi) * p
    qc, inside = _clip_prob(q)
    # d nll / d q, respecting the clamp (zero where the clamp is active)
    r = (qc - y) / (qc * (1.0 - qc)) * inside / n

    # q = (1 - pi) p
    dq_dpi = -p
    dq_dp = 1.0 - pi

    # pi = sigmoid(x . w)
    w_scale = r * dq_dpi * pi * (1.0 - pi)
    grad_w = design.x_pi[mask].T @ w_scale

    # p = g + (1 - g) s,  s = sigmoid(a (theta - b))
    gp = r * dq_dp
    ds = gp * (1.0 - g) * s * (1.0 - s)
    grad_theta = np.bincount(si, weights=ds * a, minlength=len(params.theta))
    grad_b = np.bincount(ii, weights=-ds * a, minlength=len(params.b))
    grad_a = np.bincount(ii, weights=ds * (params.theta[si] - params.b[ii]),
                         minlength=len(params.b))
    grad_a_raw = grad_a * expit(params.a_raw)  # softplus'
    grad_g = np.bincount(ii, weights=gp * (1.0 - s), minlength=len(params.b))
    sg = expit(params.g_raw)
    grad_g_raw = grad_g * GUESS_SCALE * sg * (1.0 - sg)

    if l2_theta:
        grad_theta = grad_theta + 2.0 * l2_theta * params.theta / len(params.theta)
    if l2_item:
        grad_b = grad_b + 2.0 * l2_item * params.b / len(params.b)
        grad_a_raw = grad_a_raw + 2.0 * l2_item * params.a_raw / len(params.a_raw)
        grad_g_raw = grad_g_raw + 2.0 * l2_item * params.g_raw / len(params.g_raw)
    if l2_weights:
        grad_w = grad_w + 2.0 * l2_weights * params.w_pi / len(params.w_pi)

    return ZilmParams(theta=grad_theta, b=grad_b, a_raw=grad_a_raw,
                      g_raw=grad_g_raw, w_pi=grad_w)


def ktm1_nll(params: Ktm1Params, design: Design, split: str = "train",
             l2_theta: float = 0.0, l2_item: float = 0.0, l2_weights: float = 0.0) -> float:
    """Binary cross-entropy of the KTM baseline plus optional L2 penalties."""
    mask = design.split_mask(split)
    z = (params.bias + params.user_weights[design.student_idx[mask]]
         + params.item_weights[design.item_idx[mask]]
         + design.x_ctx[mask] @ params.context_weights)
    phat = expit(z)
    pc, _ = _clip_prob(phat)
    y = design.y[mask]
    nll = -float(np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))
    nll += _penalty((params.user_weights,), (l2_theta,))
    nll += _penalty((params.item_weights,), (l2_item,))
    nll += _penalty((params.context_weights,), (l2_weights,))
    return nll


def ktm1_grad(params: Ktm1Params, design: Design, split: str = "train",
              l2_theta: float = 0.0, l2_item: float = 0.0, l2_weights: float = 0.0) -> Ktm1Params:
    """Analytic gradient of :func:`ktm1_nll`."""
    mask = design.split_mask(split)
    si = design.student_idx[mask]
    ii = design.item_idx[mask]
    z = (params.bias + params.user_weights[si] + params.item_weights[ii]
         + design.x_ctx[mask] @ params.context_weights)
    phat = expit(z)
    pc, inside = _clip_prob(phat)
    y = design.y[mask]
    n = float(len(y))
    # for unclamped BCE, d nll / d z = (phat - y); keep the clamp-aware form
    dz = (pc - y) / (pc * (1.0 - pc)) * inside * phat * (1.0 - phat) / n

    grad_user = np.bincount(si, weights=dz, minlength=len(params.user_weights))
    grad_item = np.bincount(ii, weights=dz, minlength=len(params.item_weights))
    grad_ctx = design.x_ctx[mask].T @ dz
    grad_bias = float(np.sum(dz))

    if l2_theta:
        grad_user = grad_user + 2.0 * l2_theta * params.user_weights / len(params.user_weights)
    if l2_item:
        grad_item = grad_item + 2.0 * l2_item * params.item_weights / len(params.item_weights)
    if l2_weights:
        grad_ctx = grad_ctx + 2.0 * l2_weights * params.context_weights / len(params.context_weights)

    return Ktm1Params(user_weights=grad_user, item_weights=grad_item,
                      context_weights=grad_ctx, bias=grad_bias)
