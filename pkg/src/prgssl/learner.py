"""Self-training MLP learner with pseudo-rectifying guidance.

One training iteration draws a labeled and an unlabeled mini-batch, predicts
on weak views of the unlabeled batch, turns those predictions into
pseudo-labels (optionally rescaled by the transition guidance), tracks class
transitions in the label bank, and takes one SGD step on
``L_labeled + lambda_u * L_unlabeled``.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import guidance as gd
from .errors import InvalidParameterError, NonFiniteGradientError
from .metrics import (MetricRecord, accuracy, confusion_matrix, gm_score,
                      per_class_precision_recall, pseudo_label_error_rates)
from .rng import streams
from .tracking import LabelBank, TrackingWindow, finalize_batch, symmetry_score

MODES = ("none", "prg", "prg_last", "confidence_only", "distribution_alignment")


@dataclass(frozen=True)
class LearnerConfig:
    tau: float = 0.95
    lambda_u: float = 1.0
    b_labeled: int = 16
    mu: int = 7
    lr: float = 0.03
    beta: float = 0.9
    weight_decay: float = 0.0005
    n_b: int = 128
    alpha: float = 1.0
    steps: int = 1
    mode: str = "prg"
    rescale_eq6: bool = True
    max_iterations: int = 20000
    eval_every: int = 500
    hidden: int = 64
    threshold_on_raw: bool = False
    track_raw_argmax: bool = False
    count_post_threshold: bool = False
    renormalize_rows: bool = False
    soft_targets: bool = False

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise InvalidParameterError("tau must lie in (0, 1]")
        if self.lambda_u < 0 or self.mu < 1 or self.lr <= 0 or self.weight_decay < 0:
            raise InvalidParameterError("need lambda_u >= 0, mu >= 1, lr > 0, weight_decay >= 0")
        if not 0 <= self.beta < 1:
            raise InvalidParameterError("momentum beta must lie in [0, 1)")
        if self.n_b < 1 or self.alpha < 0 or self.steps < 1:
            raise InvalidParameterError("need n_b >= 1, alpha >= 0, steps >= 1")
        if self.b_labeled < 1 or self.hidden < 1 or self.eval_every < 1 or self.max_iterations < 0:
            raise InvalidParameterError("batch size, width, eval interval must be positive")
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown mode {self.mode!r}")

    @property
    def b_unlabeled(self) -> int:
        return self.mu * self.b_labeled


@dataclass(frozen=True)
class AugmentationConfig:
    weak_sigma: float = 0.1
    strong_sigma: float = 0.5
    strong_drop_fraction: float = 0.2

    def __post_init__(self):
        if not 0 <= self.weak_sigma < self.strong_sigma:
            raise InvalidParameterError("need 0 <= weak_sigma < strong_sigma")
        if not 0 <= self.strong_drop_fraction < 1:
            raise InvalidParameterError("strong_drop_fraction must lie in [0, 1)")


def weak_view(x, aug: AugmentationConfig, rng):
    return x + aug.weak_sigma * rng.standard_normal(x.shape)


def strong_view(x, aug: AugmentationConfig, rng):
    noisy = x + aug.strong_sigma * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= aug.strong_drop_fraction
    return noisy * keep


# --- model -----------------------------------------------------------------

@dataclass
class MlpModel:
    """input -> hidden -> hidden -> k with ReLU; params are [W1, b1, W2, b2, W3, b3]."""

    params: list

    @classmethod
    def init(cls, in_dim, hidden, k, rng, zero_output=False):
        W1 = rng.standard_normal((in_dim, hidden)) * math.sqrt(2.0 / in_dim)
        W2 = rng.standard_normal((hidden, hidden)) * math.sqrt(2.0 / hidden)
        W3 = rng.standard_normal((hidden, k)) * math.sqrt(1.0 / hidden)
        if zero_output:
            W3 = np.zeros_like(W3)
        return cls([W1, np.zeros(hidden), W2, np.zeros(hidden), W3, np.zeros(k)])

    @property
    def in_dim(self):
        return self.params[0].shape[0]

    @property
    def k(self):
        return self.params[4].shape[1]

    def logits(self, X):
        W1, b1, W2, b2, W3, b3 = self.params
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != W1.shape[0]:
            raise InvalidParameterError(f"feature length {X.shape[-1]} != input width {W1.shape[0]}")
        a1 = X @ W1 + b1
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ W2 + b2
        h2 = np.maximum(a2, 0.0)
        return h2 @ W3 + b3, (X, a1, h1, a2, h2)

    def backward(self, cache, dlogits):
        X, a1, h1, a2, h2 = cache
        W1, b1, W2, b2, W3, b3 = self.params
        dW3 = h2.T @ dlogits
        db3 = dlogits.sum(axis=0)
        dh2 = (dlogits @ W3.T) * (a2 > 0)
        dW2 = h1.T @ dh2
        db2 = dh2.sum(axis=0)
        dh1 = (dh2 @ W2.T) * (a1 > 0)
        dW1 = X.T @ dh1
        db1 = dh1.sum(axis=0)
        return [dW1, db1, dW2, db2, dW3, db3]

    def copy(self):
        return MlpModel([p.copy() for p in self.params])


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, features) -> np.ndarray:
    return softmax(model.logits(features)[0])


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def objective(model, x_labeled, y_labeled, x_strong, targets, mask, lambda_u):
    """Loss terms and parameter gradients with the unlabeled targets held fixed.

    ``targets`` is a (B_U, k) array (one-hot or soft); ``mask`` selects the
    samples that enter the unlabeled loss. Returns ``(L_L, L_U, grads)``.
    """
    if len(y_labeled) == 0:
        raise InvalidParameterError("empty labeled batch")
    nl = len(y_labeled)
    nu = len(x_strong)
    X = np.concatenate([x_labeled, x_strong]) if nu else np.asarray(x_labeled)
    z, cache = model.logits(X)
    logp = _log_softmax(z)
    P = np.exp(logp)
    k = z.shape[1]

    onehot = np.zeros((nl, k))
    onehot[np.arange(nl), y_labeled] = 1.0
    loss_l = float(-np.sum(onehot * logp[:nl]) / nl)
    dz = np.empty_like(z)
    dz[:nl] = (P[:nl] - onehot) / nl

    loss_u = 0.0
    if nu:
        m = np.asarray(mask, dtype=float)[:, None]
        ce = -np.sum(targets * logp[nl:], axis=1)
        loss_u = float(np.sum(m[:, 0] * ce) / nu)
        # d/dz of -sum t log softmax(z) is softmax(z) * sum(t) - t
        tsum = targets.sum(axis=1, keepdims=True)
        dz[nl:] = lambda_u * m * (P[nl:] * tsum - targets) / nu
    return loss_l, loss_u, model.backward(cache, dz)


def sgd_step(model: MlpModel, grads, velocity, lr_t, beta, weight_decay):
    """Heavy-ball step: v <- beta*v + g + w*theta; theta <- theta - lr_t*v. Updates in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient")
    for theta, g, v in zip(model.params, grads, velocity):
        v *= beta
        v += g + weight_decay * theta
        theta -= lr_t * v
    return model


def cosine_lr(lr, t, total):
    if total <= 0:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * t / total))


# --- training state --------------------------------------------------------

@dataclass
class TrainState:
    model: MlpModel
    velocity: list
    bank: LabelBank
    window: TrackingWindow
    rngs: dict
    prior: np.ndarray
    da_history: deque
    iteration: int = 0
    last_guidance: Optional[np.ndarray] = None
    degenerate_count: int = 0
    log: list = field(default_factory=list)


def init_state(dataset, config: LearnerConfig, seed: int) -> TrainState:
    rngs = streams(seed)
    model = MlpModel.init(dataset.labeled_x.shape[1], config.hidden, dataset.k, rngs["init"])
    return TrainState(
        model=model,
        velocity=[np.zeros_like(p) for p in model.params],
        bank=LabelBank(dataset.n_unlabeled, dataset.k),
        window=TrackingWindow(config.n_b, dataset.k),
        rngs=rngs,
        prior=dataset.labeled_prior(),
        da_history=deque(maxlen=config.n_b),
    )


def current_guidance(window: TrackingWindow, config: LearnerConfig) -> Optional[np.ndarray]:
    """H' (raised to ``steps``) from the window, or None during warm-up."""
    if len(window) == 0:
        return None
    H = gd.build_transition_matrix(window.averaged_matrix(), config.alpha, config.renormalize_rows)
    if config.rescale_eq6:
        H = gd.class_rescale(H, window.averaged_counts())
    return gd.guidance_matrix(H, config.steps)


@dataclass
class LossResult:
    loss_l: float
    loss_u: float
    p_tilde: np.ndarray
    pseudo_labels: np.ndarray
    mask: np.ndarray
    events: list
    matrix: np.ndarray
    tally: np.ndarray
    grads: list
    degenerate: int


def _pseudo_targets(P, idx, config, G, bank, da_running, prior):
    """Rescaled pseudo-label distributions for a batch, read against a bank snapshot.

    Returns ``(P_tilde, excluded, degenerate_mask, guide)``; ``guide`` is the
    row each prg_last sample used (-1 when none).
    """
    n, k = P.shape
    excluded = np.zeros(n, dtype=bool)
    bad = np.zeros(n, dtype=bool)
    guide = np.full(n, -1, dtype=np.int64)
    mode = config.mode
    if mode == "prg" and G is not None:
        guide = gd.argmax(P, axis=1)
        Pt, bad = gd.prg_rescale_batch(P, guide, G)
    elif mode == "prg_last" and G is not None:
        guide = bank.slots[idx].copy()
        has = guide >= 0
        Pt = P.copy()
        if has.any():
            Pt[has], bad_h = gd.prg_rescale_batch(P[has], guide[has], G)
            bad[np.flatnonzero(has)[bad_h]] = True
    elif mode == "confidence_only":
        top = gd.argmax(P, axis=1)
        excluded = P[np.arange(n), top] < config.tau
        Pt = np.zeros_like(P)
        Pt[np.arange(n), top] = 1.0
        Pt[excluded] = P[excluded]
    elif mode == "distribution_alignment":
        eta = gd.distribution_alignment_eta(prior, da_running).eta
        Q = P * eta
        z = Q.sum(axis=1, keepdims=True)
        bad = ~(z[:, 0] > 0)
        Pt = np.where(bad[:, None], P, Q / np.where(bad[:, None], 1.0, z))
    else:
        Pt = P.copy()
    return Pt, excluded, bad, guide


def losses(model, xl, yl, xu_weak, xu_strong, idx, config, G, bank, da_running=None, prior=None):
    """FixMatch-style loss terms with guided pseudo-labels.

    Mutates ``bank``: one observe per unlabeled sample, in batch order.
    """
    P = forward(model, xu_weak)
    Pt, excluded, bad, guide = _pseudo_targets(P, idx, config, G, bank, da_running, prior)
    n, k = P.shape
    raw_top = gd.argmax(P, axis=1)
    last = config.mode == "prg_last" and G is not None

    events = []
    track = np.empty(n, dtype=np.int64)
    for b in range(n):
        i = int(idx[b])
        if last and bank.slots[i] != guide[b]:
            # repeated index: its earlier copy in this batch already moved the bank
            guide[b] = bank.slots[i]
            row, row_bad = gd.prg_rescale_batch(P[b:b + 1], guide[b:b + 1], G)
            Pt[b], bad[b] = row[0], row_bad[0]
        label = raw_top[b] if (config.track_raw_argmax or excluded[b]) else gd.argmax(Pt[b])
        track[b] = label
        ev = bank.observe(i, int(label))
        if ev is not None:
            events.append(ev)

    hard = gd.argmax(Pt, axis=1)
    conf = P.max(axis=1) if config.threshold_on_raw else Pt.max(axis=1)
    mask = (conf >= config.tau) & ~excluded

    if config.soft_targets:
        targets = Pt
    else:
        targets = np.zeros_like(P)
        targets[np.arange(n), hard] = 1.0

    loss_l, loss_u, grads = objective(model, xl, yl, xu_strong, targets, mask, config.lambda_u)
    matrix, tally = finalize_batch(events, track[mask] if config.count_post_threshold else track, k)
    return LossResult(loss_l, loss_u, Pt, hard, mask, events, matrix, tally, grads, int(bad.sum()))


def _da_running(state, P):
    state.da_history.append(P.mean(axis=0))
    return np.mean(state.da_history, axis=0)


def train_iteration(state: TrainState, dataset, config: LearnerConfig, aug: AugmentationConfig) -> dict:
    """One guided self-training step; mutates ``state`` and returns a log record."""
    G = current_guidance(state.window, config)

    rb, ra = state.rngs["batch"], state.rngs["augment"]
    li = rb.integers(0, len(dataset.labeled_y), config.b_labeled)
    ui = rb.integers(0, dataset.n_unlabeled, config.b_unlabeled)
    xl = weak_view(dataset.labeled_x[li], aug, ra)
    xu = dataset.unlabeled_x[ui]
    xw = weak_view(xu, aug, ra)
    xs = strong_view(xu, aug, ra)
    idx = dataset.unlabeled_index[ui]

    da_running = None
    if config.mode == "distribution_alignment":
        da_running = _da_running(state, forward(state.model, xw))

    res = losses(state.model, xl, dataset.labeled_y[li], xw, xs, idx, config, G,
                 state.bank, da_running, state.prior)
    state.window.push(res.matrix, res.tally)

    lr_t = cosine_lr(config.lr, state.iteration, config.max_iterations)
    sgd_step(state.model, res.grads, state.velocity, lr_t, config.beta, config.weight_decay)

    state.iteration += 1
    state.last_guidance = G
    state.degenerate_count += res.degenerate
    return {
        "iteration": state.iteration,
        "loss_l": res.loss_l,
        "loss_u": res.loss_u,
        "loss": res.loss_l + config.lambda_u * res.loss_u,
        "accepted": float(res.mask.mean()),
        "pseudo_labels": res.pseudo_labels,
        "mask": res.mask,
        "indices": idx,
        "lr": lr_t,
        "guided": G is not None,
    }


def pool_pseudo_labels(state: TrainState, dataset, config: LearnerConfig):
    """Pseudo-labels and acceptance over the whole unlabeled pool (clean views, no mutation).

    Uses the guidance applied in the most recent training step.
    """
    P = forward(state.model, dataset.unlabeled_x)
    da = np.mean(state.da_history, axis=0) if state.da_history else P.mean(axis=0)
    Pt, excluded, _, _ = _pseudo_targets(P, dataset.unlabeled_index, config, state.last_guidance,
                                         state.bank, da, state.prior)
    conf = P.max(axis=1) if config.threshold_on_raw else Pt.max(axis=1)
    return gd.argmax(Pt, axis=1), (conf >= config.tau) & ~excluded


def evaluate(state: TrainState, dataset, config: LearnerConfig) -> MetricRecord:
    k = dataset.k
    pred = gd.argmax(forward(state.model, dataset.test_x), axis=1)
    conf = confusion_matrix(dataset.test_y, pred, k)
    precision, recall = per_class_precision_recall(conf)

    pseudo, accepted = pool_pseudo_labels(state, dataset, config)
    err, uncovered = pseudo_label_error_rates(dataset.hidden_labels, pseudo, accepted, k)
    sym = symmetry_score(state.window.averaged_matrix()) if len(state.window) else 0.0
    return MetricRecord(
        iteration=state.iteration,
        test_accuracy=accuracy(conf),
        gm_score=gm_score(recall),
        per_class_precision=precision,
        per_class_recall=recall,
        pseudo_error_per_class=err,
        accepted_fraction=float(accepted.mean()) if len(accepted) else 0.0,
        tracking_symmetry_score=sym,
        pseudo_uncovered=uncovered,
    )
