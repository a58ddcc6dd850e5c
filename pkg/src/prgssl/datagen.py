"""Synthetic class-paired Gaussian data with MNAR labeled/unlabeled splits.

Class indices are 0-based throughout the package: class ``i`` here is class
``i + 1`` in the usual 1-based count formulas.
"""

import csv
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleSpecError, InvalidParameterError
from .rng import stream

PROTOCOLS = ("cadr", "ours", "darp", "balanced")
ROUNDING_MODES = ("round", "floor")

_EPS = 1e-9


def _integerize(x: float, rounding: str = "round") -> int:
    if rounding == "round":
        n = math.floor(x + 0.5 + _EPS)
    elif rounding == "floor":
        n = math.floor(x + _EPS)
    else:
        raise InvalidParameterError(f"unknown rounding mode {rounding!r}")
    return max(1, int(n))


def _decay_profile(head: float, ratio: float, k: int, reversed_order: bool = False) -> list:
    """head * ratio^(-(i-1)/(k-1)) for i=1..k (or the mirrored exponent)."""
    out = []
    for i in range(1, k + 1):
        e = (k - i) if reversed_order else (i - 1)
        out.append(head * ratio ** (-e / (k - 1)))
    return out


def cadr_label_counts(gamma: float, k: int, rounding: str = "round") -> list:
    """N_i = gamma^((k-i)/(k-1)); the head class holds gamma samples, the tail one."""
    if k < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    if not gamma >= 1:
        raise InvalidParameterError(f"gamma must be >= 1, got {gamma}")
    return [_integerize(gamma ** ((k - i) / (k - 1)), rounding) for i in range(1, k + 1)]


def _solve_gamma(n_labeled: int, n1: int, k: int) -> float:
    # sum_i n1 * g^(-(i-1)/(k-1)) is strictly decreasing in g; bisect on log g.
    target = n_labeled / n1

    def total(log_g):
        r = math.exp(-log_g / (k - 1))
        return k if r == 1.0 else (1.0 - r ** k) / (1.0 - r)

    if abs(total(0.0) - target) < 1e-12:
        return 1.0
    lo, hi = 0.0, 1.0
    while total(hi) > target:
        hi *= 2.0
        if hi > 1e4:
            raise InfeasibleSpecError("no finite gamma satisfies the labeled-size constraint")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def ours_label_counts(n_labeled: int, n1: int, k: int, rounding: str = "round"):
    """Counts with a fixed total ``n_labeled`` and head size ``n1``.

    Returns ``(counts, gamma)``. Gamma comes from bisection on the continuous
    profile; the rounded counts are then nudged one unit at a time (most
    under-rounded entries first when short, most over-rounded first when
    over) until they sum to ``n_labeled``. The head count is never touched.
    """
    if k < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    if n1 < 1 or n_labeled < 1:
        raise InvalidParameterError("n1 and n_labeled must be positive")
    if n_labeled > n1 * k:
        raise InfeasibleSpecError(f"n_labeled={n_labeled} exceeds n1*k={n1 * k}")
    # every class keeps at least one label
    if n_labeled < n1 + (k - 1):
        raise InfeasibleSpecError(
            f"n_labeled={n_labeled} < n1 + k - 1 = {n1 + k - 1}; tail classes would be empty")

    gamma = _solve_gamma(n_labeled, n1, k)
    exact = _decay_profile(float(n1), gamma, k)
    exact[0] = float(n1)
    counts = [_integerize(x, rounding) for x in exact]
    counts[0] = n1

    while sum(counts) != n_labeled:
        short = sum(counts) < n_labeled
        resid = [exact[i] - counts[i] for i in range(k)]
        order = sorted(range(1, k), key=lambda i: (-resid[i], i) if short else (resid[i], -i))
        for i in order:
            if short:
                ok = counts[i] + 1 <= counts[i - 1]
            else:
                nxt = counts[i + 1] if i + 1 < k else 1
                ok = counts[i] - 1 >= max(1, nxt)
            if ok:
                counts[i] += 1 if short else -1
                break
        else:
            raise InfeasibleSpecError("could not repair rounded counts to the requested total")
    return counts, gamma


def unlabeled_counts(m1: int, gamma_u: Optional[float], k: int, reversed_order: bool = False,
                     rounding: str = "round") -> list:
    if gamma_u is None:
        return [int(m1)] * k
    if not gamma_u >= 1:
        raise InvalidParameterError(f"gamma_u must be >= 1, got {gamma_u}")
    return [_integerize(x, rounding) for x in _decay_profile(float(m1), gamma_u, k, reversed_order)]


def darp_counts(n1: int, gamma_l: float, m1: int, gamma_u: float, k: int,
                reversed_order: bool = False, rounding: str = "round"):
    """Labeled and unlabeled counts, both geometric profiles with their own ratios."""
    if k < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    if not (gamma_l >= 1 and gamma_u >= 1):
        raise InvalidParameterError(f"ratios must be >= 1, got gamma_l={gamma_l}, gamma_u={gamma_u}")
    labeled = [_integerize(x, rounding) for x in _decay_profile(float(n1), gamma_l, k)]
    return labeled, unlabeled_counts(m1, gamma_u, k, reversed_order, rounding)


@dataclass(frozen=True)
class MnarSpec:
    protocol: str = "cadr"
    k: int = 10
    gamma: Optional[float] = None
    n_labeled: Optional[int] = None
    n1_labeled: Optional[int] = None
    gamma_l: Optional[float] = None
    gamma_u: Optional[float] = None
    m1_unlabeled: int = 500
    unlabeled_reversed: bool = False
    rounding: str = "round"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidParameterError(f"unknown protocol {self.protocol!r}")
        if self.k < 2:
            raise InvalidParameterError(f"k must be >= 2, got {self.k}")
        if self.rounding not in ROUNDING_MODES:
            raise InvalidParameterError(f"unknown rounding mode {self.rounding!r}")
        for name in ("gamma", "gamma_l", "gamma_u"):
            v = getattr(self, name)
            if v is not None and not v >= 1:
                raise InvalidParameterError(f"{name} must be >= 1, got {v}")
        if (self.n1_labeled is not None and self.n_labeled is not None
                and self.n1_labeled > self.n_labeled):
            raise InvalidParameterError("n1_labeled must not exceed n_labeled")
        required = {"cadr": ("gamma",), "ours": ("n_labeled", "n1_labeled"),
                    "darp": ("n1_labeled", "gamma_l"), "balanced": ("n1_labeled",)}
        for name in required[self.protocol]:
            if getattr(self, name) is None:
                raise InvalidParameterError(f"protocol {self.protocol!r} requires {name}")

    def counts(self):
        """(labeled counts, unlabeled counts) for this protocol."""
        if self.protocol == "darp":
            return darp_counts(self.n1_labeled, self.gamma_l, self.m1_unlabeled,
                               self.gamma_u if self.gamma_u is not None else 1.0,
                               self.k, self.unlabeled_reversed, self.rounding)
        if self.protocol == "cadr":
            lab = cadr_label_counts(self.gamma, self.k, self.rounding)
        elif self.protocol == "ours":
            lab, _ = ours_label_counts(self.n_labeled, self.n1_labeled, self.k, self.rounding)
        else:
            lab = [int(self.n1_labeled)] * self.k
        unl = unlabeled_counts(self.m1_unlabeled, self.gamma_u, self.k,
                               self.unlabeled_reversed, self.rounding)
        return lab, unl


@dataclass(frozen=True)
class SyntheticSpec:
    k: int = 10
    dim: int = 16
    per_class_pool: int = 600
    pair_near_distance: float = 2.0
    far_distance: float = 6.0
    noise_sigma: float = 1.0
    n_test_per_class: int = 200
    paired: bool = True

    def __post_init__(self):
        if self.k < 2 or self.dim < 2:
            raise InvalidParameterError("k and dim must be >= 2")
        if self.paired and self.k % 2:
            raise InvalidParameterError("paired classes need an even k")
        if self.dim < self.k:
            raise InvalidParameterError(f"dim={self.dim} too small to place {self.k} class means")
        if not 0 < self.pair_near_distance < self.far_distance:
            raise InvalidParameterError("need 0 < pair_near_distance < far_distance")
        if self.noise_sigma < 0:
            raise InvalidParameterError("noise_sigma must be >= 0")


def class_means(syn: SyntheticSpec, rng=None) -> np.ndarray:
    """Class means with the pair geometry.

    Pair centers sit on orthogonal axes, ``far_distance`` apart from each
    other; the two members of pair ``p`` (classes ``2p`` and ``2p+1``) are
    offset by +-pair_near_distance/2 along a second private axis. With an
    ``rng`` the layout is turned by a random rotation, which keeps every
    distance but spreads class evidence over all features.
    """
    means = _axis_means(syn)
    if rng is None:
        return means
    q, r = np.linalg.qr(rng.standard_normal((syn.dim, syn.dim)))
    q = q * np.sign(np.diag(r))
    return means @ q.T


def _axis_means(syn: SyntheticSpec) -> np.ndarray:
    means = np.zeros((syn.k, syn.dim))
    radius = syn.far_distance / math.sqrt(2.0)
    if not syn.paired:
        for c in range(syn.k):
            means[c, c] = radius
        return means
    n_pairs = syn.k // 2
    for p in range(n_pairs):
        for sign, c in ((1.0, 2 * p), (-1.0, 2 * p + 1)):
            means[c, p] = radius
            means[c, n_pairs + p] = sign * syn.pair_near_distance / 2.0
    return means


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable split. ``hidden_labels`` is for metrics only; the learner never reads it."""

    k: int
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_index: np.ndarray
    hidden_labels: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_counts_labeled: tuple
    class_counts_unlabeled: tuple

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled_index)

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in
                ("labeled_x", "labeled_y", "unlabeled_x", "unlabeled_index",
                 "hidden_labels", "test_x", "test_y")}

    def labeled_prior(self) -> np.ndarray:
        c = np.asarray(self.class_counts_labeled, dtype=float)
        return c / c.sum()


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def generate_dataset(syn: SyntheticSpec, mnar: MnarSpec, seed: int) -> Dataset:
    if syn.k != mnar.k:
        raise InvalidParameterError(f"class count mismatch: synthetic k={syn.k}, mnar k={mnar.k}")
    n_lab, n_unl = mnar.counts()
    for c in range(syn.k):
        if n_lab[c] + n_unl[c] > syn.per_class_pool:
            raise InfeasibleSpecError(
                f"class {c}: demand {n_lab[c] + n_unl[c]} exceeds pool {syn.per_class_pool}")

    rng = stream(seed, "data")
    means = class_means(syn, rng)
    lx, ly, ux, uy, tx, ty = [], [], [], [], [], []
    for c in range(syn.k):
        pool = means[c] + syn.noise_sigma * rng.standard_normal((syn.per_class_pool, syn.dim))
        perm = rng.permutation(syn.per_class_pool)
        lx.append(pool[perm[:n_lab[c]]])
        ly.append(np.full(n_lab[c], c, dtype=np.int64))
        ux.append(pool[perm[n_lab[c]:n_lab[c] + n_unl[c]]])
        uy.append(np.full(n_unl[c], c, dtype=np.int64))
        tx.append(means[c] + syn.noise_sigma * rng.standard_normal((syn.n_test_per_class, syn.dim)))
        ty.append(np.full(syn.n_test_per_class, c, dtype=np.int64))

    order = rng.permutation(sum(n_unl))
    ux = np.concatenate(ux)[order]
    uy = np.concatenate(uy)[order]
    return Dataset(
        k=syn.k,
        labeled_x=_frozen(np.concatenate(lx)),
        labeled_y=_frozen(np.concatenate(ly)),
        unlabeled_x=_frozen(ux),
        unlabeled_index=_frozen(np.arange(len(uy), dtype=np.int64)),
        hidden_labels=_frozen(uy),
        test_x=_frozen(np.concatenate(tx)),
        test_y=_frozen(np.concatenate(ty)),
        class_counts_labeled=tuple(int(n) for n in n_lab),
        class_counts_unlabeled=tuple(int(n) for n in n_unl),
    )


def write_dataset_csv(ds: Dataset, out_dir) -> list:
    """One CSV per split; hidden unlabeled labels go to their own file."""
    os.makedirs(out_dir, exist_ok=True)
    dim = ds.labeled_x.shape[1]
    header = ["index", "label", "missing"] + [f"f{j + 1}" for j in range(dim)]
    paths = []

    def dump(name, xs, labels, missing, index):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, x in enumerate(xs):
                label = "" if labels is None else int(labels[i])
                w.writerow([int(index[i]), label, missing] + [repr(float(v)) for v in x])
        paths.append(path)

    dump("labeled.csv", ds.labeled_x, ds.labeled_y, 0, np.arange(len(ds.labeled_y)))
    dump("unlabeled.csv", ds.unlabeled_x, None, 1, ds.unlabeled_index)
    dump("test.csv", ds.test_x, ds.test_y, 0, np.arange(len(ds.test_y)))
    path = os.path.join(out_dir, "hidden_labels.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        for i, y in zip(ds.unlabeled_index, ds.hidden_labels):
            w.writerow([int(i), int(y)])
    paths.append(path)
    return paths
