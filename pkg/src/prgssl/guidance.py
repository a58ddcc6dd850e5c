"""Transition-matrix guidance and the eta-rescaling family of pseudo-label schemes.

Probability vectors and matrices are plain numpy arrays. Every rescaling is
``normalize(weights * p)``; the schemes differ only in where the weights
come from.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProductError, InvalidParameterError

SIMPLEX_TOL = 1e-9


def check_prob_vector(p, tol=SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise InvalidParameterError("not a probability vector")
    return p


def argmax(p, axis=-1):
    # np.argmax already returns the first maximum: lowest class index wins ties
    return np.argmax(p, axis=axis)


@dataclass(frozen=True)
class RectifyingWeights:
    eta: np.ndarray
    excluded: bool = False


def build_transition_matrix(C, alpha: float, renormalize_rows: bool = False) -> np.ndarray:
    """Row-normalize the tracking matrix and set every diagonal entry to alpha/(k-1).

    All-zero rows fall back to the uniform off-diagonal row 1/(k-1). Rows are
    not renormalized after the diagonal goes in unless ``renormalize_rows``.
    """
    if not alpha >= 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    C = np.asarray(C, dtype=float)
    k = C.shape[0]
    if C.shape != (k, k) or np.any(C < 0) or np.any(np.diag(C) != 0):
        raise InvalidParameterError("C must be square, nonnegative, with zero diagonal")
    sums = C.sum(axis=1, keepdims=True)
    uniform = np.full((k, k), 1.0 / (k - 1))
    H = np.where(sums > 0, C / np.where(sums > 0, sums, 1.0), uniform)
    np.fill_diagonal(H, alpha / (k - 1))
    if renormalize_rows:
        H = H / H.sum(axis=1, keepdims=True)
    return H


def class_rescale(H, L) -> np.ndarray:
    """Divide column j of H by the share of predictions landing in class j.

    Counts are clamped below at 1 so an unpredicted class cannot divide by zero.
    """
    H = np.asarray(H, dtype=float)
    L = np.maximum(np.asarray(L, dtype=float), 1.0)
    if L.shape != (H.shape[1],):
        raise InvalidParameterError("prediction counts do not match matrix size")
    return H / (L / L.sum())[None, :]


def _power(M, steps: int) -> np.ndarray:
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    out = M
    for _ in range(steps - 1):
        out = out @ M
    return out


def guidance_matrix(Hp, steps: int = 1) -> np.ndarray:
    return _power(np.asarray(Hp, dtype=float), steps)


def _normalize(w, p, on_degenerate):
    q = w * p
    z = q.sum()
    if z <= 0 or not np.isfinite(z):
        if on_degenerate == "raise":
            raise DegenerateProductError("rescaled probabilities sum to zero")
        return np.array(p, dtype=float), True
    return q / z, False


def prg_rescale(p, guide_class: int, Hp, steps: int = 1, on_degenerate: str = "raise"):
    """Select a row of H' (or of H'^steps) and use it as the weight vector for p."""
    p = np.asarray(p, dtype=float)
    Hp = np.asarray(Hp, dtype=float)
    k = p.shape[0]
    if not 0 <= guide_class < k:
        raise InvalidParameterError(f"guide class {guide_class} outside [0, {k})")
    row = guidance_matrix(Hp, steps)[guide_class]
    out, _ = _normalize(row, p, on_degenerate)
    return out


def prg_rescale_batch(P, guide, G):
    """Vectorized rescale with a precomputed guidance matrix ``G``.

    Returns ``(P_tilde, degenerate_mask)``; degenerate rows fall back to the
    raw prediction.
    """
    W = G[np.asarray(guide)]
    Q = W * P
    z = Q.sum(axis=1, keepdims=True)
    bad = ~(z[:, 0] > 0) | ~np.isfinite(z[:, 0])
    out = Q / np.where(bad[:, None], 1.0, z)
    if bad.any():
        out[bad] = P[bad]
    return out, bad


def eta_rescale(p, w: RectifyingWeights, on_degenerate: str = "raise"):
    """Normalize(eta * p), or None when the sample is excluded."""
    if w.excluded:
        return None
    p = np.asarray(p, dtype=float)
    eta = np.asarray(w.eta, dtype=float)
    if eta.shape != p.shape:
        raise InvalidParameterError("eta and p lengths differ")
    out, _ = _normalize(eta, p, on_degenerate)
    return out


def confidence_eta(p, tau: float) -> RectifyingWeights:
    p = np.asarray(p, dtype=float)
    i = int(argmax(p))
    if p[i] >= tau:
        eta = np.zeros_like(p)
        eta[i] = 1.0 / p[i]
        return RectifyingWeights(eta, False)
    return RectifyingWeights(np.zeros_like(p), True)


def distribution_alignment_eta(prior, running, floor: float = 1e-6) -> RectifyingWeights:
    prior = np.asarray(prior, dtype=float)
    running = np.maximum(np.asarray(running, dtype=float), floor)
    return RectifyingWeights(prior / running, False)


def rescaled_ce_gradient(p, p_tilde) -> np.ndarray:
    """Logit gradient of -sum(p_tilde * log p) with p_tilde held fixed."""
    return np.asarray(p, dtype=float) - np.asarray(p_tilde, dtype=float)


def rescaled_ce_gradient_factored(p, H_row, L) -> np.ndarray:
    """Same gradient written as (1 - H_c / (Z * share_c)) * p_c.

    ``H_row`` is the unrescaled transition row for the guide class and
    ``share_c`` the clamped prediction share of class c; Z normalizes the
    rescaled pseudo-label.
    """
    p = np.asarray(p, dtype=float)
    L = np.maximum(np.asarray(L, dtype=float), 1.0)
    share = L / L.sum()
    z = np.sum(np.asarray(H_row, dtype=float) / share * p)
    return (1.0 - np.asarray(H_row, dtype=float) / (z * share)) * p
