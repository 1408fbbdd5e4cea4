"""Stochastic Hessian oracles.

Every oracle returns a symmetric estimate H_hat(x) = H(x) + E(x) of the true
Hessian, where E is a mean-zero random perturbation.  Four constructions are
provided:

* ``Exact`` returns H(x) itself (zero noise).
* ``Subsample`` averages s per-row curvature terms drawn without replacement.
* ``GaussianSketch``, ``CountSketch`` and ``LessUniform`` compress the GLM
  square-root factor M (with M^T M + nu I = H) through a random s x n matrix
  S with E[S^T S] = I, returning M^T S^T S M + nu I.

``noise_sample`` draws repeated estimates at a fixed point and summarizes the
noise level; its tail-scale fit is a diagnostic heuristic and is never used
inside the solver.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .problem import _glm_hessian

POWER_ITERS = 50
POWER_TOL = 1e-10


class CapabilityError(TypeError):
    """Raised when an oracle kind needs structure the objective lacks."""


@dataclass(frozen=True)
class Exact:
    """Noise-free oracle: returns the exact Hessian."""


@dataclass(frozen=True)
class Subsample:
    """Subsampled Hessian from s data rows drawn without replacement."""

    s: int

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("sample size s must be >= 1")


@dataclass(frozen=True)
class GaussianSketch:
    """Sketch with i.i.d. N(0, 1/s) entries."""

    s: int

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("sketch size s must be >= 1")


@dataclass(frozen=True)
class CountSketch:
    """Sketch with one +-1 entry per column, placed in a uniform row."""

    s: int

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("sketch size s must be >= 1")


@dataclass(frozen=True)
class LessUniform:
    """Sparse sketch with a fixed number of +-c nonzeros per row.

    Each of the s rows carries nnz_per_row nonzeros at distinct uniform
    positions with values +-sqrt(n/(s*nnz_per_row)), the unique scaling
    giving E[S^T S] = I.  When nnz_per_row is None it is resolved to
    ceil(0.1*d) at estimation time.
    """

    s: int
    nnz_per_row: int | None = None

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("sketch size s must be >= 1")
        if self.nnz_per_row is not None and self.nnz_per_row < 1:
            raise ValueError("nnz_per_row must be >= 1")


SKETCH_KINDS = (GaussianSketch, CountSketch, LessUniform)


@dataclass
class HessianEstimate:
    """One oracle draw: a symmetric d x d matrix plus its provenance."""

    matrix: np.ndarray
    kind: object
    draw_index: int = 0


@dataclass
class NoiseStats:
    """Summary of repeated oracle draws at a fixed point.

    upsilon_hat is the maximum-likelihood exponential scale of the top
    decile of spectral noise norms (mean excess over the 90th percentile),
    a documented heuristic for the sub-exponential noise level.
    """

    sample_count: int
    spectral_norms: np.ndarray
    upsilon_hat: float
    mean_residual_norm: float


def resolve_kind(kind, d: int):
    """Fill in kind defaults that depend on the problem dimension."""
    if isinstance(kind, LessUniform) and kind.nnz_per_row is None:
        return replace(kind, nnz_per_row=max(1, math.ceil(0.1 * d)))
    return kind


def _require_glm(obj, kind):
    if not hasattr(obj, "glm_square_root") or not hasattr(obj, "dataset"):
        raise CapabilityError(
            "%s oracle needs a GLM objective exposing per-row structure"
            % type(kind).__name__
        )


def sketch_matrix(kind, n: int, rng) -> np.ndarray:
    """Draw one s x n sketching matrix S with E[S^T S] = I."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(kind, GaussianSketch):
        return rng.standard_normal((kind.s, n)) / math.sqrt(kind.s)
    if isinstance(kind, CountSketch):
        s = kind.s
        S = np.zeros((s, n))
        rows = rng.integers(0, s, size=n)
        signs = 2.0 * rng.integers(0, 2, size=n) - 1.0
        S[rows, np.arange(n)] = signs
        return S
    if isinstance(kind, LessUniform):
        s, k = kind.s, kind.nnz_per_row
        if k is None:
            raise ValueError("nnz_per_row is unresolved; use resolve_kind")
        if k > n:
            raise ValueError("nnz_per_row cannot exceed n")
        scale = math.sqrt(n / (s * k))
        S = np.zeros((s, n))
        for i in range(s):
            pos = rng.choice(n, size=k, replace=False)
            signs = 2.0 * rng.integers(0, 2, size=k) - 1.0
            S[i, pos] = signs * scale
        return S
    raise CapabilityError("not a sketch kind: %r" % (kind,))


def estimate(kind, obj, x, rng, draw_index: int = 0) -> HessianEstimate:
    """Draw one stochastic Hessian estimate at x."""
    kind = resolve_kind(kind, obj.dim)
    if isinstance(kind, Exact):
        return HessianEstimate(obj.hessian(x), kind, draw_index)
    if isinstance(kind, Subsample):
        _require_glm(obj, kind)
        ds = obj.dataset
        if kind.s > ds.n:
            raise ValueError("subsample size s exceeds the number of rows")
        idx = np.sort(rng.choice(ds.n, size=kind.s, replace=False))
        l = obj.curvature_weights(x)
        h = _glm_hessian(ds.A[idx], l[idx], float(kind.s), obj.reg_nu)
        return HessianEstimate(h, kind, draw_index)
    if isinstance(kind, SKETCH_KINDS):
        _require_glm(obj, kind)
        M = obj.glm_square_root(x)
        S = sketch_matrix(kind, M.shape[0], rng)
        SM = S @ M
        h = SM.T @ SM
        h = 0.5 * (h + h.T)
        h[np.diag_indices_from(h)] += obj.reg_nu
        return HessianEstimate(h, kind, draw_index)
    raise CapabilityError("unknown oracle kind: %r" % (kind,))


def spectral_norm(m: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix.

    Uses a full eigendecomposition for d <= 200 and power iteration
    (50 iterations, relative tolerance 1e-10) above that.
    """
    d = m.shape[0]
    if d <= 200:
        return float(np.abs(np.linalg.eigvalsh(m)).max())
    v = np.random.default_rng(12345).standard_normal(d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITERS):
        mv = m @ v
        nrm = np.linalg.norm(mv)
        if nrm == 0.0:
            return 0.0
        v = mv / nrm
        if abs(nrm - est) <= POWER_TOL * max(1.0, nrm):
            return float(nrm)
        est = nrm
    return float(est)


def noise_sample(kind, obj, x, rng, count: int) -> NoiseStats:
    """Draw count estimates at fixed x and summarize the noise E = H_hat - H."""
    if count < 2:
        raise ValueError("count must be >= 2")
    h_true = obj.hessian(x)
    norms = np.empty(count)
    total = np.zeros_like(h_true)
    for i in range(count):
        est = estimate(kind, obj, x, rng, draw_index=i)
        total += est.matrix
        norms[i] = spectral_norm(est.matrix - h_true)
    q90 = float(np.quantile(norms, 0.9))
    tail = norms[norms >= q90]
    upsilon = float(np.mean(tail - q90)) if tail.size else 0.0
    residual = spectral_norm(total / count - h_true)
    return NoiseStats(count, norms, upsilon, residual)
