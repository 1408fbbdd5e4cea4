"""Online weighted averaging of Hessian estimates.

The running average follows the recursion

    H_tilde_t = (w_{t-1}/w_t) H_tilde_{t-1} + (1 - w_{t-1}/w_t) H_hat_t

with H_tilde_{-1} = 0 and w_{-1} = 0, which reproduces the batch weighted
average sum_i z_{i,t} H_hat_i with z_{i,t} = (w_i - w_{i-1})/w_t.  Weight
sequences grow at different speeds:

* ``Uniform``: w(t) = t+1, plain arithmetic mean.
* ``Power``: w(t) = (t+1)^p, more mass on recent estimates.
* ``LogPower``: w(t) = (t+1)^{scale * ln(t+1)}, eventually faster than any
  power for any positive scale.
* ``LastOnly``: no averaging at all, the state is the latest estimate.

LogPower values overflow float range only past t ~ 1e11; ratios and
normalized weights are computed in log space so the recursion stays finite
long before that point matters.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LastOnly:
    """No averaging: the state tracks the most recent estimate."""


@dataclass(frozen=True)
class Uniform:
    """w(t) = t + 1 (arithmetic mean)."""


@dataclass(frozen=True)
class Power:
    """w(t) = (t + 1)^p with p >= 1."""

    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("power exponent p must be >= 1")


@dataclass(frozen=True)
class LogPower:
    """w(t) = (t + 1)^{scale * ln(t + 1)}.

    The default scale of 1 gives the natural-log sequence (t+1)^{ln(t+1)}.
    A scale of 1/ln(10) gives (t+1)^{log10(t+1)}, which grows more slowly
    and therefore averages over a wider window at any fixed t.
    """

    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")


@dataclass
class AveragingState:
    """Running average H_tilde_t together with w(t) and the index t."""

    h_tilde: np.ndarray
    w_prev: float
    t: int


def initial_state(d: int) -> AveragingState:
    """State before any update: H_tilde = 0, w = 0, t = -1."""
    return AveragingState(np.zeros((d, d)), 0.0, -1)


def weight(seq, t: int) -> float:
    """w(t) for integer t >= -1, with w(-1) = 0."""
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if t < -1:
        raise ValueError("t must be >= -1")
    if t == -1:
        return 0.0
    if isinstance(seq, Uniform):
        return float(t + 1)
    if isinstance(seq, Power):
        return float(t + 1) ** seq.p
    if isinstance(seq, LogPower):
        return math.exp(seq.scale * math.log(t + 1) ** 2)
    raise TypeError("unknown weight sequence: %r" % (seq,))


def log_weight(seq, t: int) -> float:
    """ln w(t), with -inf at t = -1.  Safe where w(t) itself overflows."""
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if t < -1:
        raise ValueError("t must be >= -1")
    if t == -1:
        return -math.inf
    lt = math.log(t + 1)
    if isinstance(seq, Uniform):
        return lt
    if isinstance(seq, Power):
        return seq.p * lt
    if isinstance(seq, LogPower):
        return seq.scale * lt * lt
    raise TypeError("unknown weight sequence: %r" % (seq,))


def derivative(seq, t: float) -> float:
    """w'(t) of the continuous extension, for the growth-ratio bound."""
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if isinstance(seq, Uniform):
        return 1.0
    if isinstance(seq, Power):
        return seq.p * (t + 1.0) ** (seq.p - 1.0)
    if isinstance(seq, LogPower):
        lt = math.log(t + 1.0)
        return math.exp(seq.scale * lt * lt) * 2.0 * seq.scale * lt / (t + 1.0)
    raise TypeError("unknown weight sequence: %r" % (seq,))


def growth_ratio(seq, t: float) -> float:
    """w'(t)/w(t) of the continuous extension, in closed form.

    Stays finite for t far beyond where w(t) itself overflows, which the
    transition-point calculators rely on.
    """
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if isinstance(seq, Uniform):
        return 1.0 / (t + 1.0)
    if isinstance(seq, Power):
        return seq.p / (t + 1.0)
    if isinstance(seq, LogPower):
        return 2.0 * seq.scale * math.log(t + 1.0) / (t + 1.0)
    raise TypeError("unknown weight sequence: %r" % (seq,))


def _ratio(seq, t: int) -> float:
    """w(t-1)/w(t) computed in log space (0 when t = 0)."""
    if t == 0:
        return 0.0
    return math.exp(log_weight(seq, t - 1) - log_weight(seq, t))


def update(state: AveragingState, seq, h_hat) -> AveragingState:
    """Fold one estimate into the average; returns a new state."""
    matrix = getattr(h_hat, "matrix", h_hat)
    d = state.h_tilde.shape[0]
    if matrix.shape != (d, d):
        raise ValueError(
            "estimate shape %r does not match state dimension %d"
            % (matrix.shape, d)
        )
    t = state.t + 1
    if isinstance(seq, LastOnly):
        return AveragingState(np.array(matrix, dtype=float), 0.0, t)
    r = _ratio(seq, t)
    h = r * state.h_tilde + (1.0 - r) * matrix
    return AveragingState(h, weight(seq, t), t)


def normalized_weights(seq, t: int) -> np.ndarray:
    """The batch weights z_{i,t} = (w_i - w_{i-1})/w_t for i = 0..t."""
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if t < 0:
        raise ValueError("t must be >= 0")
    lw = np.array([log_weight(seq, i) for i in range(t + 1)])
    rel = np.exp(lw - lw[-1])
    z = np.empty(t + 1)
    z[0] = rel[0]
    if t > 0:
        z[1:] = rel[:-1] * np.expm1(lw[1:] - lw[:-1])
    return z


def psi_bound(seq, horizon: int) -> float:
    """Max growth ratio max(w(t+1)/w(t), w'(t+1)/w'(t)) over t in [0, horizon].

    Ratios with a zero denominator are skipped; the only such case among
    the implemented sequences is the LogPower derivative at t = 0.
    """
    if isinstance(seq, LastOnly):
        raise TypeError("LastOnly is not weight-based")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    best = 0.0
    for t in range(horizon + 1):
        best = max(best, math.exp(log_weight(seq, t + 1) - log_weight(seq, t)))
        dv = derivative(seq, t)
        if dv > 0.0:
            best = max(best, derivative(seq, t + 1) / dv)
    return best
