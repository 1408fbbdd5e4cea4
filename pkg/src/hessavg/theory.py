"""Closed-form transition points, rates, and concentration bounds.

The calculators here evaluate the quantities that predict when an averaged
stochastic Newton run changes behavior: the burn-in length t1, the linear
phase length t2, the superlinear onset, and the point where averaging noise
finally dominates.  They operate on a small bundle of problem constants
(condition number, noise level, weight sequence, line-search parameters)
and are used by the CLI to print predicted-versus-observed comparisons.

Quantities defined through implicit inequalities are solved numerically on
the integer grid (doubling plus bisection) rather than through asymptotic
shortcuts, and everything involving the weight sequence is evaluated in log
space so fast-growing sequences do not overflow.

With a noise-free oracle (upsilon = 0) the noise-dominated phase never
arrives; the affected calculators return ``NEVER`` (float infinity,
serialized as the string "inf").
"""

import math
from dataclasses import dataclass

import numpy as np

from .averaging import LastOnly, Uniform, growth_ratio, log_weight

NEVER = math.inf

_BRACKET_LIMIT = 2 ** 62


@dataclass
class TheoryInputs:
    """Problem constants consumed by the transition calculators.

    kappa and lambda_min describe the Hessian spectrum at the solution
    (kappa is lambda_max/lambda_min of f, not the data-matrix condition
    number), upsilon is the relative noise level of the Hessian oracle,
    radius_nu is the local-neighborhood parameter in (0, 1], and f0_gap
    is f(x0) - f(x*).
    """

    kappa: float
    lambda_min: float
    upsilon: float
    epsilon: float
    delta: float
    d: int
    radius_nu: float
    lipschitz_L: float
    f0_gap: float
    psi: float
    weights: object
    beta: float = 1e-4
    rho: float = 0.5

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.lambda_min <= 0:
            raise ValueError("lambda_min must be positive")
        if self.upsilon < 0:
            raise ValueError("upsilon must be nonnegative")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.d / self.delta < math.e:
            raise ValueError("d/delta must be at least e")
        if not 0.0 < self.radius_nu <= 1.0:
            raise ValueError("radius_nu must lie in (0, 1]")
        if self.lipschitz_L < 0:
            raise ValueError("lipschitz_L must be nonnegative")
        if self.f0_gap < 0:
            raise ValueError("f0_gap must be nonnegative")
        if self.psi < 1:
            raise ValueError("psi must be >= 1")
        if not 0.0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if isinstance(self.weights, LastOnly):
            raise ValueError("transition calculators need a weight sequence")


@dataclass
class TransitionReport:
    """All transition points for one parameter bundle (real-valued)."""

    t1: float
    t2: float
    t_total: float
    j_transition: float
    k_transition: float
    i1: float
    i_total: float
    u_transition: float
    v_transition: float
    t2_clamped: bool = False


def t1(inputs: TheoryInputs) -> float:
    """Burn-in length 4*(1 v 8U/eps)^2 * log(d/delta * (1 v 8U/eps))."""
    m = max(1.0, 8.0 * inputs.upsilon / inputs.epsilon)
    return 4.0 * m * m * math.log(inputs.d / inputs.delta * m)


def phi_rate(inputs: TheoryInputs) -> float:
    """Per-iteration linear rate phi = 4*rho*beta*(1-beta)*(1-eps)/(kappa^2*(1+eps))."""
    return (4.0 * inputs.rho * inputs.beta * (1.0 - inputs.beta)
            * (1.0 - inputs.epsilon)
            / (inputs.kappa ** 2 * (1.0 + inputs.epsilon)))


def _t2_log_argument(inputs: TheoryInputs) -> float:
    return (3.0 * inputs.lipschitz_L ** 2 * inputs.f0_gap
            / (inputs.radius_nu ** 2 * inputs.lambda_min ** 3))


def t2(inputs: TheoryInputs) -> float:
    """Linear phase length log(3 L^2 gap / (nu^2 lambda^3)) / phi, >= 0.

    A log argument at or below 1 means the start point is already inside
    the target neighborhood; the result clamps to 0 (see t2_is_clamped).
    """
    arg = _t2_log_argument(inputs)
    if arg <= 1.0:
        return 0.0
    return math.log(arg) / phi_rate(inputs)


def t2_is_clamped(inputs: TheoryInputs) -> bool:
    """True when the t2 formula clamps to zero."""
    return _t2_log_argument(inputs) <= 1.0


def j_transition(inputs: TheoryInputs, t_total: float) -> float:
    """Moderate-phase length J = 4*T*kappa/nu."""
    return 4.0 * t_total * inputs.kappa / inputs.radius_nu


def rho_t(inputs: TheoryInputs, t_total: float, j: float, t: float) -> float:
    """Two-term superlinear rate for uniform averaging at offset t >= 0.

    First term: structural decay 4*T*kappa/(T+J+t+1).  Second term:
    stochastic noise 8*U*sqrt(log(d*(T+J+t+1)/delta)/(T+J+t+1)).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    n = t_total + j + t + 1.0
    first = 4.0 * t_total * inputs.kappa / n
    second = 8.0 * inputs.upsilon * math.sqrt(
        math.log(inputs.d * n / inputs.delta) / n)
    return first + second


def k_transition(inputs: TheoryInputs, t_total: float, j: float) -> float:
    """Index where oracle noise overtakes the structural rate term.

    K = T^2 kappa^2 / (4 U^2 log(d T / delta)) - T - J, clamped at 0;
    NEVER when the oracle is noise-free.
    """
    if inputs.upsilon == 0.0:
        return NEVER
    lead = (t_total ** 2 * inputs.kappa ** 2
            / (4.0 * inputs.upsilon ** 2
               * math.log(inputs.d * t_total / inputs.delta)))
    return max(0.0, lead - t_total - j)


def _i1_expression(inputs: TheoryInputs, t: int) -> float:
    return (math.log(inputs.d * (t + 1) / inputs.delta)
            * growth_ratio(inputs.weights, t))


def i1(inputs: TheoryInputs) -> float:
    """Burn-in length for general weights.

    One plus the last integer t where log(d(t+1)/delta) * w'(t)/w(t) still
    reaches the threshold (eps/(8*Psi*U) ^ 1)^2.  The expression rises at
    most once and then decays to zero for every implemented sequence, so
    the qualifying set is an integer interval; its right endpoint is found
    by doubling, a ternary pass for the peak, and bisection on the
    decreasing flank.
    """
    if inputs.upsilon > 0.0:
        a = min(inputs.epsilon / (8.0 * inputs.psi * inputs.upsilon), 1.0)
    else:
        a = 1.0
    thr = a * a

    def expr(t):
        return _i1_expression(inputs, t)

    hi = 1
    while not (expr(hi) < thr and expr(hi) <= expr(hi - 1)):
        hi *= 2
        if hi > _BRACKET_LIMIT:
            raise RuntimeError("growth expression does not decay")
    lo, mid_hi = 0, hi
    while mid_hi - lo > 2:
        m1 = lo + (mid_hi - lo) // 3
        m2 = mid_hi - (mid_hi - lo) // 3
        if expr(m1) < expr(m2):
            lo = m1 + 1
        else:
            mid_hi = m2 - 1
    peak = max(range(lo, mid_hi + 1), key=expr)
    if expr(peak) < thr:
        return 0.0
    lo, hi = peak, hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if expr(mid) >= thr:
            lo = mid
        else:
            hi = mid
    return float(lo + 1)


def u_transition(inputs: TheoryInputs, i_total: float) -> float:
    """Smallest u >= 0 with w(I + u) = 2 w(I-1) kappa / nu.

    Solved by bisection on the continuous extension of w in log space;
    0 when the target is already below w(I).
    """
    seq = inputs.weights
    target_log = (math.log(2.0 * inputs.kappa / inputs.radius_nu)
                  + log_weight(seq, i_total - 1.0))
    if log_weight(seq, i_total) >= target_log:
        return 0.0
    hi = 1.0
    while log_weight(seq, i_total + hi) < target_log:
        hi *= 2.0
        if hi > _BRACKET_LIMIT:
            raise RuntimeError("weight sequence never reaches the target")
    lo = 0.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            # The bracket sits at a magnitude where adjacent floats are
            # further apart than the width target; it cannot split further.
            break
        if log_weight(seq, i_total + mid) < target_log:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theta_t(inputs: TheoryInputs, i_total: float, u: float, t: float) -> float:
    """Two-term rate for general weights at offset t past I + U.

    6 w(I-1) kappa / w(I+U+t)
    + 8 Psi U sqrt(log(d(I+U+t+1)/delta) * w'(I+U+t)/w(I+U+t)).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    seq = inputs.weights
    pos = i_total + u + t
    first = (6.0 * inputs.kappa
             * math.exp(log_weight(seq, i_total - 1.0) - log_weight(seq, pos)))
    second = (8.0 * inputs.psi * inputs.upsilon
              * math.sqrt(math.log(inputs.d * (pos + 1.0) / inputs.delta)
                          * growth_ratio(seq, pos)))
    return first + second


def v_transition(inputs: TheoryInputs, i_total: float, u: float) -> float:
    """First integer t >= I+U where averaging noise dominates:

    w(t) w'(t) log(d(t+1)/delta) >= w(I-1)^2 kappa^2 / (Psi^2 U^2),

    compared in log space.  NEVER when the oracle is noise-free.
    """
    if inputs.upsilon == 0.0:
        return NEVER
    seq = inputs.weights
    rhs_log = (2.0 * log_weight(seq, i_total - 1.0)
               + 2.0 * math.log(inputs.kappa
                                / (inputs.psi * inputs.upsilon)))

    def lhs_log(t):
        g = growth_ratio(seq, t)
        if g <= 0.0:
            return -math.inf
        return (2.0 * log_weight(seq, t) + math.log(g)
                + math.log(math.log(inputs.d * (t + 1.0) / inputs.delta)))

    start = max(0, math.ceil(i_total + u))
    if lhs_log(start) >= rhs_log:
        return float(start)
    hi = max(start, 1)
    while lhs_log(hi) < rhs_log:
        hi *= 2
        if hi > _BRACKET_LIMIT:
            raise RuntimeError("averaging noise never dominates")
    lo = start
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if lhs_log(mid) < rhs_log:
            lo = mid
        else:
            hi = mid
    return float(hi)


def freedman_bound(eta: float, upsilon_e: float, z, d: int = 1) -> float:
    """Tail bound P(||averaged noise|| >= eta) for weights z summing to 1.

    2d * exp(-(eta^2/2) / (U_E^2 sum(z^2) + z_max U_E eta)), clamped to
    [0, 1].  d is the matrix dimension (default 1 for scalar use).
    """
    z = np.asarray(z, dtype=float)
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if abs(float(z.sum()) - 1.0) > 1e-8:
        raise ValueError("weights z must sum to 1")
    denom = upsilon_e ** 2 * float(z @ z) + float(z.max()) * upsilon_e * eta
    if denom == 0.0:
        return 0.0 if eta > 0 else 1.0
    raw = 2.0 * d * math.exp(-(eta * eta / 2.0) / denom)
    return min(1.0, max(0.0, raw))


def freedman_eta(delta: float, upsilon_e: float, z, d: int = 1) -> float:
    """Inverse of freedman_bound: the eta making the tail bound equal delta.

    Closed-form root of the quadratic eta^2/2 = log(2d/delta) *
    (U_E^2 sum(z^2) + z_max U_E eta).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    c = math.log(2.0 * d / delta)
    zmax = float(z.max())
    zsq = float(z @ z)
    return (c * zmax * upsilon_e
            + math.sqrt((c * zmax * upsilon_e) ** 2
                        + 2.0 * c * upsilon_e ** 2 * zsq))


def transition_report(inputs: TheoryInputs) -> TransitionReport:
    """Evaluate every transition point for one parameter bundle."""
    v_t1 = t1(inputs)
    v_t2 = t2(inputs)
    t_total = v_t1 + v_t2
    j = j_transition(inputs, t_total)
    k = k_transition(inputs, t_total, j)
    v_i1 = i1(inputs)
    i_total = v_i1 + v_t2
    u = u_transition(inputs, i_total)
    v = v_transition(inputs, i_total, u)
    return TransitionReport(
        t1=v_t1, t2=v_t2, t_total=t_total, j_transition=j, k_transition=k,
        i1=v_i1, i_total=i_total, u_transition=u, v_transition=v,
        t2_clamped=t2_is_clamped(inputs))


def substitute_back_checks(inputs: TheoryInputs,
                           report: TransitionReport | None = None) -> dict:
    """Substitute every calculator output back into its defining relation.

    Returns {check name: bool}.  Infinite transition points (noise-free
    oracle) trivially pass their checks.  Used by the diag CLI's
    self-check flag and by the consistency test suite.
    """
    if report is None:
        report = transition_report(inputs)
    checks = {}

    a1 = (min(inputs.epsilon / (8.0 * inputs.upsilon), 1.0)
          if inputs.upsilon > 0.0 else 1.0)
    t = report.t1
    checks["t1_threshold"] = (
        math.log(inputs.d * (t + 1.0) / inputs.delta) / (t + 1.0)
        <= a1 * a1 * (1.0 + 1e-12))

    arg = _t2_log_argument(inputs)
    expected = max(0.0, math.log(arg)) if arg > 0 else 0.0
    checks["t2_identity"] = (
        abs(report.t2 * phi_rate(inputs) - expected)
        <= 1e-9 * max(1.0, expected))

    checks["totals"] = (report.t_total == report.t1 + report.t2
                        and report.i_total == report.i1 + report.t2)

    if math.isinf(report.k_transition):
        checks["k_identity"] = True
        checks["k_noise_dominates"] = True
    else:
        lead = (report.t_total ** 2 * inputs.kappa ** 2
                / (4.0 * inputs.upsilon ** 2
                   * math.log(inputs.d * report.t_total / inputs.delta)))
        if report.k_transition == 0.0:
            checks["k_identity"] = (
                lead - report.t_total - report.j_transition <= 1e-9 * lead)
        else:
            total = (report.t_total + report.j_transition
                     + report.k_transition + 1.0)
            checks["k_identity"] = abs(total - lead) <= 1.0 + 1e-6 * lead
        tk = math.ceil(report.k_transition)
        n = report.t_total + report.j_transition + tk + 1.0
        first = 4.0 * report.t_total * inputs.kappa / n
        second = 8.0 * inputs.upsilon * math.sqrt(
            math.log(inputs.d * n / inputs.delta) / n)
        checks["k_noise_dominates"] = second >= first * (1.0 - 1e-9)

    if inputs.upsilon > 0.0:
        a = min(inputs.epsilon / (8.0 * inputs.psi * inputs.upsilon), 1.0)
    else:
        a = 1.0
    thr = a * a
    i1_val = int(report.i1)
    below = _i1_expression(inputs, i1_val) < thr
    at_prev = (i1_val == 0
               or _i1_expression(inputs, i1_val - 1) >= thr)
    checks["i1_boundary"] = below and at_prev

    seq = inputs.weights
    target_log = (math.log(2.0 * inputs.kappa / inputs.radius_nu)
                  + log_weight(seq, report.i_total - 1.0))
    achieved_log = log_weight(seq, report.i_total + report.u_transition)
    if report.u_transition == 0.0:
        checks["u_equation"] = achieved_log >= target_log - 1e-9
    else:
        checks["u_equation"] = abs(math.expm1(achieved_log - target_log)) <= 1e-6

    if math.isinf(report.v_transition):
        checks["v_boundary"] = True
    else:
        rhs_log = (2.0 * log_weight(seq, report.i_total - 1.0)
                   + 2.0 * math.log(inputs.kappa
                                    / (inputs.psi * inputs.upsilon)))

        def lhs_log(tt):
            g = growth_ratio(seq, tt)
            if g <= 0.0:
                return -math.inf
            return (2.0 * log_weight(seq, tt) + math.log(g)
                    + math.log(math.log(inputs.d * (tt + 1.0) / inputs.delta)))

        v = report.v_transition
        start = max(0, math.ceil(report.i_total + report.u_transition))
        holds = lhs_log(v) >= rhs_log - 1e-9
        minimal = v == start or lhs_log(v - 1) < rhs_log
        checks["v_boundary"] = holds and minimal

    offsets = np.unique(np.round(np.logspace(0.0, 6.0, 60))).astype(float)
    offsets = np.concatenate(([0.0], offsets))
    rho_vals = [rho_t(inputs, report.t_total, report.j_transition, t)
                for t in offsets]
    theta_vals = [theta_t(inputs, report.i_total, report.u_transition, t)
                  for t in offsets]
    checks["rho_t_decreasing"] = bool(np.all(np.diff(rho_vals) < 0.0))
    checks["theta_t_decreasing"] = bool(np.all(np.diff(theta_vals) < 0.0))
    return checks


def report_to_json_dict(report: TransitionReport) -> dict:
    """JSON-safe dict; infinite transition points serialize as "inf"."""
    out = {}
    for name in ("t1", "t2", "t_total", "j_transition", "k_transition",
                 "i1", "i_total", "u_transition", "v_transition"):
        value = getattr(report, name)
        out[name] = "inf" if math.isinf(value) else value
    out["t2_clamped"] = report.t2_clamped
    return out
