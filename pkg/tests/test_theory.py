import math

import numpy as np
import pytest

from hessavg.averaging import LastOnly, LogPower, Power, Uniform, psi_bound
from hessavg.datagen import DataGenConfig, generate
from hessavg.oracles import Subsample, estimate, noise_sample, spectral_norm
from hessavg.problem import RegularizedLogistic
from hessavg import theory

# Reference values computed independently with mpmath at 50 digits.
T1_FROZEN = 678.18462291814865
PHI_FROZEN = 1.6665000000000001e-05
T2_FROZEN = 422997.59023437364
J_FROZEN = 6778812.3977166684
FREEDMAN_BOUND_FROZEN = 0.52719427623145354
FREEDMAN_ETA_FROZEN = 2.0594368186082224


def base_inputs(**overrides):
    params = dict(kappa=2.0, lambda_min=0.5, upsilon=0.25, epsilon=0.5,
                  delta=0.01, d=100, radius_nu=0.5, lipschitz_L=2.0,
                  f0_gap=3.0, psi=2.0, weights=Uniform(), beta=1e-4, rho=0.5)
    params.update(overrides)
    return theory.TheoryInputs(**params)


@pytest.mark.parametrize("bad", [
    dict(kappa=0.9),
    dict(lambda_min=0.0),
    dict(upsilon=-0.1),
    dict(epsilon=0.0),
    dict(epsilon=1.0),
    dict(delta=0.0),
    dict(delta=1.0),
    dict(d=0),
    dict(d=2, delta=0.9),          # d/delta below e
    dict(radius_nu=0.0),
    dict(radius_nu=1.5),
    dict(lipschitz_L=-1.0),
    dict(f0_gap=-1.0),
    dict(psi=0.5),
    dict(weights=LastOnly()),
    dict(beta=0.5),
    dict(rho=0.0),
])
def test_input_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        base_inputs(**bad)


def test_burn_in_frozen_value():
    assert np.isclose(theory.t1(base_inputs()), T1_FROZEN, rtol=5e-15, atol=0)


def test_burn_in_at_noise_free_boundary():
    # Upsilon = 0 with d/delta exactly e collapses the formula to 4.
    inputs = base_inputs(kappa=1.0, lambda_min=1.0, upsilon=0.0,
                         delta=1.0 / math.e, d=1, radius_nu=1.0,
                         lipschitz_L=0.0, f0_gap=0.0, psi=1.0)
    assert theory.t1(inputs) == 4.0


def test_linear_phase_frozen_values():
    inputs = base_inputs()
    assert np.isclose(theory.phi_rate(inputs), PHI_FROZEN, rtol=5e-15, atol=0)
    assert np.isclose(theory.t2(inputs), T2_FROZEN, rtol=5e-15, atol=0)
    total = theory.t1(inputs) + theory.t2(inputs)
    assert np.isclose(theory.j_transition(inputs, total), J_FROZEN,
                      rtol=5e-15, atol=0)


def test_linear_phase_clamps_at_zero():
    inputs = base_inputs(f0_gap=0.0)
    report = theory.transition_report(inputs)
    assert report.t2 == 0.0
    assert report.t2_clamped


def test_totals_are_exact_sums():
    report = theory.transition_report(base_inputs())
    assert report.t_total == report.t1 + report.t2
    assert report.i_total == report.i1 + report.t2


def test_noise_free_oracle_never_transitions():
    report = theory.transition_report(base_inputs(upsilon=0.0))
    assert math.isinf(report.k_transition)
    assert math.isinf(report.v_transition)


def test_report_serialization():
    report = theory.transition_report(base_inputs(upsilon=0.0))
    payload = theory.report_to_json_dict(report)
    assert payload["k_transition"] == "inf"
    assert payload["v_transition"] == "inf"
    assert payload["t2_clamped"] is False
    assert isinstance(payload["t1"], float)


def test_substitute_back_on_handpicked_inputs():
    cases = [
        base_inputs(),
        base_inputs(weights=Power(2.0), psi=psi_bound(Power(2.0), 1000)),
        base_inputs(weights=LogPower(), psi=psi_bound(LogPower(), 1000)),
        base_inputs(upsilon=0.0),
    ]
    for inputs in cases:
        checks = theory.substitute_back_checks(inputs)
        bad = [k for k, v in checks.items() if not v]
        assert not bad, "failed: %s" % bad


def test_weight_target_search_at_large_magnitudes():
    # Heavy noise with slow power growth pushes the weight-target root past
    # 1e10, where the bisection bracket is wider than float spacing; the
    # search must still terminate and satisfy its equation.
    seq = Power(1.117)
    inputs = base_inputs(kappa=22.4, lambda_min=0.1, upsilon=4.75,
                         epsilon=0.153, d=300, radius_nu=0.05,
                         weights=seq, psi=psi_bound(seq, 1000))
    report = theory.transition_report(inputs)
    assert report.u_transition > 1e9
    checks = theory.substitute_back_checks(inputs, report)
    assert checks["u_equation"]
    assert checks["v_boundary"]


def test_rate_curves_decrease():
    inputs = base_inputs()
    report = theory.transition_report(inputs)
    offsets = np.unique(np.round(np.logspace(0, 6, 40)))
    rho_vals = [theory.rho_t(inputs, report.t_total, report.j_transition, t)
                for t in offsets]
    theta_vals = [theory.theta_t(inputs, report.i_total,
                                 report.u_transition, t)
                  for t in offsets]
    for vals in (rho_vals, theta_vals):
        assert all(v >= 0.0 for v in vals)
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_freedman_bound_frozen_value():
    got = theory.freedman_bound(2.0, 1.0, [0.5, 0.5], 1)
    assert np.isclose(got, FREEDMAN_BOUND_FROZEN, rtol=5e-15, atol=0)


def test_freedman_bound_clamping():
    # Small eta makes the raw bound exceed 1.
    assert theory.freedman_bound(1.0, 1.0, [1.0], 1) == 1.0
    assert theory.freedman_bound(0.0, 1.0, [1.0], 4) == 1.0


def test_freedman_bound_validation():
    with pytest.raises(ValueError):
        theory.freedman_bound(-1.0, 1.0, [1.0])
    with pytest.raises(ValueError):
        theory.freedman_bound(1.0, 1.0, [0.4, 0.4])


def test_freedman_bound_monotonicity():
    z = [0.25] * 4
    etas = np.linspace(0.1, 5.0, 30)
    vals = [theory.freedman_bound(e, 1.0, z) for e in etas]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    upsilons = np.linspace(0.2, 3.0, 30)
    vals = [theory.freedman_bound(2.0, u, z) for u in upsilons]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_uniform_weights_minimize_freedman_bound():
    # Equal weights minimize both sum(z^2) and max(z), hence the bound.
    rng = np.random.default_rng(31)
    t = 6
    uniform = np.full(t + 1, 1.0 / (t + 1))
    best = theory.freedman_bound(0.7, 1.0, uniform)
    for _ in range(200):
        z = rng.dirichlet(np.ones(t + 1))
        assert theory.freedman_bound(0.7, 1.0, z) >= best - 1e-15


def test_freedman_eta_inverts_bound():
    z = [0.5, 0.5]
    eta = theory.freedman_eta(0.5, 1.0, z, 1)
    assert np.isclose(eta, FREEDMAN_ETA_FROZEN, rtol=5e-15, atol=0)
    assert np.isclose(theory.freedman_bound(eta, 1.0, z, 1), 0.5,
                      rtol=1e-12, atol=0)
    for delta in (0.01, 0.2, 0.9):
        z3 = [0.2, 0.3, 0.5]
        eta = theory.freedman_eta(delta, 2.0, z3, 5)
        assert np.isclose(theory.freedman_bound(eta, 2.0, z3, 5), delta,
                          rtol=1e-10, atol=0)
    with pytest.raises(ValueError):
        theory.freedman_eta(0.0, 1.0, z)
    with pytest.raises(ValueError):
        theory.freedman_eta(1.0, 1.0, z)


def test_empirical_concentration_of_averaged_noise():
    # Running equal-weight averages of subsampled Hessian noise at a fixed
    # point must stay below the inverted tail bound at delta = 0.01 for at
    # least 99% of t in [10, 1000].  The noise scale is estimated from an
    # independent sample as the largest observed deviation.
    cfg = DataGenConfig(n=400, d=20, coherence_mode="low", kappa_A=10.0,
                        reg_nu=1e-2, seed=5)
    ds, _ = generate(cfg)
    obj = RegularizedLogistic(ds, 1e-2)
    x = np.linspace(-0.8, 0.8, 20)
    H = obj.hessian(x)
    kind = Subsample(80)

    stats = noise_sample(kind, obj, x, np.random.default_rng(99), 400)
    upsilon_e = float(stats.spectral_norms.max())

    rng = np.random.default_rng(123)
    T = 1000
    running = np.zeros_like(H)
    norms = np.empty(T + 1)
    for t in range(T + 1):
        running += estimate(kind, obj, x, rng, t).matrix - H
        norms[t] = spectral_norm(running / (t + 1))

    violations = 0
    for t in range(10, T + 1):
        z = np.full(t + 1, 1.0 / (t + 1))
        eta = theory.freedman_eta(0.01, upsilon_e, z, d=20)
        if norms[t] >= eta:
            violations += 1
    total = T + 1 - 10
    assert violations <= math.floor(0.01 * total), \
        "%d of %d checkpoints above the bound" % (violations, total)
