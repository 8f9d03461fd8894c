import math

import numpy as np
import pytest

from relu_phase import datasets, dynamics, theory
from relu_phase.dynamics import FlowConfig
from relu_phase.kernels import gram_limit_closed, linear_rate
from relu_phase.network import InitConfig, NetworkParams, empirical_risk, init_params
from relu_phase.scaling import PhaseCoordinates, realize

DS = datasets.default_dataset()
LAM = gram_limit_closed(DS).lam


def run_cell(gamma, gamma_prime, m, seed=0, snapshots=0, max_steps=200_000):
    coords = PhaseCoordinates(gamma, gamma_prime)
    k, kp = realize(coords, m)
    asi = gamma <= 0.5
    p0 = init_params(InitConfig(m // 2 if asi else m, DS.d, seed, asi))
    h0 = dynamics.default_initial_step(p0, k, kp, DS)
    r0 = empirical_risk(p0, k, DS)
    cfg = FlowConfig(h0, math.inf, r0 * 1e-6, max_steps=max_steps, snapshot_stride=snapshots)
    return dynamics.integrate(p0, k, kp, DS, cfg), k, kp, coords


def test_initial_param_bound_value():
    assert theory.initial_param_bound(10_000, 2, 0.01) == pytest.approx(math.sqrt(2 * math.log(6e6)))
    assert theory.initial_param_bound(10_000, 2, 0.01) == pytest.approx(5.59, abs=0.005)
    with pytest.raises(ValueError):
        theory.initial_param_bound(10, 2, 1.0)


def test_initial_param_bound_pass_rate():
    reports = [theory.check_initial_param_bound(init_params(InitConfig(10_000, 2, s)), 0.01) for s in range(100)]
    assert theory.pass_rate(reports) >= 0.99
    assert reports[0].context["m"] == 10_000 and reports[0].context["seed"] == 0


def test_initial_param_bound_trivial_and_monotone():
    r = theory.check_initial_param_bound(NetworkParams([0.0], [[0.0]]), 0.5)
    assert r.satisfied and r.empirical_value == 0.0
    bounds = [theory.initial_param_bound(100, 2, d) for d in (0.01, 0.1, 0.5, 0.99)]
    assert all(b0 > b1 for b0, b1 in zip(bounds, bounds[1:]))


def test_norm_sandwich_endpoints():
    lo, hi = theory.norm_sandwiches(10_000, 2)["theta"]
    assert lo == pytest.approx(122.47, abs=0.01) and hi == pytest.approx(212.13, abs=0.01)
    r = theory.check_initial_norms(init_params(InitConfig(10_000, 2, 3)))
    assert r.satisfied and lo <= r.empirical_value <= hi


def test_norm_concentration():
    m, d = 100_000, 2
    ratios = [np.linalg.norm(init_params(InitConfig(m, d, s)).theta()) / math.sqrt(m * (d + 1)) for s in range(100)]
    assert 0.99 <= min(ratios) and max(ratios) <= 1.01


def test_all_ones_norm():
    m, d = 50, 3
    p = NetworkParams(np.ones(m), np.ones((m, d)))
    r = theory.check_initial_norms(p)
    assert r.empirical_value == pytest.approx(math.sqrt(m * (d + 1)))
    assert r.satisfied


def test_decay_bound_linear_cell():
    run, k, kp, _ = run_cell(0.5, 0.0, 10_000)
    r = theory.check_decay_bound(run, linear_rate(10_000, k, DS.n, LAM))
    assert r.satisfied, r


def test_decay_bound_edge_cases():
    p = NetworkParams([1.0], [[1.0, 0.0]])
    ds0 = datasets.Dataset(np.array([[0.5, 1.0]]), [0.5])
    flat = dynamics.integrate(p, 1.0, 1.0, ds0, FlowConfig(0.1, 1.0))
    assert theory.check_decay_bound(flat, 5.0).satisfied
    run, *_ = run_cell(1.0, 0.0, 50, max_steps=300)
    r = theory.check_decay_bound(run, 0.0)
    assert r.satisfied == bool(np.all(np.diff(run.trajectory.losses) <= 0)) == True
    # an absurdly fast claimed rate must fail
    assert not theory.check_decay_bound(run, 1e6).satisfied


def test_rd_bound_formula():
    c = PhaseCoordinates(0.5, 0.0)
    assert theory.rd_bound(1000, 1.0, 1.0, c) == pytest.approx(math.log(1000) / 1000)
    assert theory.rd_bound(10**8, 1.0, 1.0, c) < 1e-6
    both = theory.rd_bound(100, 0.5, 0.1, PhaseCoordinates(0.5, 0.5))
    assert both == pytest.approx(0.1 * math.log(100) / 50)
    assert theory.rd_bound(100, 0.5, 0.1, PhaseCoordinates(1.75, 0.0)) is None


def test_rd_ratio_decreases_in_linear_cell():
    small, k1, kp1, c = run_cell(0.5, 0.0, 2000)
    big, k2, kp2, _ = run_cell(0.5, 0.0, 8000)
    r = theory.check_rd_bounds(small, 2000, k1, kp1, c, wider=(big, 8000, k2, kp2))
    assert r.bound_name == "rd_bound" and r.satisfied, r
    assert r.context["wider_ratio"] < r.empirical_value <= 10


def test_rd_grows_in_condensed_cell():
    small, k1, kp1, c = run_cell(1.75, 0.0, 1000)
    big, k2, kp2, _ = run_cell(1.75, 0.0, 4000)
    r = theory.check_rd_bounds(small, 1000, k1, kp1, c, wider=(big, 4000, k2, kp2))
    assert r.bound_name == "rd_growth" and r.satisfied, r
    assert not theory.check_rd_bounds(small, 1000, k1, kp1, c).satisfied


def test_neuron_bound_condensed_run():
    run, k, kp, _ = run_cell(1.75, 0.0, 1000, snapshots=100)
    r = theory.check_neuron_bound(run, kp)
    assert r.satisfied and r.hard and r.empirical_value <= 1e-3
    assert r.context["snapshots"] >= 2


def test_neuron_bound_at_init_and_violation():
    p = init_params(InitConfig(20, 2, 1))
    assert theory.neuron_excess(p.a, p.W, p.a, 1.0) <= 0.0
    a = p.a.copy()
    a[3] += math.copysign(10.0 + np.linalg.norm(p.W[3]), a[3])
    assert theory.neuron_excess(a, p.W, p.a, 1.0) > 1.0
    fake = dynamics.integrate(NetworkParams(a, p.W), 1.0, 1.0, DS, FlowConfig(1e-12, 1.0, max_steps=1))
    fake.initial_params = p
    assert not theory.check_neuron_bound(fake, 1.0).satisfied


def test_asi_initial_risk():
    r = theory.asi_initial_risk(DS)
    assert r.satisfied and r.empirical_value == pytest.approx(float(DS.y @ DS.y) / 8)
    p = init_params(InitConfig(50, DS.d, 0, use_asi=True))
    assert empirical_risk(p, 1.0, DS) == pytest.approx(r.empirical_value, abs=1e-12)


def test_width_precondition_is_symbolic():
    s = theory.width_precondition()
    assert "C0" in s and "C_psi,d" in s


def test_pass_rate():
    mk = lambda ok: theory.BoundReport("x", 1.0, 0.0, ok)
    assert theory.pass_rate([mk(True), mk(False), mk(True), mk(True)]) == 0.75
    with pytest.raises(ValueError):
        theory.pass_rate([])


def test_verify_emits_five_reports(tmp_path):
    reports = theory.verify(PhaseCoordinates(0.5, 0.0), 200, DS, seed=1)
    assert [r.bound_name for r in reports] == ["initial_param_bound", "initial_norms", "decay_bound", "rd_bound",
                                               "neuron_bound"]
    assert all(r.context["regime"] == "Linear" for r in reports)
    assert reports[-1].satisfied
    theory.reports_to_csv(tmp_path / "r.csv", reports)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[0].startswith("bound,theoretical")
    assert "decay_bound" in theory.format_reports(reports)
    with pytest.raises(ValueError):
        theory.verify(PhaseCoordinates(0.5, 0.0), 201, DS, seed=1)
