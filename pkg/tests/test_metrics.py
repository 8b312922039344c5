import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from powerdensity.bc import linear_traces
from powerdensity.errors import DomainError
from powerdensity.forward import add_noise, synthesize
from powerdensity.grid import Grid
from powerdensity.metrics import (
    config_hash,
    error_report,
    linf_norm,
    loglog_fit,
    stability_experiment,
    w1inf_norm,
)
from powerdensity.phantoms import tau_sin
from powerdensity.recon_tau import anchor_from_truth, reconstruct_log_tau


def test_norm_examples():
    grid = Grid.unit(2, 17)
    assert linf_norm(grid, np.zeros(grid.shape)) == 0.0
    assert w1inf_norm(grid, np.zeros(grid.shape + (2, 2))) == 0.0
    f = grid.coords[..., 0] - 0.5
    assert linf_norm(grid, f) == pytest.approx(0.5)
    assert w1inf_norm(grid, f) == pytest.approx(1.5)
    # collar 2 removes the two outer layers
    assert linf_norm(grid, f, collar=2) == pytest.approx(0.5 - 2 / 16)
    with pytest.raises(DomainError):
        linf_norm(grid, f, collar=9)


def test_norm_scan_oracle(rng):
    grid = Grid.unit(3, 9)
    v = rng.standard_normal(grid.shape + (3,))
    best = 0.0
    for idx in np.ndindex(*grid.shape):
        best = max(best, float(np.sqrt(np.sum(v[idx] ** 2))))
    assert linf_norm(grid, v) == best


def test_error_report_fields():
    grid = Grid.unit(2, 9)
    t = np.ones(grid.shape + (2, 2))
    r = error_report(grid, {"a": (t * 1.1, t), "b": (np.zeros(grid.shape), np.zeros(grid.shape))}, relative=("a",))
    assert r.fields["a"]["linf_rel"] == pytest.approx(0.1)
    assert r.linf_value == pytest.approx(0.2)
    assert r.fields["b"]["linf"] == 0.0


def test_config_hash_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


@given(st.floats(0.2, 3.0), st.floats(-3, 3))
def test_loglog_fit_recovers_power_law(a, b):
    x = np.array([1e-5, 3e-5, 1e-4, 3e-4, 1e-3])
    slope, icpt, res = loglog_fit(x, np.exp(b) * x**a)
    assert slope == pytest.approx(a, rel=1e-9)
    assert icpt == pytest.approx(b, abs=1e-7)
    assert res < 1e-9


def _tau_setup(N=33):
    grid = Grid.unit(2, N)
    gamma, tau, gt, at = tau_sin(2).truth(grid)
    data = synthesize(grid, gamma, linear_traces(2, grid.point(grid.center)), m=2, tol=1e-13)
    anchor = anchor_from_truth(grid, gamma, data.grad_u, np.log(tau))

    def run(d):
        return {"log_tau": reconstruct_log_tau(anchor, d, at, two_path=False).log_tau}

    return data, run


def test_zero_noise_zero_error():
    data, run = _tau_setup(17)
    assert np.array_equal(run(add_noise(data, 0.0, 3))["log_tau"], run(data)["log_tau"])


def test_stability_experiment_outputs(tmp_path):
    data, run = _tau_setup(33)
    fit = stability_experiment(data, run, [1e-5, 3e-5, 1e-4, 3e-4], seed=0)
    assert fit.deltas == [1e-5, 3e-5, 1e-4, 3e-4]
    assert fit.monotone["log_tau"]
    assert 0.8 <= fit.slopes["log_tau"] <= 1.2
    fit.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["delta", "data_w1inf", "log_tau"] and len(rows) == 5
    with pytest.raises(DomainError):
        stability_experiment(data, run, [1e-5, 1e-4, 1e-3])
    with pytest.raises(DomainError):
        stability_experiment(data, run, [1e-5, 1e-4, 1e-4, 1e-3])
