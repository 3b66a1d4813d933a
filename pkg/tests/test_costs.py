"""Affine scaling-law arithmetic against the published constants."""

from types import SimpleNamespace

import numpy as np
import pytest

from scaledig.costs import (CostModel, baseline_mem, baseline_time,
                            bytes_to_mb, cost_mem, cost_time, crossover,
                            fit_cost_model, paper_fixtures)


def test_fixture_constants():
    model, tau_rgb, mu_rgb = paper_fixtures()
    assert model.t1 == 31.2 * 60.0 == 1872.0
    assert model.tau == 2.23
    assert model.m1 == 361.0
    assert model.mu == 0.48
    assert model.n1 == 500
    assert tau_rgb == 16.02
    assert mu_rgb == 1.50


def test_published_totals_at_two_thousand_scenes():
    model, tau_rgb, mu_rgb = paper_fixtures()
    t = cost_time(model, 2000)
    m = cost_mem(model, 2000)
    assert t == pytest.approx(5217.0, rel=0.005)
    assert m == pytest.approx(1081.0, rel=0.005)
    assert t == 1872.0 + 1500 * 2.23  # exact arithmetic, not just close
    assert m == 361.0 + 1500 * 0.48
    assert baseline_time(tau_rgb, 2000) == pytest.approx(32040.0, rel=0.005)
    assert baseline_mem(mu_rgb, 2000) == pytest.approx(3000.0, rel=0.005)


def test_costs_are_affine_in_n():
    model, _, _ = paper_fixtures()
    # equal second differences vanish for affine maps
    ts = [cost_time(model, n) for n in (500, 700, 900)]
    assert ts[2] - ts[1] == pytest.approx(ts[1] - ts[0], abs=1e-9)
    ms = [cost_mem(model, n) for n in (500, 1000, 1500)]
    assert ms[2] - ms[1] == pytest.approx(ms[1] - ms[0], abs=1e-9)
    assert cost_time(model, 500) == model.t1
    assert cost_mem(model, 500) == model.m1


def test_crossover_closed_form():
    model, tau_rgb, _ = paper_fixtures()
    n_star = crossover(model, tau_rgb)
    assert n_star == pytest.approx((1872.0 - 500 * 2.23) / (16.02 - 2.23))
    assert n_star == pytest.approx(757.0 / 13.79)
    # the root sits where the two lines actually cross
    t_ours = cost_time(model, n_star, extrapolate=True)
    assert t_ours == pytest.approx(baseline_time(tau_rgb, n_star), abs=1e-9)


def test_amortized_beats_baseline_beyond_crossover():
    model, tau_rgb, mu_rgb = paper_fixtures()
    n_star = crossover(model, tau_rgb)
    for n in (136, 200, 500, 2000, 10 ** 6):
        if n >= n_star:
            assert cost_time(model, n, extrapolate=True) \
                < baseline_time(tau_rgb, n)
    for n in (10, 30, int(n_star)):
        assert cost_time(model, n, extrapolate=True) \
            > baseline_time(tau_rgb, n)
    # memory crossover exists too and the published config clears it
    m_star = (model.m1 - model.n1 * model.mu) / (mu_rgb - model.mu)
    assert cost_mem(model, 2000) < baseline_mem(mu_rgb, 2000)
    assert 2000 > m_star


def test_below_range_needs_explicit_extrapolation():
    model, _, _ = paper_fixtures()
    with pytest.raises(ValueError):
        cost_time(model, 100)
    with pytest.raises(ValueError):
        cost_mem(model, 499)
    assert cost_time(model, 100, extrapolate=True) == \
        pytest.approx(1872.0 - 400 * 2.23)


def test_crossover_requires_cheaper_slope():
    model, _, _ = paper_fixtures()
    with pytest.raises(ValueError):
        crossover(model, model.tau)
    with pytest.raises(ValueError):
        crossover(model, 0.5)


def test_model_validation():
    with pytest.raises(ValueError):
        CostModel(t1=-1.0, tau=1.0, m1=1.0, mu=1.0, n1=1)
    with pytest.raises(ValueError):
        CostModel(t1=1.0, tau=1.0, m1=1.0, mu=-0.1, n1=1)


def test_bytes_to_mb_uses_binary_megabyte():
    assert bytes_to_mb(2 ** 20) == 1.0
    assert bytes_to_mb(3 * 64 * 64 * 32 * 4) == 1.5


def test_fit_cost_model_from_reports():
    def rep(stage, minutes, mb, n):
        return SimpleNamespace(stage=stage, wall_minutes=minutes,
                               stored_mb=mb, n_scenes=n)

    reports = [rep("stage1", 30.0, 10.0, 4),
               rep("stage2", 2.0, 1.0, 2),
               rep("stage2", 4.0, 3.0, 2)]
    model = fit_cost_model(reports)
    assert model.t1 == 30.0 and model.m1 == 10.0 and model.n1 == 4
    assert model.tau == pytest.approx(6.0 / 4.0)
    assert model.mu == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_cost_model([rep("stage1", 1.0, 1.0, 1)])


def test_paper_scale_fit_reproduces_slopes():
    # synthetic reports built from the published constants fit back to them
    model, _, _ = paper_fixtures()
    reports = [SimpleNamespace(stage="stage1", wall_minutes=model.t1,
                               stored_mb=model.m1, n_scenes=model.n1),
               SimpleNamespace(stage="stage2",
                               wall_minutes=model.tau * 1500,
                               stored_mb=model.mu * 1500, n_scenes=1500)]
    fit = fit_cost_model(reports)
    assert fit.tau == pytest.approx(model.tau)
    assert fit.mu == pytest.approx(model.mu)
    assert cost_time(fit, 2000) == pytest.approx(5217.0)
    assert cost_mem(fit, 2000) == pytest.approx(1081.0)
