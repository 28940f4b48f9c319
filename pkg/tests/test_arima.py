import numpy as np
import pytest

from sohcast.arima import (
    ArimaModel,
    ArimaOrder,
    css_objective,
    fit_arima,
    forecast,
    in_sample_forecasts,
    is_invertible,
    is_stationary,
    persistence_forecast,
    rolling_forecast,
    select_order_by_aic,
)
from oracles import ses_path
from sohcast.errors import DegenerateSeries, InvalidOrder, TooShort


def simulate_arima011(rng, n, theta, start=100.0):
    e = rng.normal(size=n + 1)
    w = e[1:] + theta * e[:-1]
    return start + np.concatenate([[0.0], np.cumsum(w)])


def test_order_guards():
    with pytest.raises(InvalidOrder):
        ArimaOrder(0, 0, 0)
    with pytest.raises(InvalidOrder):
        ArimaOrder(6, 1, 0)
    assert ArimaOrder.parse("(0,1,1)") == ArimaOrder(0, 1, 1)
    assert str(ArimaOrder(0, 1, 1)) == "ARIMA(0,1,1)"


def test_random_walk_model_is_persistence(rng):
    y = rng.normal(size=40).cumsum() + 96
    model = fit_arima(y, ArimaOrder(0, 1, 0))
    assert forecast(model, 3).tolist() == [y[-1]] * 3
    y2 = np.array([90.0] * 20 + [96.0])
    assert forecast(fit_arima(y2, ArimaOrder(0, 1, 0)), 3).tolist() == [96.0, 96.0, 96.0]


def test_random_walk_rolling_equals_persistence(rng):
    y = rng.normal(size=45).cumsum()
    a, _ = rolling_forecast(y, ArimaOrder(0, 1, 0), 0.66)
    b, _ = persistence_forecast(y, 0.66)
    assert np.array_equal(a.predicted, b.predicted)


def test_arima011_matches_ses(rng):
    for _ in range(100):
        n = int(rng.integers(15, 60))
        y = rng.normal(size=n).cumsum() + rng.normal(size=n) * rng.uniform(0.2, 3)
        model = fit_arima(y, ArimaOrder(0, 1, 1))
        alpha = 1 + model.theta[0]
        path = ses_path(y, alpha)
        np.testing.assert_allclose(in_sample_forecasts(model, y), path[:-1], rtol=0, atol=1e-8)
        assert abs(forecast(model, 1)[0] - path[-1]) < 1e-8


def test_arima011_multi_step_flat(rng):
    y = rng.normal(size=50).cumsum()
    model = fit_arima(y, ArimaOrder(0, 1, 1))
    f = forecast(model, 5)
    assert np.allclose(f, f[0], rtol=0, atol=1e-12)


def test_arima011_recovers_theta(rng):
    y = simulate_arima011(rng, 2000, -0.6)
    model = fit_arima(y, ArimaOrder(0, 1, 1))
    assert -0.70 <= model.theta[0] <= -0.50


def test_css_local_optimality(rng):
    for order in (ArimaOrder(1, 1, 1), ArimaOrder(2, 0, 0), ArimaOrder(0, 1, 2)):
        y = simulate_arima011(rng, 150, -0.4)
        model = fit_arima(y, order)
        best = css_objective(y, order, model.mu, model.phi, model.theta)
        assert best == pytest.approx(model.css, rel=1e-12)
        probes = 0
        while probes < 64:
            phi = rng.uniform(-0.95, 0.95, order.p)
            theta = rng.uniform(-0.95, 0.95, order.q)
            if not (is_stationary(phi) and is_invertible(theta)):
                continue
            mu = model.mu + rng.normal() if order.d == 0 else 0.0
            assert best <= css_objective(y, order, mu, phi, theta) + 1e-9
            probes += 1


def test_shift_invariance(rng):
    y = rng.normal(size=40).cumsum()
    for order in (ArimaOrder(0, 1, 1), ArimaOrder(1, 1, 0)):
        f1 = forecast(fit_arima(y, order), 3)
        f2 = forecast(fit_arima(y + 50.0, order), 3)
        np.testing.assert_allclose(f2, f1 + 50.0, atol=1e-9)


def test_rolling_forecast_causal(rng):
    y = rng.normal(size=40).cumsum()
    n_train = 26
    trace, _ = rolling_forecast(y, ArimaOrder(0, 1, 1), n_train)
    for k in range(len(trace)):
        t = n_train + k
        z = y.copy()
        z[t:] = rng.permutation(z[t:])
        z_trace, _ = rolling_forecast(z, ArimaOrder(0, 1, 1), n_train)
        assert z_trace.predicted[k] == trace.predicted[k]


def test_linear_ramp_rmse_is_slope():
    y = 2.5 * np.arange(30.0)
    trace, m = rolling_forecast(y, ArimaOrder(0, 1, 0), 0.66)
    assert np.allclose(trace.observed - trace.predicted, 2.5)
    assert m.rmse == pytest.approx(2.5, abs=1e-12)


def test_persistence_examples():
    _, m = persistence_forecast(np.full(10, 4.0), 0.5)
    assert m.rmse == 0
    trace, m = persistence_forecast([1.0, 2.0, 3.0], 2)
    assert trace.predicted.tolist() == [2.0] and m.rmse == 1.0
    with pytest.raises(TooShort):
        persistence_forecast([1.0, 2.0], 2)


def test_fit_errors():
    with pytest.raises(TooShort):
        fit_arima(np.arange(5.0), ArimaOrder(0, 1, 1))
    with pytest.raises(DegenerateSeries):
        fit_arima(np.arange(20.0), ArimaOrder(0, 1, 1))


def test_forecast_within_noise_band():
    from sohcast.pipeline import analyze_battery
    from sohcast.synth import FleetConfig, generate_battery

    series, _ = generate_battery(FleetConfig(n_batteries=1, seed=4), 0)
    soh = analyze_battery(series, with_features=False).soh
    y = soh.soh[soh.present]
    model = fit_arima(y[:-6], ArimaOrder(0, 1, 1))
    band = 3 * np.std(np.diff(y)) * np.sqrt(np.arange(1, 7))
    assert np.all(np.abs(forecast(model, 6) - y[-6:]) <= band)


def test_model_json_round_trip(rng):
    y = rng.normal(size=40).cumsum()
    model = fit_arima(y, ArimaOrder(1, 1, 1))
    back = ArimaModel.from_dict(model.to_dict())
    assert np.array_equal(forecast(back, 4), forecast(model, 4))


def test_select_order_by_aic(rng):
    y = simulate_arima011(rng, 300, -0.7)
    order, table = select_order_by_aic(y, 2, 2, 1)
    assert len(table) >= 8
    assert table[0]["aic"] == min(r["aic"] for r in table)
    assert order.q >= 1
