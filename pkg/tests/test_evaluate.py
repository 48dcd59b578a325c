import numpy as np
import numpy.testing as npt
import pytest
import sympy as sp

from kan_compact import device, training
from kan_compact.config import TrainConfig
from kan_compact.errors import DomainError, MetricError, ShapeError
from kan_compact.evaluate import (
    SurrogateOracle,
    derivative_sweep,
    evaluate_model,
    make_report,
    mape,
    mape_charge,
    target_mape,
    waviness,
)


class _Parabola:
    """Charge-like model whose response is V_G²."""

    conversion = "charge-scale"
    metadata = {"target": "Q_S", "seed": 7}

    def predict(self, X):
        return (np.asarray(X)[:, 1] * device.V_MAX) ** 2


class TestMape:
    def test_examples(self):
        assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mape([2.0, 2.0], [1.0, 3.0]) == 0.5
        assert mape([-1.0], [-2.0]) == 0.5

    def test_all_zero_truth(self):
        with pytest.raises(MetricError):
            mape([1.0, 2.0], [0.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mape([1.0, 2.0], [1.0])

    def test_charge_floor(self):
        assert mape_charge([5.0, 1.1], [0.001, 1.0]) == pytest.approx(0.1)
        assert mape_charge([5.0, -1.1], [-0.01, -1.0]) == pytest.approx(5.11 / 1.01)

    def test_charge_all_below_floor(self):
        with pytest.raises(MetricError):
            mape_charge([1.0, 1.0], [0.001, -0.005])

    def test_scale_equivariance(self, rng):
        true = rng.uniform(1, 2, 50)
        pred = true + rng.normal(0, 0.1, 50)
        assert mape(7.5 * pred, 7.5 * true) == pytest.approx(mape(pred, true), rel=1e-12)


class TestWaviness:
    def test_monotone(self, rng):
        assert waviness(np.linspace(0, 1, 50)) == 0.0
        assert waviness(np.cumsum(rng.uniform(0, 1, 200))) == 0.0

    def test_single_peak(self):
        assert waviness([0.0, 1.0, 0.0]) == 0.0
        assert waviness([0.0, 2.0, 0.5]) == 0.0

    def test_single_valley(self):
        assert waviness([3.0, -1.0, 2.0]) == 0.0

    def test_dip_inside_a_rise(self):
        assert waviness([0.0, 6.0, 5.0, 10.0]) == pytest.approx(2.0)
        assert waviness([10.0, 5.0, 6.0, 0.0]) == pytest.approx(2.0)

    def test_ripple_on_a_ramp(self):
        x = np.linspace(0, 1, 2001)
        assert waviness(10 * x + 0.2 * np.sin(60 * x)) > 0.2
        assert waviness(10 * x + 0.01 * np.sin(60 * x)) == 0.0

    def test_scales_with_curve(self):
        curve = [0.0, 2.0, 1.0, 3.0, -1.0]
        assert waviness(curve) > 0.0
        assert waviness(np.multiply(curve, 5.0)) == pytest.approx(5.0 * waviness(curve))

    def test_two_periods(self):
        x = np.linspace(0, 4 * np.pi, 4001)
        assert waviness(np.sin(x)) == pytest.approx(4.0, abs=1e-9)

    def test_short_curves(self):
        assert waviness([]) == 0.0
        assert waviness([3.0]) == 0.0


class TestDerivativeSweep:
    def test_parabola(self):
        curve = derivative_sweep(_Parabola(), 0.4)
        assert curve.V_G.size == 821
        assert curve.V_G[-1] == pytest.approx(device.V_MAX)
        npt.assert_allclose(curve.g_m, 2.0 * curve.V_G, atol=1e-9)
        npt.assert_allclose(curve.g_m2, 2.0, atol=1e-6)

    def test_drain_voltage_range(self):
        with pytest.raises(DomainError):
            derivative_sweep(_Parabola(), 0.9)

    def test_oracle_transconductance(self):
        curve = derivative_sweep(SurrogateOracle("I_D"), 0.4)
        V_d, V_g = sp.symbols("V_d V_g", real=True)
        g_m = sp.lambdify((V_d, V_g), sp.diff(device.surrogate_expressions()["I_D"], V_g), "numpy")
        exact = g_m(0.4, curve.V_G)
        npt.assert_allclose(curve.g_m[1:-1], exact[1:-1], rtol=2e-3)
        npt.assert_allclose(curve.response, device.surrogate(0.4, curve.V_G)["I_D"] + device.I_LEAK, rtol=1e-12)


class TestOracle:
    @pytest.mark.parametrize("target", ["I_D", "Q_S", "Q_D", "Q_G"])
    def test_zero_error(self, dataset50, target):
        oracle = SurrogateOracle(target)
        assert target_mape(oracle, dataset50.train, target) < 1e-9
        assert target_mape(oracle, dataset50.test, target) < 1e-9

    def test_evaluate_model(self, dataset50):
        report = evaluate_model(SurrogateOracle("I_D"), dataset50, sweeps=(0.4,))
        assert report.step == 50
        assert report.train_mape < 1e-9
        assert set(report.curves) == {0.4}
        assert report.waviness[0.4] >= 0.0


class TestReport:
    def test_files(self, dataset50, tmp_path):
        models = [SurrogateOracle("Q_S"), _Parabola()]
        reports = make_report(models, dataset50, str(tmp_path), sweeps=(0.4, 0.8))
        assert len(reports) == 2
        rows = (tmp_path / "summary.csv").read_text().splitlines()
        assert rows[0] == "target,step,seed,train_mape,test_mape,waviness@0.4V,waviness@0.8V"
        assert rows[1].startswith("Q_S,50,0,")
        assert rows[2].startswith("Q_S,50,7,")
        statistics = (tmp_path / "statistics.csv").read_text().splitlines()
        assert statistics[0] == "split,min,q25,median,q75,max"
        curve = (tmp_path / "curve_1_vd0.800.csv").read_text().splitlines()
        assert curve[0] == "V_G,g_m,g_m2"
        assert len(curve) == 822

    def test_single_model_has_no_statistics(self, dataset50, tmp_path):
        make_report([SurrogateOracle("I_D")], dataset50, str(tmp_path), sweeps=(0.4,))
        assert not (tmp_path / "statistics.csv").exists()
        assert (tmp_path / "curve_0_vd0.400.csv").exists()

    def test_reproducible(self, dataset50, tmp_path):
        models = [SurrogateOracle("I_D"), SurrogateOracle("Q_G")]
        make_report(models, dataset50, str(tmp_path / "a"))
        make_report(models, dataset50, str(tmp_path / "b"))
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.slow
def test_fourier_kan_is_at_least_as_wavy_as_mlp():
    dataset = device.generate_dataset(20)
    medians = {}
    for family in ("MLP", "FKAN"):
        config = TrainConfig(family=family, target="I_D", step=20)
        summary = training.seed_sweep(config, 5, dataset=dataset)
        scores = [
            waviness(derivative_sweep(r.checkpoint, 0.4).g_m2)
            for r in summary.results
            if not r.diverged
        ]
        medians[family] = np.median(scores)
    assert medians["FKAN"] >= medians["MLP"]
