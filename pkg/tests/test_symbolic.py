import numpy as np
import numpy.testing as npt
import pytest
import sympy as sp

from kan_compact import device, functions, networks, symbolic, training
from kan_compact.config import TrainConfig
from kan_compact.errors import SymbolicError
from kan_compact.evaluate import derivative_sweep, target_mape
from kan_compact.losses import RegressionObjective
from kan_compact.networks import Checkpoint, edge_ids
from kan_compact.symbolic import EdgeFit, fit_basic, fix_edge, suggest

SAFE_FUNCTIONS = ("x", "x^2", "sin", "cos", "tanh", "arctan")


def _fully_fixed(checkpoint, rng, names=SAFE_FUNCTIONS):
    for edge in edge_ids(checkpoint.spec):
        fit = EdgeFit(
            edge,
            str(rng.choice(names)),
            float(rng.uniform(-2, 2)),
            float(rng.uniform(-1, 1)),
            float(rng.uniform(-2, 2)),
            float(rng.uniform(-1, 1)),
            1.0,
        )
        checkpoint = fix_edge(checkpoint, edge, fit)
    return checkpoint


class TestFunctionLibrary:
    def test_order_and_lookup(self):
        assert functions.names()[:3] == ["x", "x^2", "x^3"]
        assert functions.get("tanh")(0.0) == 0.0
        with pytest.raises(SymbolicError):
            functions.get("erf")

    @pytest.mark.parametrize("name", ["x^3", "exp", "sin", "tanh", "arctan", "1/x"])
    def test_derivatives(self, name):
        fn = functions.get(name)
        x = np.array([0.4, 1.3])
        numeric = (fn.f(x + 1e-6) - fn.f(x - 1e-6)) / 2e-6
        npt.assert_allclose(fn.df(x), numeric, rtol=1e-6)


class TestFitting:
    def test_recovers_sine(self):
        x = np.linspace(0, 1, 200)
        fit = fit_basic(x, np.sin(3 * x + 1), "sin")
        assert fit.r2 > 0.999
        npt.assert_allclose(fit(x), np.sin(3 * x + 1), atol=1e-3)

    def test_constant_samples(self):
        x = np.linspace(0, 1, 50)
        fit = fit_basic(x, np.full(50, 5.0), "sin")
        assert (fit.c, fit.d, fit.r2) == (0.0, 5.0, 1.0)

    def test_square_beats_tanh_on_parabola(self):
        x = np.linspace(0, 1, 100)
        y = x**2
        assert fit_basic(x, y, "x^2").r2 > fit_basic(x, y, "tanh").r2

    def test_r2_ignores_affine_rescaling(self):
        x = np.linspace(0, 1, 80)
        y = np.tanh(2 * x - 1) + 0.1 * x**2
        r2 = fit_basic(x, y, "arctan").r2
        assert fit_basic(x, 3.0 * y + 2.0, "arctan").r2 == pytest.approx(r2, abs=1e-8)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_basic(np.arange(4.0), np.arange(4.0), "x")

    def test_suggest_ranks_sine_first(self):
        x = np.linspace(0, 1, 200)
        top = suggest(x, np.sin(3 * x + 1))[0]
        assert top.function == "sin"

    def test_suggest_linear_is_exact(self):
        x = np.linspace(0, 1, 60)
        top = suggest(x, 2.0 * x - 0.5)[0]
        assert top.r2 > 1 - 1e-12

    def test_suggest_constant_prefers_library_order(self):
        x = np.linspace(0, 1, 60)
        fits = suggest(x, np.full(60, -1.0))
        assert all(f.r2 == 1.0 for f in fits)
        assert fits[0].function == "x"


class TestFixing:
    def test_identity_edge(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((1, 1))
        checkpoint = fix_edge(checkpoint, (0, 0, 0), EdgeFit(None, "x", 1.0, 0.0, 1.0, 0.0, 1.0))
        X = rng.uniform(0, 1, (40, 1))
        npt.assert_allclose(checkpoint.predict(X), X[:, 0], atol=1e-15)

    def test_fixing_twice(self, make_checkpoint):
        fit = EdgeFit(None, "x", 1.0, 0.0, 1.0, 0.0, 1.0)
        checkpoint = fix_edge(make_checkpoint((1, 1)), (0, 0, 0), fit)
        with pytest.raises(SymbolicError):
            fix_edge(checkpoint, (0, 0, 0), fit)

    def test_unknown_edge_or_function(self, make_checkpoint):
        checkpoint = make_checkpoint((1, 1))
        with pytest.raises(SymbolicError):
            fix_edge(checkpoint, (0, 1, 0), EdgeFit(None, "x", 1.0, 0.0, 1.0, 0.0, 1.0))
        with pytest.raises(SymbolicError):
            fix_edge(checkpoint, (0, 0, 0), EdgeFit(None, "erf", 1.0, 0.0, 1.0, 0.0, 1.0))

    def test_fixed_edge_ignores_spline(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 1))
        fit = EdgeFit(None, "sin", 1.0, 0.0, 2.0, 0.0, 1.0)
        fixed = fix_edge(checkpoint, (0, 0, 0), fit)
        X = rng.uniform(0, 1, (30, 2))
        other = checkpoint.edge_values(X)[0][:, 1, 0]
        npt.assert_allclose(fixed.predict(X), 2.0 * np.sin(X[:, 0]) + other, atol=1e-12)


class TestFormula:
    def test_single_sine_edge(self, make_checkpoint):
        checkpoint = fix_edge(
            make_checkpoint((1, 1)), (0, 0, 0), EdgeFit(None, "sin", 1.0, 0.0, 2.0, 0.0, 1.0)
        )
        formula = symbolic.extract_formula(checkpoint)
        assert "sin(" in formula.text
        X = np.linspace(0, 1, 11)[:, None]
        npt.assert_allclose(formula.evaluate(X), 2.0 * np.sin(X[:, 0]), atol=1e-12)

    def test_parallel_edges_sum(self, make_checkpoint):
        checkpoint = make_checkpoint((2, 1))
        checkpoint = fix_edge(checkpoint, (0, 0, 0), EdgeFit(None, "x", 1.0, 0.0, 1.0, 0.0, 1.0))
        checkpoint = fix_edge(checkpoint, (0, 1, 0), EdgeFit(None, "x^2", 1.0, 0.0, 1.0, 0.0, 1.0))
        formula = symbolic.extract_formula(checkpoint)
        x0, x1 = formula.symbols
        poly = sp.Poly(sp.expand(formula.expr), x0, x1)
        assert poly.total_degree() == 2
        assert float(poly.coeff_monomial(x0)) == pytest.approx(1.0)
        assert float(poly.coeff_monomial(x1**2)) == pytest.approx(1.0)

    def test_matches_network(self, make_checkpoint, rng):
        checkpoint = _fully_fixed(make_checkpoint((2, 3, 1)), rng)
        formula = symbolic.extract_formula(checkpoint)
        X = rng.uniform(0, 1, (1000, 2))
        npt.assert_allclose(formula.evaluate(X), checkpoint.predict(X), atol=1e-10)

    def test_display_uses_voltages(self, make_checkpoint, rng):
        formula = symbolic.extract_formula(_fully_fixed(make_checkpoint((2, 1)), rng))
        names = {s.name for s in formula.display.free_symbols}
        assert names <= {"V_d", "V_g"}

    def test_incomplete_model(self, make_checkpoint):
        with pytest.raises(SymbolicError):
            symbolic.extract_formula(make_checkpoint((2, 1)))

    def test_save_writes_text_and_tree(self, make_checkpoint, rng, tmp_path):
        formula = symbolic.extract_formula(_fully_fixed(make_checkpoint((2, 1)), rng))
        path = tmp_path / "out" / "formula.txt"
        formula.save(str(path))
        assert path.read_text().strip() == formula.text
        assert (tmp_path / "out" / "formula.json").exists()
        assert formula.tree["op"] == "Add"

    def test_analytic_derivative_matches_sweep(self, make_checkpoint, rng):
        checkpoint = _fully_fixed(make_checkpoint((2, 2, 1)), rng, names=("sin", "tanh", "x"))
        curve = derivative_sweep(checkpoint, 0.4)
        g_m = symbolic.formula_derivative(checkpoint, "V_G")(0.4, curve.V_G)
        scale = np.max(np.abs(g_m))
        npt.assert_allclose(curve.g_m, g_m, rtol=1e-4, atol=1e-4 * scale)


class TestProcedures:
    def test_posthoc_fixes_everything(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 3, 1))
        model = symbolic.symbolize(checkpoint, rng.uniform(0, 1, (64, 2)))
        assert model.complete
        assert set(model.fits) == set(edge_ids(checkpoint.spec))

    def test_iterative_round_count(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 6, 1))
        X = rng.uniform(0, 1, (64, 2))
        objective = RegressionObjective(X, np.sin(X[:, 0]) + X[:, 1] ** 2)
        model, rounds = symbolic.iterative_sr(
            checkpoint, None, 3, TrainConfig(family="KAN"), objective=objective, retrain_epochs=0
        )
        assert len(rounds) == 6
        assert all(len(r.edges) == 3 for r in rounds)
        assert model.complete
        seen = [e for r in rounds for e in r.edges]
        assert len(set(seen)) == 18

    def test_iterative_with_retraining(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 2, 1))
        X = rng.uniform(0, 1, (64, 2))
        objective = RegressionObjective(X, np.sin(X[:, 0]) + X[:, 1])
        model, rounds = symbolic.iterative_sr(
            checkpoint, None, 2, TrainConfig(family="KAN"), objective=objective, retrain_epochs=3
        )
        assert len(rounds) == 2
        assert model.complete
        assert np.isfinite(rounds[0].loss)
        assert np.isnan(rounds[-1].loss)

    def test_all_edges_at_once_skips_retraining(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 3, 1))
        X = rng.uniform(0, 1, (64, 2))
        objective = RegressionObjective(X, np.sin(X[:, 0]) + X[:, 1])
        iterative, rounds = symbolic.iterative_sr(
            checkpoint, None, 9, TrainConfig(family="KAN"), objective=objective, retrain_epochs=5
        )
        posthoc = symbolic.symbolize(checkpoint, X)
        assert len(rounds) == 1
        assert np.isnan(rounds[0].loss)
        for name, value in posthoc.checkpoint.params.items():
            npt.assert_array_equal(iterative.checkpoint.params[name], value)

    def test_one_round_equals_posthoc(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 3, 1))
        X = rng.uniform(0, 1, (64, 2))
        objective = RegressionObjective(X, X[:, 0])
        iterative, rounds = symbolic.iterative_sr(
            checkpoint, None, 9, TrainConfig(family="KAN"), objective=objective, retrain_epochs=0
        )
        posthoc = symbolic.symbolize(checkpoint, X)
        assert len(rounds) == 1
        assert iterative.checkpoint.fixed == posthoc.checkpoint.fixed
        npt.assert_array_equal(
            iterative.checkpoint.params["layer0.affine"], posthoc.checkpoint.params["layer0.affine"]
        )

    def test_invalid_k(self, make_checkpoint):
        with pytest.raises(SymbolicError):
            symbolic.iterative_sr(make_checkpoint((2, 1)), None, 0, TrainConfig(family="KAN"))


class TestAblation:
    def _dead_drain_model(self, make_checkpoint, rng):
        checkpoint = make_checkpoint((2, 3, 1))
        checkpoint.params["layer0.w_b"][0, :] = 0.0
        checkpoint.params["layer0.w_s"][0, :] = 0.0
        X = rng.uniform(0, 1, (64, 2))
        X[0] = 0.0
        return symbolic.symbolize(checkpoint, X)

    def test_dead_variable_changes_nothing(self, make_checkpoint, rng):
        model = self._dead_drain_model(make_checkpoint, rng)
        ablated = symbolic.ablate_variable(model, "V_D")
        X = rng.uniform(0, 1, (100, 2))
        npt.assert_allclose(ablated.predict(X), model.predict(X), atol=1e-9)
        assert ablated.metadata["ablated"] == ["V_D"]

    def test_idempotent(self, make_checkpoint, rng):
        model = self._dead_drain_model(make_checkpoint, rng)
        once = symbolic.ablate_variable(model, "V_G")
        twice = symbolic.ablate_variable(once, "V_G")
        npt.assert_array_equal(once.checkpoint.params["layer0.affine"], twice.checkpoint.params["layer0.affine"])
        assert twice.metadata["ablated"] == ["V_G"]

    def test_ablated_variable_is_ignored(self, make_checkpoint, rng):
        model = symbolic.ablate_variable(self._dead_drain_model(make_checkpoint, rng), "V_G")
        X = rng.uniform(0, 1, (20, 2))
        Y = X.copy()
        Y[:, 1] = rng.uniform(0, 1, 20)
        npt.assert_allclose(model.predict(X), model.predict(Y), atol=1e-12)

    def test_unknown_variable(self, make_checkpoint, rng):
        with pytest.raises(SymbolicError):
            symbolic.ablate_variable(self._dead_drain_model(make_checkpoint, rng), "V_S")

    def test_needs_fixed_edges(self, make_checkpoint):
        with pytest.raises(SymbolicError):
            symbolic.ablate_variable(symbolic.SymbolicModel(make_checkpoint((2, 1))), "V_D")


def test_checkpoint_fit_record(make_checkpoint, rng):
    model = symbolic.symbolize(make_checkpoint((1, 1)), rng.uniform(0, 1, (40, 1)))
    (fit,) = model.edge_fits()
    assert fit.fixed
    assert isinstance(model.checkpoint, Checkpoint)


@pytest.mark.slow
class TestSurrogateCharges:
    STEP = 20

    @pytest.fixture(scope="class")
    def dataset(self):
        return device.generate_dataset(self.STEP)

    @pytest.fixture(scope="class")
    def trained(self, dataset):
        runs = {}
        for target in ("Q_S", "Q_D"):
            config = TrainConfig(family="KAN", preset="KAN-SR", target=target, step=self.STEP)
            checkpoint, _ = training.train(config, dataset=dataset)
            runs[target] = (config, checkpoint)
        return runs

    @pytest.mark.parametrize("target", ["Q_S", "Q_D"])
    def test_iterative_beats_posthoc(self, trained, dataset, target):
        config, checkpoint = trained[target]
        posthoc = symbolic.symbolize(checkpoint, dataset.train.inputs())
        iterative, _ = symbolic.iterative_sr(checkpoint, dataset, 3, config)
        assert target_mape(iterative, dataset.train, target) <= target_mape(
            posthoc, dataset.train, target
        )

    def test_source_charge_ignores_drain_voltage(self, trained, dataset):
        _, checkpoint = trained["Q_S"]
        scores = networks.attribution(checkpoint, dataset.train.inputs()).edges[0]
        assert scores[0].max() < 0.1 * scores[1].max()

    def test_gate_voltage_dominates_ablation(self, trained, dataset):
        config, checkpoint = trained["Q_S"]
        model, _ = symbolic.iterative_sr(checkpoint, dataset, 3, config)
        without_drain = target_mape(symbolic.ablate_variable(model, "V_D"), dataset.train, "Q_S")
        without_gate = target_mape(symbolic.ablate_variable(model, "V_G"), dataset.train, "Q_S")
        assert without_gate > 10 * without_drain
