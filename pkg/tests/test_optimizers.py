import numpy as np
import numpy.testing as npt
import pytest
from scipy.optimize import rosen, rosen_der

from kan_compact.errors import EvaluationError
from kan_compact.optimizers import Adam, Lbfgs, ParamPacker, PlateauSchedule, step_decay_lr


class TestStepDecay:
    def test_published_schedule(self):
        assert step_decay_lr(0) == 0.002
        assert step_decay_lr(1999) == 0.002
        assert step_decay_lr(2000) == pytest.approx(0.0017)
        assert step_decay_lr(60_000) == pytest.approx(1.53e-5, rel=5e-3)
        assert step_decay_lr(60_000) == pytest.approx(0.002 * 0.85**30)

    def test_interval(self):
        assert step_decay_lr(333, lr0=1.0, every=333) == pytest.approx(0.85)


class TestPlateau:
    def test_halves_after_window(self):
        schedule = PlateauSchedule(0.01, window=5)
        lrs = [schedule.update(1.0) for _ in range(6)]
        assert lrs[:5] == [0.01] * 5
        assert lrs[5] == pytest.approx(0.005)

    def test_improvement_resets_counter(self):
        schedule = PlateauSchedule(0.01, window=3)
        for loss in (1.0, 1.0, 0.5, 0.5, 0.25, 0.25):
            schedule.update(loss)
        assert schedule.lr == 0.01

    def test_small_improvement_counts_as_plateau(self):
        schedule = PlateauSchedule(0.01, window=3, threshold=1e-3)
        for loss in (1.0, 0.99995, 0.9999, 0.99985):
            schedule.update(loss)
        assert schedule.lr == pytest.approx(0.005)

    def test_stops_below_min_lr(self):
        schedule = PlateauSchedule(4e-5, window=1, min_lr=1e-5)
        schedule.update(1.0)
        for _ in range(3):
            schedule.update(1.0)
        assert schedule.lr < 1e-5
        assert schedule.stopped


class TestAdam:
    def test_quadratic(self):
        adam = Adam(lr=0.01)
        theta = np.array([3.0, -2.0])
        for _ in range(3000):
            theta = adam.step(theta, 2.0 * theta)
        npt.assert_allclose(theta, 0.0, atol=1e-2)

    def test_first_step_is_lr_sized(self):
        adam = Adam(lr=0.1)
        theta = adam.step(np.array([1.0, 1.0]), np.array([5.0, -0.01]))
        npt.assert_allclose(theta, [0.9, 1.1], rtol=1e-6)

    def test_weight_decay_pulls_to_zero(self):
        adam = Adam(lr=0.1, weight_decay=1.0)
        theta = adam.step(np.array([2.0]), np.array([0.0]))
        assert theta[0] < 2.0


class TestLbfgs:
    def test_rosenbrock(self):
        optimizer = Lbfgs(lambda x: (rosen(x), rosen_der(x)))
        theta = np.array([-1.2, 1.0])
        for _ in range(200):
            theta, f = optimizer.step(theta)
            if optimizer.converged:
                break
        npt.assert_allclose(theta, [1.0, 1.0], atol=1e-3)
        assert f < 1e-8

    def test_quadratic_converges_fast(self):
        A = np.diag([1.0, 10.0, 100.0])
        optimizer = Lbfgs(lambda x: (0.5 * x @ A @ x, A @ x))
        theta = np.ones(3)
        for _ in range(50):
            theta, f = optimizer.step(theta)
            if optimizer.converged:
                break
        assert f < 1e-12

    def test_non_finite_start(self):
        optimizer = Lbfgs(lambda x: (np.nan, np.zeros_like(x)))
        with pytest.raises(EvaluationError):
            optimizer.step(np.zeros(2))

    def test_failed_line_search_backtracks(self):
        A = np.diag([1.0, 100.0])
        optimizer = Lbfgs(lambda x: (0.5 * x @ A @ x, A @ x))
        optimizer._search = lambda *args: None
        theta = np.ones(2)
        losses = [50.5]
        for _ in range(10):
            theta, f = optimizer.step(theta)
            assert not optimizer.converged
            assert f < losses[-1]
            losses.append(f)
        assert losses[-1] < 1.0

    def test_no_descent_reports_convergence(self):
        optimizer = Lbfgs(lambda x: (float(x @ x) if x[0] == 1.0 else 10.0, np.array([1.0, 0.0])))
        optimizer._search = lambda *args: None
        theta, f = optimizer.step(np.array([1.0, 0.0]))
        assert optimizer.converged
        npt.assert_array_equal(theta, [1.0, 0.0])
        assert f == 1.0

    def test_history_is_bounded(self):
        optimizer = Lbfgs(lambda x: (rosen(x), rosen_der(x)), history=3)
        theta = np.array([-1.2, 1.0])
        for _ in range(10):
            theta, _ = optimizer.step(theta)
        assert len(optimizer.pairs) <= 3


class TestPacker:
    def test_pack_unpack(self):
        params = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([7.0])}
        packer = ParamPacker(params)
        theta = packer.pack(params)
        assert packer.size == 7
        npt.assert_array_equal(theta, [0, 1, 2, 3, 4, 5, 7])
        back = packer.unpack(theta)
        assert list(back) == ["w", "b"]
        npt.assert_array_equal(back["w"], params["w"])
