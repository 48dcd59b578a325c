import pytest

from kan_compact.config import TrainConfig, config_from_mapping, load_config
from kan_compact.errors import ConfigError


class TestDefaults:
    @pytest.mark.parametrize(
        "family, target, lr",
        [
            ("MLP", "I_D", 0.005),
            ("MLP", "Q_S", 0.01),
            ("KAN", "I_D", 0.1),
            ("KAN", "Q_G", 1.0),
            ("FKAN", "I_D", 0.002),
            ("FKAN", "Q_D", 0.002),
        ],
    )
    def test_learning_rates(self, family, target, lr):
        assert TrainConfig(family=family, target=target).resolved_lr == lr

    @pytest.mark.parametrize(
        "family, desk, full", [("MLP", 5000, 40000), ("KAN", 1500, 1500), ("FKAN", 10000, 60000)]
    )
    def test_budgets(self, family, desk, full):
        assert TrainConfig(family=family).resolved_epochs == desk
        assert TrainConfig(family=family, full_budget=True).resolved_epochs == full

    def test_explicit_values_win(self):
        config = TrainConfig(family="FKAN", epochs=123, lr=0.5)
        assert config.resolved_epochs == 123
        assert config.resolved_lr == 0.5

    def test_fkan_decay_interval_scales_with_budget(self):
        assert TrainConfig(family="FKAN", full_budget=True).resolved_decay_every == 2000
        assert TrainConfig(family="FKAN").resolved_decay_every == 333
        assert TrainConfig(family="FKAN", decay_every=50).resolved_decay_every == 50

    def test_kan_stage_budget(self):
        assert TrainConfig(family="KAN").stage_epochs == 300
        assert TrainConfig(family="KAN", epochs=7, ladder=(2, 4)).stage_epochs == 3

    def test_network_defaults(self):
        assert TrainConfig(family="KAN", target="I_D").network().widths == (2, 3, 1, 1)
        assert TrainConfig(family="KAN").network(G=4).grids == (4, 4)
        assert TrainConfig(family="FKAN", preset="FKAN2").network().grids == (8, 2, 8)

    def test_resolved_fills_everything(self):
        resolved = TrainConfig(family="MLP").resolved()
        assert resolved["preset"] == "MLP1"
        assert resolved["epochs"] == 5000
        assert resolved["lr"] == 0.01
        assert resolved["ladder"] == [2, 4, 8, 12, 16]

    def test_overrides_skip_none(self):
        config = TrainConfig(seed=4).with_overrides(seed=None, epochs=10)
        assert config.seed == 4
        assert config.epochs == 10


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"family": "CNN"},
            {"target": "Q_B"},
            {"step": 7},
            {"family": "MLP", "preset": "KAN1"},
            {"preset": "MLP9"},
            {"a": 0.0},
            {"epochs": -1},
            {"lr": 0.0},
            {"ladder": (4, 2)},
            {"ladder": ()},
            {"k": 0},
            {"retrain_fraction": 1.5},
        ],
    )
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_zero_budget_allowed(self):
        assert TrainConfig(epochs=0).resolved_epochs == 0


class TestFiles:
    def test_load_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            "\n".join(
                [
                    "[network]",
                    'family = "KAN"',
                    'preset = "KAN-SR"',
                    'target = "Q_S"',
                    "[data]",
                    "step = 50",
                    "[train]",
                    "seed = 3",
                    "epochs = 10",
                    "[lbfgs]",
                    "ladder = [2, 4]",
                    "[symbolic]",
                    "k = 2",
                ]
            )
        )
        config = load_config(str(path))
        assert (config.family, config.preset, config.step, config.seed) == ("KAN", "KAN-SR", 50, 3)
        assert config.ladder == (2, 4)
        assert config.k == 2
        assert config.stage_epochs == 5

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        assert load_config(str(path)) == TrainConfig()

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"optimizer": {"lr": 1.0}})

    def test_key_in_wrong_section(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"data": {"seed": 1}})

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[train\nseed = ")
        with pytest.raises(ConfigError):
            load_config(str(path))
