import pytest

from rnml_eta.config import KEYS, load_config, parse_config, train_config
from rnml_eta.errors import ConfigurationError, MissingPrerequisiteError
from rnml_eta.trainer import TrainConfig

SAMPLE = """
# comment line
model.variant = rnml
train.lr = 0.001
train.max_steps = 300
aux.beta = 0.3
aux.margins = [0.01, 0.02, 0.03]
aux.gammas = 0.2, 0.5, 0.3
eval.distinct = yes
; another comment
eval.deltas = 50:500:50
"""


class TestParse:
    def test_values(self):
        v = parse_config(SAMPLE)
        assert v["model.variant"] == "rnml"
        assert v["train.lr"] == 0.001 and v["train.max_steps"] == 300
        assert v["aux.margins"] == (0.01, 0.02, 0.03)
        assert v["aux.gammas"] == (0.2, 0.5, 0.3)
        assert v["eval.distinct"] is True
        assert v["eval.deltas"] == "50:500:50"

    def test_empty(self):
        assert parse_config("") == {}

    @pytest.mark.parametrize("text", ["train.lrr = 1", "train.max_steps = many", "model.variant"])
    def test_rejected(self, text):
        with pytest.raises(ConfigurationError):
            parse_config(text)

    def test_every_key_documented(self):
        assert all(help_ for _, help_ in KEYS.values())


class TestTrainConfig:
    def test_overlay(self):
        cfg = train_config(parse_config(SAMPLE))
        assert (cfg.variant, cfg.lr, cfg.max_steps, cfg.beta) == ("rnml", 0.001, 300, 0.3)
        assert cfg.triangle.margins == (0.01, 0.02, 0.03)
        assert cfg.batch_size == TrainConfig().batch_size

    def test_base_kept(self):
        base = TrainConfig(batch_size=64, seed=9)
        cfg = train_config({"train.lr": 0.01}, base)
        assert (cfg.batch_size, cfg.seed, cfg.lr) == (64, 9, 0.01)

    @pytest.mark.parametrize("text", ["aux.beta = 2", "aux.margins = 0.1, 0.2", "model.variant = deeptte",
                                      "train.speed = psychic"])
    def test_invalid_values(self, text):
        with pytest.raises(ConfigurationError):
            train_config(parse_config(text))


class TestLoad:
    def test_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(SAMPLE)
        assert load_config(path)["aux.beta"] == 0.3

    def test_missing(self, tmp_path):
        with pytest.raises(MissingPrerequisiteError):
            load_config(tmp_path / "nope.cfg")
