# MIT License
#
# Copyright (c) 2019 Tuomas Halvari, Juha Harviainen, Juha Mylläri, Antti Röyskö, Juuso Silvennoinen
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import json
import tempfile

import pytest

from bridgesampler.bridge import CMCD, DBS, FIXED_FORWARD
from bridgesampler.config import GRIDS, PRESETS, RunConfig, expand, grid, load_config, preset
from bridgesampler.exceptions import ConfigurationError


def test_defaults_are_valid():
    config = RunConfig()

    assert config.parameterization == CMCD
    assert config.interpolation_lr == config.lr


@pytest.mark.parametrize("overrides", [
    {"loss": "kl"},
    {"parameterization": "ddpm"},
    {"proposal": "forward", "loss": "rkl_ld"},
    {"parameterization": FIXED_FORWARD, "learn_sigma": True},
    {"lr": 0.0},
    {"sigma_init": -1.0},
    {"T": 0},
    {"iterations": -1},
    {"target": {"d": 2}},
])
def test_invalid_configurations_raise(overrides):
    with pytest.raises(ConfigurationError):
        RunConfig(**overrides)


def test_forward_proposal_is_allowed_for_lv():
    config = RunConfig(loss="lv", proposal="forward", parameterization=DBS)

    assert config.proposal == "forward"


def test_toml_file_is_loaded(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('parameterization = "dbs"\nloss = "lv"\nT = 8\n\n[target]\nname = "funnel"\nd = 4\n')

    config = load_config(path)

    assert config.parameterization == DBS
    assert config.T == 8
    assert config.target == {"name": "funnel", "d": 4}


def test_json_file_is_loaded():
    temp = tempfile.NamedTemporaryFile(suffix=".json")
    temp.write(bytes(json.dumps({"loss": "rkl_r", "seed": 4}), encoding="UTF-8"))
    temp.seek(0)

    config = load_config(temp.name)

    assert config.loss == "rkl_r"
    assert config.seed == 4


def test_unknown_keys_and_formats_raise(tmp_path):
    bad_key = tmp_path / "run.json"
    bad_key.write_text(json.dumps({"learning_rate": 1e-3}))
    bad_suffix = tmp_path / "run.yaml"
    bad_suffix.write_text("loss: lv\n")
    broken = tmp_path / "broken.toml"
    broken.write_text("loss = \n")

    for path in (bad_key, bad_suffix, broken):
        with pytest.raises(ConfigurationError):
            load_config(path)


def test_config_survives_dict_conversion():
    config = preset("gmm_desk", seed=3)

    assert RunConfig.from_dict(config.to_dict()) == config


def test_presets_are_valid():
    for name in PRESETS:
        assert preset(name).iterations == 4000
    assert preset("gmm_desk").target["m"] == 8
    with pytest.raises(ConfigurationError):
        preset("imagenet")


def test_grid_is_the_cartesian_product():
    overrides = grid("manywell")

    assert len(overrides) == 27
    assert {"sigma_init": 0.05, "prior_std_init": 0.5, "lr": 1e-3} in overrides
    assert set(GRIDS) == {"manywell", "bayesian", "mixture"}
    with pytest.raises(ConfigurationError):
        grid("vision")


def test_expand_covers_overrides_and_seeds():
    base = RunConfig(iterations=10)

    configs = expand(base, grid("mixture"), seeds=(0, 1))

    assert len(configs) == 6
    assert {config.seed for config in configs} == {0, 1}
    assert all(config.interpolation_lr == config.lr for config in configs)
    assert all(config.iterations == 10 for config in configs)
