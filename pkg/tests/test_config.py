from fractions import Fraction

import pytest

from twistloop.config import build_config, load_config
from twistloop.errors import ConfigError

GOOD = """
[model]
cells = 4
cell_size = 3
statistics = "hardcore-boson"
particles = 4
t0 = 1.0
lambda = 0.5
b = "1/3"
phi = 0.25

[model.interaction]
kind = "nearest-neighbor"
strength = 2.0

[model.boundary]
condition = "periodic"

[task]
kind = "berry"
methods = ["cm-wilson"]
phi_steps = 12
manifold_size = 1

[output]
directory = "out"
seed = 3
"""


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_load_good_config(tmp_path):
    cfg = load_config(write(tmp_path, GOOD))
    assert cfg.model.cells == 4
    assert cfg.model.b == Fraction(1, 3)
    assert cfg.model.interaction.strength == 2.0
    assert cfg.task == "berry"
    assert cfg.phi_steps == 12
    assert cfg.seed == 3
    assert len(cfg.phis()) == 12


def test_unknown_key_is_hard_error(tmp_path):
    bad = GOOD.replace("phi = 0.25", "phj = 0.25")
    with pytest.raises(ConfigError, match="phj"):
        load_config(write(tmp_path, bad))
    bad2 = GOOD + "\n[extra]\nx = 1\n"
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad2))


def test_missing_required_key(tmp_path):
    bad = GOOD.replace('particles = 4\n', "")
    with pytest.raises(ConfigError, match="particles"):
        load_config(write(tmp_path, bad))


def test_overrides_take_precedence(tmp_path):
    cfg = load_config(write(tmp_path, GOOD),
                      {"phi_steps": 5, "methods": ("m-matrix",), "seed": 9,
                       "task": "chern"})
    assert cfg.phi_steps == 5
    assert cfg.methods == ("m-matrix",)
    assert cfg.seed == 9
    assert cfg.task == "chern"


def test_unknown_method_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown method"):
        load_config(write(tmp_path, GOOD), {"methods": ("zak",)})


def test_bad_fraction(tmp_path):
    bad = GOOD.replace('b = "1/3"', 'b = "one-third"')
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad))


def test_incommensurate_rejected(tmp_path):
    bad = GOOD.replace('b = "1/3"', 'b = "1/5"')
    with pytest.raises(ConfigError, match="incommensurate"):
        load_config(write(tmp_path, bad))


def test_config_hash_stable_and_sensitive(tmp_path):
    cfg1 = load_config(write(tmp_path, GOOD))
    cfg2 = load_config(write(tmp_path, GOOD))
    assert cfg1.config_hash() == cfg2.config_hash()
    cfg3 = load_config(write(tmp_path, GOOD), {"seed": 4})
    assert cfg3.config_hash() != cfg1.config_hash()


def test_threads_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("TWISTLOOP_THREADS", "3")
    text = GOOD.replace("seed = 3", "seed = 3")
    cfg = load_config(write(tmp_path, text))
    assert cfg.threads == 3
    cfg = load_config(write(tmp_path, text), {"threads": 2})
    assert cfg.threads == 2


def test_phi_values_override_grid():
    raw = {"model": {"cells": 2, "cell_size": 3, "statistics": "hardcore-boson",
                     "particles": 2, "b": "1/3"},
           "task": {"kind": "berry", "phi_values": [0.1, 0.7]}}
    cfg = build_config(raw)
    assert cfg.phis() == [0.1, 0.7]


def test_manifold_rule_selection():
    raw = {"model": {"cells": 2, "cell_size": 3, "statistics": "hardcore-boson",
                     "particles": 2, "b": "1/3"},
           "task": {"kind": "chern", "bands": [0, 1]}}
    cfg = build_config(raw)
    assert cfg.manifold_rule().bands == (0, 1)
    raw["task"] = {"kind": "chern", "gap_tol": 0.5}
    assert build_config(raw).manifold_rule().gap_tol == 0.5
    raw["task"] = {"kind": "chern"}
    assert build_config(raw).manifold_rule().count == 1
