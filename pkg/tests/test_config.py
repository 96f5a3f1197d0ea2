import json
import warnings
from typing import List, Optional

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isdnn_lab.config import RunConfig, coerce, config_keys, load_config, set_key
from isdnn_lab.errors import ConfigError, StorageError


def test_defaults_validate_quietly():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        RunConfig().validate()


def test_dimension_rules():
    cfg = RunConfig()
    cfg.system.pilots = 4
    with pytest.raises(ConfigError, match="Np"):
        cfg.validate()
    cfg = RunConfig()
    cfg.system.nt, cfg.system.pilots, cfg.system.nr = 8, 8, 4
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = RunConfig()
    cfg.system.nt, cfg.system.pilots, cfg.system.nr = 4, 4, 8
    with pytest.warns(UserWarning, match="Nr/4"):
        cfg.validate()


def test_coerce():
    assert coerce(int, "5", "k") == 5
    assert coerce(bool, "yes", "k") is True and coerce(bool, "off", "k") is False
    assert coerce(List[float], "[0, 5.5]", "k") == [0.0, 5.5]
    assert coerce(List[str], "ls,mmse", "k") == ["ls", "mmse"]
    assert coerce(Optional[List[int]], "", "k") is None
    for hint, bad in ((int, "x"), (int, 2.5), (bool, "maybe")):
        with pytest.raises(ConfigError):
            coerce(hint, bad, "k")


def test_every_key_settable():
    keys = [k for k, _, _ in config_keys()]
    assert len(keys) == len(set(keys))
    assert {"system.nt", "system.pilots", "network.e1", "training.patience", "eval.repetitions"} <= set(keys)
    cfg = RunConfig()
    set_key(cfg, "training.patience", "7")
    assert cfg.training.patience == 7


def test_file_errors(tmp_path):
    with pytest.raises(StorageError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[1]")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text(json.dumps({"system": 3}))
    with pytest.raises(ConfigError):
        load_config(bad)


@settings(max_examples=30, deadline=None)
@given(nt=st.integers(1, 8), extra=st.integers(0, 8), layers=st.integers(1, 6), lr=st.floats(1e-6, 1e-1))
def test_to_dict_round_trip(tmp_path_factory, nt, extra, layers, lr):
    cfg = RunConfig()
    cfg.system.nt, cfg.system.pilots, cfg.network.layers, cfg.training.learning_rate = nt, nt + extra, layers, lr
    p = tmp_path_factory.mktemp("cfg") / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p).to_dict() == cfg.to_dict()
