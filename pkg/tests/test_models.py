import json

import numpy as np
import pytest

from kolmolab.errors import ConfigError, InvalidInputError
from kolmolab.models import BUILTIN_MODELS, builtin_model, config_from_dict, load_model, parse_model_config


def raw(**over):
    base = {"name": "k", "N": 2, "A": [1, 0, 0, 0], "B": [0, 0, 1, 0]}
    base.update(over)
    return base


def test_builtins_load_and_declare_structure():
    for name in BUILTIN_MODELS:
        cfg = builtin_model(name)
        spec = cfg.spec()
        assert spec.N == cfg.N
        cfg.structure().validate_against(spec.B)


def test_unknown_builtin():
    with pytest.raises(InvalidInputError):
        builtin_model("nope")


@pytest.mark.parametrize("bad, key", [
    (raw(A=[1, 2, 0, 1]), "A"),
    (raw(A=[-1, 0, 0, 0]), "A"),
    (raw(A=[1, 0, 0]), "A"),
    (raw(B=[0, 0, float("nan"), 0]), "B[2]"),
    (raw(N=0), "N"),
    (raw(N=True), "N"),
    (raw(extra=1), "extra"),
    (raw(jordan={"nilpotent": [1, 1]}), "jordan"),
    (raw(jordan={"rotations": [[1, 0]]}), "jordan.rotations[0]"),
    (raw(defaults={"p": 3.5}), "defaults.p"),
    (raw(defaults={"colour": 1}), "defaults.colour"),
])
def test_config_errors_name_the_key(bad, key):
    with pytest.raises(ConfigError) as info:
        config_from_dict(bad)
    assert info.value.path == key


def test_missing_key():
    r = raw()
    del r["B"]
    with pytest.raises(ConfigError) as info:
        config_from_dict(r)
    assert info.value.path == "B"


def test_parse_and_load_file(tmp_path):
    cfg = raw(jordan={"nilpotent": [2], "rotations": []}, defaults={"p": 7, "t_max": 1e4})
    path = tmp_path / "kol.json"
    path.write_text(json.dumps(cfg))
    loaded = load_model(str(path))
    assert loaded.defaults == {"p": 7, "t_max": 1e4}
    np.testing.assert_array_equal(loaded.spec().B, [[0, 0], [1, 0]])
    assert loaded.structure().nilpotent_sizes == (2,)
    with pytest.raises(ConfigError):
        parse_model_config("{not json")
    with pytest.raises(InvalidInputError):
        load_model(str(tmp_path / "missing.json"))
