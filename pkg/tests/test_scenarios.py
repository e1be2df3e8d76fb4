import pytest

from smartlab.errors import ConfigError
from smartlab.scenarios import BUILTIN, design_from_flat, scenario_from_flat, scenario_to_flat


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_builtin_round_trip(name):
    sc = BUILTIN[name]
    assert scenario_from_flat(scenario_to_flat(sc)) == sc
    assert scenario_from_flat({"builtin": name}) == sc


def test_override_and_errors():
    sc = scenario_from_flat({"builtin": "table1-s2", "seq_mean.a11_a21.c2": 30.0})
    assert sc.seq_mean("c2", 1, 1) == 30.0
    with pytest.raises(ConfigError, match="response_rate.a13.c2"):
        flat = scenario_to_flat(BUILTIN["table1-s2"])
        flat.pop("response_rate.a13.c2")
        scenario_from_flat(flat)
    with pytest.raises(ConfigError, match="unknown field"):
        scenario_from_flat({"builtin": "table1-s2", "color": "red"})
    with pytest.raises(ConfigError, match="must be a number"):
        scenario_from_flat({"builtin": "table1-s2", "seq_mean.a11_a21.c2": "high"})
    with pytest.raises(ConfigError, match="design.n"):
        design_from_flat({"r": 0.5})
    with pytest.raises(ConfigError, match="design.speed"):
        design_from_flat({"n": 10, "r": 0.5, "speed": 1})
