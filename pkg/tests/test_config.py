import pytest
import yaml

from sphtraffic.config import (ConfigValidationError, config_hash, parse_config, parse_text,
                               serialize)
from sphtraffic.scenarios import BUILTINS, builtin


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_round_trip(name):
    cfg = builtin(name, seed=17)
    again = parse_text(serialize(cfg))
    assert again == cfg
    assert serialize(again) == serialize(cfg)
    assert config_hash(again) == config_hash(cfg)


def test_exported_file_parses(tmp_path):
    p = tmp_path / "two_route.yaml"
    p.write_text(serialize(builtin("two_route")), encoding="utf-8")
    assert parse_config(p) == builtin("two_route")


def _edit(name, fn):
    data = yaml.safe_load(serialize(builtin(name)))
    fn(data)
    return yaml.safe_dump(data, sort_keys=False)


def test_gamma_outside_band_is_rejected():
    text = _edit("two_route", lambda d: d["physics"].__setitem__("gamma", 0.5))
    with pytest.raises(ConfigValidationError, match=r"\[0\.6, 0\.9\]") as exc:
        parse_text(text)
    assert "gamma" in str(exc.value)


def test_dt_above_stability_bound_is_rejected():
    text = _edit("two_route", lambda d: d.__setitem__("dt", 0.5))
    with pytest.raises(ConfigValidationError, match=r"dt.*0\.1\*h/v_max"):
        parse_text(text)


def test_unknown_key_reports_its_line():
    text = serialize(builtin("two_route"))
    lines = text.splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("physics:"))
    lines.insert(k + 1, "  viscosty: 3.0")
    with pytest.raises(ConfigValidationError) as exc:
        parse_text("\n".join(lines) + "\n")
    assert exc.value.line == k + 2
    assert "viscosty" in str(exc.value)


def test_unknown_top_level_key():
    with pytest.raises(ConfigValidationError, match="colour"):
        parse_text(serialize(builtin("two_route")) + "colour: red\n")


def test_bad_shares_and_types():
    def bad_mix(d):
        d["demand"][0]["class_mix"] = {"car": 0.5}
    with pytest.raises(ConfigValidationError, match="sum to 1"):
        parse_text(_edit("two_route", bad_mix))
    with pytest.raises(ConfigValidationError, match="seed"):
        parse_text(_edit("two_route", lambda d: d.__setitem__("seed", -1)))
    with pytest.raises(ConfigValidationError):
        parse_text(_edit("two_route", lambda d: d.__setitem__("duration", "long")))


def test_malformed_and_empty_documents():
    with pytest.raises(ConfigValidationError, match="malformed"):
        parse_text("name: [unclosed\n")
    with pytest.raises(ConfigValidationError, match="empty"):
        parse_text("")
