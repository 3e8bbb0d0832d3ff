# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

import pytest

from growthsim.experiment import KEYS, SpecError, describe_keys, parse_spec
from growthsim.process import InfectionType
from growthsim.stochastics import RadiusFamily

MINIMAL = """
# one-type growth in the plane
d = 2
lambda = 1
radius.family = deterministic
radius.value = 1
horizon = 10
seed = 7
"""

TWO_TYPE = """
d = 2
mode = two-type
lambda_1 = 1
lambda_2 = 0.5
radius.family = exponential
radius.rate = 2
horizon = 8
replicas = 20
"""


def _errors(text, kind="simulate"):
    with pytest.raises(SpecError) as e:
        parse_spec(text, kind)
    return e.value.errors


class TestParseSpec:
    def test_minimal(self):
        spec = parse_spec(MINIMAL, "simulate")
        assert spec.kind == "simulate"
        assert spec.seed == 7
        assert spec["d"] == 2
        assert spec["lambda"] == 1.0
        assert spec.replicas == 1
        assert not spec.two_type

        cfg = spec.process_config()
        assert cfg.rates == {InfectionType.SINGLE: 1.0}
        assert cfg.F.family is RadiusFamily.DETERMINISTIC
        assert cfg.horizon_time == 10

    def test_kind_from_file(self):
        assert parse_spec("kind = brw-speed\n" + MINIMAL).kind == "brw-speed"

    def test_kind_disagreement(self):
        errors = _errors("kind = coexist\n" + MINIMAL, "simulate")
        assert any("disagrees" in e for e in errors)

    def test_two_type(self):
        spec = parse_spec(TWO_TYPE, "coexist")
        cfg = spec.process_config()
        assert cfg.rates == {InfectionType.TYPE_1: 1.0, InfectionType.TYPE_2: 0.5}
        assert cfg.F.mean_gamma == 0.5
        assert spec.coexist_window == 2.0

    def test_two_type_default_lambda_2(self):
        spec = parse_spec(TWO_TYPE.replace("lambda_2 = 0.5", ""), "coexist")
        assert spec.process_config().lambda_2 == 1.0

    def test_pareto_needs_override(self):
        text = MINIMAL.replace(
            "radius.family = deterministic\nradius.value = 1",
            "radius.family = pareto\nradius.scale = 1\nradius.shape = 3",
        )
        errors = _errors(text)
        assert any("exponential moment condition" in e for e in errors)

        spec = parse_spec(text + "allow_inadmissible = true\n", "simulate")
        assert spec.process_config().F.family is RadiusFamily.PARETO

    def test_duplicate_key(self):
        errors = _errors(MINIMAL + "seed = 8\n")
        assert any("duplicate key 'seed'" in e and "8, 9" in e for e in errors)

    def test_alias_duplicate(self):
        errors = _errors(MINIMAL + "lambda_1 = 2\n")
        assert any("duplicate key 'lambda_1'" in e for e in errors)

    def test_all_errors_reported(self):
        text = MINIMAL + "colour = blue\nreplicas = many\nnot a key value line\n"
        errors = _errors(text)
        assert len(errors) == 3
        assert any("unknown key 'colour'" in e for e in errors)
        assert any("replicas" in e for e in errors)
        assert any("expected 'key = value'" in e for e in errors)

    def test_missing_required(self):
        errors = _errors("d = 2\n")
        assert "missing required key 'radius.family'" in errors
        assert "missing required key 'horizon'" in errors
        assert "missing required key 'd'" not in errors

    def test_missing_radius_parameter(self):
        errors = _errors(MINIMAL.replace("radius.value = 1", "radius.rate = 1"))
        assert any("needs radius.value" in e for e in errors)
        assert any("radius.rate does not apply" in e for e in errors)

    def test_both_rates_zero(self):
        text = TWO_TYPE.replace("lambda_1 = 1", "lambda_1 = 0").replace(
            "lambda_2 = 0.5", "lambda_2 = 0"
        )
        assert _errors(text, "coexist")

    @pytest.mark.parametrize(
        "kind, extra",
        [
            ("estimate-mu", "mode = two-type\n"),
            ("coexist", ""),
            ("effective-count", ""),
            ("shape-check", ""),
            ("couple-check", "couple.lambdas = 0.5, 0.25\n"),
            ("couple-check", "couple.lambda = 1.5\n"),
            ("couple-check", "stripe.b = 2\n"),
            ("estimate-mu", "stripe.b = 2\nestimate.stripes = 2, 5\n"),
            ("shape-check", "shape.time = 4\nestimate.stripes = 2, 5\n"),
        ],
    )
    def test_kind_constraints(self, kind, extra):
        assert _errors(MINIMAL + extra, kind)

    def test_one_type_rejects_type_2_keys(self):
        errors = _errors(MINIMAL + "lambda_2 = 1\n")
        assert any("lambda_2 only applies" in e for e in errors)

    def test_initial_sets(self):
        text = TWO_TYPE + "initial.1 = -3,0:1\ninitial.2 = 0,0:1; 0,2:0.5\n"
        cfg = parse_spec(text, "coexist").process_config()
        assert len(cfg.initial_2) == 2
        assert cfg.initial_1[0].radius == 1

    def test_initial_wrong_dimension(self):
        errors = _errors(TWO_TYPE + "initial.1 = -3,0,0:1\n", "coexist")
        assert any("not 2-dimensional" in e for e in errors)

    def test_overlapping_initial_sets(self):
        errors = _errors(TWO_TYPE + "initial.1 = 0.5,0:1\n", "coexist")
        assert any("overlap" in e for e in errors)

    def test_coupling_config(self):
        spec = parse_spec(MINIMAL + "couple.lambda = 0.3\n", "couple-check")
        cfg = spec.coupling_config()
        assert cfg.two_type
        assert (cfg.lambda_1, cfg.lambda_2) == (1.0, 0.3)

    def test_region_defaults(self):
        region = parse_spec(TWO_TYPE, "effective-count").region()
        assert region.radius == 0.5
        assert region.center.tolist() == [0.0, 0.0]


class TestCanonicalForm:
    def test_round_trip(self):
        text = TWO_TYPE + "initial.1 = -3,0:1\nestimate.n = 5, 10\n"
        spec = parse_spec(text, "coexist")
        assert parse_spec(spec.render(), "coexist") == spec

    def test_defaults_do_not_change_hash(self):
        a = parse_spec(MINIMAL, "simulate")
        b = parse_spec(MINIMAL + "mode = one-type\nmax_events = 1000000\n", "simulate")
        assert a == b
        assert a.config_hash == b.config_hash

    def test_output_dir_not_hashed(self):
        a = parse_spec(MINIMAL, "simulate")
        b = parse_spec(MINIMAL + "output.dir = elsewhere\n", "simulate")
        assert a != b
        assert a.config_hash == b.config_hash

    def test_seed_changes_hash(self):
        a = parse_spec(MINIMAL, "simulate")
        assert a.with_values({"seed": 8}).config_hash != a.config_hash

    def test_with_values(self):
        spec = parse_spec(MINIMAL, "simulate")
        spec = spec.with_values({"seed": 3, "output.dir": "x"})
        assert spec.seed == 3
        assert spec["output.dir"] == "x"
        assert spec["d"] == 2

    def test_with_values_validates(self):
        with pytest.raises(SpecError):
            parse_spec(MINIMAL, "simulate").with_values({"lambda_2": 1.0})

    def test_hash_shape(self):
        digest = parse_spec(MINIMAL, "simulate").config_hash
        assert len(digest) == 16
        int(digest, 16)


def test_describe_keys():
    text = describe_keys()
    for key in KEYS:
        assert f"  {key}" in text
