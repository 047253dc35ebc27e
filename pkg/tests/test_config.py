"""Config schema: parsing, validation diagnostics, and object builders."""

import math
from fractions import Fraction

import pytest

from stratwalk.config import (
    ExperimentConfig,
    build_cf,
    build_environment,
    build_function,
    bundled_config_names,
    bundled_config_path,
    load_config,
    sample_base_points,
)
from stratwalk.diophantine import family_cf
from stratwalk.environment import GeneralQP, PeriodicEnvironment, VerticallyFlatQP
from stratwalk.errors import ConfigError
from stratwalk.functions import CoboundaryObservable, cosine, indicator_pm


def _minimal(**extra):
    base = {
        "name": "t",
        "environment": {"kind": "cp_ramp"},
    }
    base.update(extra)
    return base


def _flat(**extra):
    base = {
        "name": "t",
        "angle": {"family": "constant", "k": 1},
        "functions": {"f": {"kind": "zero"}},
        "environment": {"kind": "vertically_flat", "gamma0": "1/3"},
        "base_point": {"x": 0.25},
    }
    base.update(extra)
    return base


class TestBundled:
    def test_names(self):
        names = bundled_config_names()
        for expected in ("campanino_periodic", "flat_zero", "cp_ramp",
                         "thm1_lipschitz", "prop1_transient",
                         "thm2_integral_nonzero", "thm2_coboundary_symmetric",
                         "propi_transient"):
            assert expected in names

    def test_all_parse_and_round_trip(self):
        for name in bundled_config_names():
            cfg = load_config(name)
            d = cfg.as_dict()
            assert ExperimentConfig.from_dict(d).as_dict() == d, name

    def test_bare_name_equals_path(self):
        a = load_config("cp_ramp")
        b = load_config(bundled_config_path("cp_ramp"))
        assert a == b

    def test_unknown_bundled_name(self):
        with pytest.raises(ConfigError, match="no bundled config"):
            load_config("no_such_config")

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/tmp/definitely/not/here.toml")

    def test_invalid_toml(self, tmp_path):
        p = tmp_path / "broken.toml"
        p.write_text("name = [unclosed\n")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_config(p)


class TestValidationDiagnostics:
    """Every rejection names the offending field."""

    def test_missing_name(self):
        with pytest.raises(ConfigError, match="name"):
            ExperimentConfig.from_dict({"environment": {"kind": "cp_ramp"}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="config: unknown key.*extra"):
            ExperimentConfig.from_dict(_minimal(extra=1))

    def test_bad_environment_kind(self):
        with pytest.raises(ConfigError, match="environment.kind"):
            ExperimentConfig.from_dict(_minimal(environment={"kind": "nope"}))

    def test_gamma0_range(self):
        cfg = _flat()
        cfg["environment"]["gamma0"] = "7/5"
        with pytest.raises(ConfigError, match="environment.gamma0"):
            ExperimentConfig.from_dict(cfg)

    def test_periodic_needs_strata(self):
        with pytest.raises(ConfigError, match="environment.strata"):
            ExperimentConfig.from_dict(_minimal(environment={"kind": "periodic"}))

    def test_stratum_missing_key(self):
        env = {"kind": "periodic",
               "strata": [{"alpha": "1/3", "beta": "1/3", "mu": {"1": 1}}]}
        with pytest.raises(ConfigError, match=r"strata\[0\].gamma"):
            ExperimentConfig.from_dict(_minimal(environment=env))

    def test_mu_key_must_be_integer(self):
        env = {"kind": "periodic",
               "strata": [{"alpha": "1/3", "beta": "1/3", "gamma": "1/3",
                           "mu": {"right": 1}}]}
        with pytest.raises(ConfigError, match="jump key 'right'"):
            ExperimentConfig.from_dict(_minimal(environment=env))

    def test_base_point_exclusive(self):
        cfg = _flat(base_point={"x": 0.5, "count": 4})
        with pytest.raises(ConfigError, match="not both"):
            ExperimentConfig.from_dict(cfg)

    def test_base_point_range(self):
        cfg = _flat(base_point={"x": 1.5})
        with pytest.raises(ConfigError, match="base_point.x"):
            ExperimentConfig.from_dict(cfg)

    def test_base_point_required_for_orbit_kinds(self):
        cfg = _flat()
        del cfg["base_point"]
        with pytest.raises(ConfigError, match="base_point"):
            ExperimentConfig.from_dict(cfg)

    def test_angle_required_for_orbit_kinds(self):
        cfg = _flat()
        del cfg["angle"]
        with pytest.raises(ConfigError, match="angle"):
            ExperimentConfig.from_dict(cfg)

    def test_thresholds_order(self):
        cfg = _minimal(thresholds={"lo": 1.2, "hi": 0.9})
        with pytest.raises(ConfigError, match="thresholds"):
            ExperimentConfig.from_dict(cfg)

    def test_budget_nonnegative(self):
        cfg = _minimal(budgets={"mc_horizon": -1})
        with pytest.raises(ConfigError, match="budgets.mc_horizon"):
            ExperimentConfig.from_dict(cfg)

    def test_grid_ratio_band(self):
        with pytest.raises(ConfigError, match="grid_ratio"):
            ExperimentConfig.from_dict(_minimal(grid_ratio=1.0))

    def test_measure_needs_orbit_kind(self):
        cfg = _minimal(measure={"orbit_points": 100})
        with pytest.raises(ConfigError, match="measure"):
            ExperimentConfig.from_dict(cfg)

    def test_g_rejected_off_general(self):
        cfg = _flat()
        cfg["functions"]["g"] = {"kind": "zero"}
        with pytest.raises(ConfigError, match="functions.g"):
            ExperimentConfig.from_dict(cfg)

    def test_g_required_for_general(self):
        cfg = _flat()
        cfg["environment"] = {"kind": "general", "gamma0": "1/3"}
        with pytest.raises(ConfigError, match="functions.g"):
            ExperimentConfig.from_dict(cfg)

    def test_coboundary_needs_u(self):
        cfg = _flat()
        cfg["functions"]["f"] = {"kind": "coboundary"}
        with pytest.raises(ConfigError, match=r"functions.f.u"):
            ExperimentConfig.from_dict(cfg)

    def test_unknown_function_kind(self):
        cfg = _flat()
        cfg["functions"]["f"] = {"kind": "wavelet"}
        with pytest.raises(ConfigError, match="functions.f.kind"):
            ExperimentConfig.from_dict(cfg)

    def test_unknown_function_key(self):
        cfg = _flat()
        cfg["functions"]["f"] = {"kind": "zero", "amplitude": 2}
        with pytest.raises(ConfigError, match="unknown key.*amplitude"):
            ExperimentConfig.from_dict(cfg)

    def test_quotients_family_list(self):
        cfg = _flat()
        cfg["angle"] = {"family": "quotients", "quotients": [1, 0, 2]}
        with pytest.raises(ConfigError, match="angle.quotients"):
            ExperimentConfig.from_dict(cfg)

    def test_rational_parse_failure(self):
        cfg = _flat()
        cfg["environment"]["gamma0"] = "one third"
        with pytest.raises(ConfigError, match="cannot parse"):
            ExperimentConfig.from_dict(cfg)


class TestNumberCodec:
    def test_rational_strings_stay_exact(self):
        cfg = ExperimentConfig.from_dict(_flat())
        assert cfg.environment["gamma0"] == Fraction(1, 3)
        assert cfg.as_dict()["environment"]["gamma0"] == "1/3"

    def test_integers_become_unit_fractions(self):
        env = {"kind": "periodic",
               "strata": [{"alpha": "1/4", "beta": "1/4", "gamma": "1/2",
                           "mu": {"2": 1}}]}
        cfg = ExperimentConfig.from_dict(_minimal(environment=env))
        st = cfg.environment["strata"][0]
        assert st["mu"][2] == Fraction(1)
        assert cfg.as_dict()["environment"]["strata"][0]["mu"]["2"] == 1

    def test_floats_pass_through(self):
        cfg = _flat()
        cfg["environment"]["gamma0"] = 0.25
        out = ExperimentConfig.from_dict(cfg)
        assert out.environment["gamma0"] == 0.25
        assert out.as_dict()["environment"]["gamma0"] == 0.25


class TestSampling:
    def test_stratified_and_deterministic(self):
        pts = sample_base_points(16, 7)
        assert pts == sample_base_points(16, 7)
        assert pts != sample_base_points(16, 8)
        for i, x in enumerate(pts):
            assert i / 16 <= x < (i + 1) / 16

    def test_config_base_points(self):
        single = ExperimentConfig.from_dict(_flat())
        assert single.base_points() == [0.25]
        cfg = _flat(base_point={"count": 5, "seed": 3})
        assert ExperimentConfig.from_dict(cfg).base_points() == sample_base_points(5, 3)


class TestBuilders:
    def test_build_cf_families(self):
        cf = build_cf({"family": "constant", "k": 1})
        gold = family_cf("constant", k=1)
        assert cf.q[:10] == gold.q[:10]
        explicit = build_cf({"family": "quotients", "quotients": [1] * 40})
        assert explicit.q[:10] == gold.q[:10]

    def test_build_function_kinds(self):
        cf = family_cf("constant", k=1)
        assert build_function({"kind": "zero"})(0.3) == 0.0
        assert build_function({"kind": "constant", "c": Fraction(3, 10)})(0.9) == 0.3
        cos_spec = build_function({"kind": "cosine", "amplitude": 0.8, "mode": 2})
        assert cos_spec(0.21) == pytest.approx(cosine(0.8, 2)(0.21), abs=1e-15)
        trig = build_function(
            {"kind": "trig", "a0": 0.1, "cos": [0.5], "sin": [0.0, 0.25]})
        x = 0.37
        want = 0.1 + 0.5 * math.cos(2 * math.pi * x) \
            + 0.25 * math.sin(4 * math.pi * x)
        assert trig(x) == pytest.approx(want, abs=1e-14)
        # shift(x0) precomposes with the rotation by x0: new(x) = old(x + x0)
        ind = build_function({"kind": "indicator_pm", "shift": Fraction(1, 8)})
        assert ind(0.30) == indicator_pm()(0.425)
        assert ind(0.40) == indicator_pm()(0.525)
        assert ind(0.30) == 1.0 and ind(0.40) == -1.0
        cob = build_function(
            {"kind": "coboundary",
             "u": {"kind": "trig", "cos": [0.4], "sin": [0.2]},
             "weight": {"kind": "zero"}}, cf)
        assert isinstance(cob, CoboundaryObservable)
        assert abs(cob.mean()) < 1e-6

    def test_build_function_shift_applies_last(self):
        saw = build_function({"kind": "sawtooth", "shift": Fraction(1, 4)})
        plain = build_function({"kind": "sawtooth"})
        assert saw(0.30) == pytest.approx(plain(0.55), abs=1e-15)

    def test_build_environment_periodic_exact(self):
        env = build_environment(ExperimentConfig.from_dict(_minimal(environment={
            "kind": "periodic",
            "strata": [{"alpha": "1/3", "beta": "1/3", "gamma": "1/3",
                        "mu": {"1": "1/2", "-1": "1/2"}}],
        })))
        assert isinstance(env, PeriodicEnvironment)
        assert env.exact_drift_total() == 0

    def test_build_environment_orbit_kinds(self):
        cfg = ExperimentConfig.from_dict(_flat())
        env = build_environment(cfg, x=0.4)
        assert isinstance(env, VerticallyFlatQP)
        assert env.x == 0.4 and env.gamma0 == pytest.approx(1 / 3)

        gen = _flat()
        gen["environment"] = {"kind": "general", "gamma0": "1/3"}
        gen["functions"]["g"] = {"kind": "constant", "c": "1/5"}
        env2 = build_environment(ExperimentConfig.from_dict(gen))
        assert isinstance(env2, GeneralQP)

    def test_prebuilt_functions_are_reused(self):
        cfg = ExperimentConfig.from_dict(_flat())
        marker = indicator_pm()
        env = build_environment(cfg, x=0.1, f=marker)
        assert env.f is marker
