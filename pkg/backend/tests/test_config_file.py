"""
Tests for key = value experiment configuration files.
"""
import pytest

from app.core.exceptions import ConfigFileError
from app.models.experiment import ExperimentName, InstabilityVariant, MoGMethod
from app.models.run_config import AdversarialLossKind, ConditioningKind
from app.services.config_file import (
    allowed_keys,
    load_experiment_config,
    parse_config_text,
    parse_overrides,
    render_resolved_config,
    resolve_config,
)


def _write(tmp_path, text):
    path = tmp_path / "experiment.cfg"
    path.write_text(text)
    return path


class TestParsing:
    def test_comments_blank_lines_and_overrides(self):
        entries = parse_config_text("# header\n\nseed = 3  # inline\ntau=0.25\nseed = 4\n")
        assert entries["seed"].value == "4"
        assert entries["seed"].line == 5
        assert entries["tau"].value == "0.25"

    def test_line_without_assignment(self):
        with pytest.raises(ConfigFileError) as exc:
            parse_config_text("seed = 1\njust words\n")
        assert exc.value.line == 2
        assert str(exc.value).startswith("line 2: ")

    def test_override_without_assignment(self):
        with pytest.raises(ConfigFileError, match="override 'seed'"):
            parse_overrides(["seed"])

    def test_override_values_may_contain_equals(self):
        assert parse_overrides(["means=1,2"])["means"].value == "1,2"
        assert parse_overrides(["a = b = c"])["a"].value == "b = c"


class TestResolve:
    def test_mog_method_sets_conditioning(self):
        config = resolve_config(ExperimentName.MOG, parse_overrides(["method=reacgan_tac", "seed=1"]))
        assert config.options.method is MoGMethod.REACGAN_TAC
        assert config.run.cond_loss is ConditioningKind.D2DCE
        assert config.run.tac_enabled is True
        assert config.run.seed == 1

    def test_missing_required_key(self):
        with pytest.raises(ConfigFileError, match="missing required key 'method'") as exc:
            resolve_config(ExperimentName.MOG, {})
        assert exc.value.key == "method"

    def test_unknown_key_names_line(self, tmp_path):
        path = _write(tmp_path, "method = acgan\nlearning_rate = 0.1\n")
        with pytest.raises(ConfigFileError) as exc:
            load_experiment_config(ExperimentName.MOG, path)
        assert exc.value.line == 2
        assert exc.value.key == "learning_rate"

    def test_mixture_keys_are_unknown_for_instability(self):
        assert "means" not in allowed_keys(ExperimentName.INSTABILITY)
        with pytest.raises(ConfigFileError, match="unknown key 'means'"):
            resolve_config(ExperimentName.INSTABILITY, parse_overrides(["means=0,1"]))

    def test_invalid_value_names_key_and_line(self, tmp_path):
        path = _write(tmp_path, "method = acgan\n\nbatch_size = lots\n")
        with pytest.raises(ConfigFileError) as exc:
            load_experiment_config(ExperimentName.MOG, path)
        assert exc.value.key == "batch_size"
        assert exc.value.line == 3

    def test_lambda_is_spelled_without_underscore(self):
        config = resolve_config(ExperimentName.ABLATION, parse_overrides(["lambda=0.3"]))
        assert config.run.lam == 0.3
        with pytest.raises(ConfigFileError, match="unknown key"):
            resolve_config(ExperimentName.ABLATION, parse_overrides(["lambda_=0.3"]))

    def test_defaults_resolve(self):
        config = resolve_config(ExperimentName.INSTABILITY, {})
        assert config.options.variants == [InstabilityVariant.ACGAN, InstabilityVariant.NORMALIZED]
        assert config.run.m_n == pytest.approx(1.0 - config.run.m_p)
        assert config.run.lam == config.run.tau
        assert config.run.adv_loss is AdversarialLossKind.HINGE

    def test_overrides_beat_file(self, tmp_path):
        path = _write(tmp_path, "method = acgan\nseed = 2\n")
        config = load_experiment_config(ExperimentName.MOG, path, ["seed=9"])
        assert config.run.seed == 9

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigFileError, match="not found"):
            load_experiment_config(ExperimentName.MOG, tmp_path / "absent.cfg")

    def test_mixture_validation_error(self):
        with pytest.raises(ConfigFileError):
            resolve_config(ExperimentName.ABLATION, parse_overrides(["weights=0.5,0.6", "means=0,1", "stds=1,1"]))


class TestRender:
    @pytest.mark.parametrize("experiment,overrides", [
        (ExperimentName.MOG, ["method=two_c", "seed=3", "tau=0.1", "means=-0.5,0.5", "stds=0.7,0.7",
                              "weights=0.25,0.75", "ema_enabled=false"]),
        (ExperimentName.INSTABILITY, ["variants=acgan,acgan_grad_clip,d2dce", "num_classes=10", "m_p=0.9"]),
        (ExperimentName.ABLATION, ["p_values=1,0.5,0", "lambda=0.7", "adv_loss=non_saturation"]),
    ])
    def test_round_trip(self, tmp_path, experiment, overrides):
        config = load_experiment_config(experiment, overrides=overrides)
        text = render_resolved_config(config)
        again = load_experiment_config(experiment, _write(tmp_path, text))
        assert again == config
        assert render_resolved_config(again) == text

    def test_format(self):
        text = render_resolved_config(load_experiment_config(ExperimentName.MOG, overrides=["method=acgan"]))
        lines = text.splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "method = acgan"
        assert "ema_enabled = true" in lines
        assert "lambda = 0.5" in lines
        assert "means = -1.0, 0.0, 1.0" in lines
        assert "cond_loss = acgan" in lines
