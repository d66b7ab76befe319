"""
Command-line tests for d2dce-lab.
Run with: pytest
"""
import dataclasses

import pytest

from app import __version__
from app.main import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from app.services import experiments, gradient_oracles, verification

TINY = [
    "batch_size=8", "n_dis=1", "total_iters=4", "log_interval=2", "hidden_dim=8", "hidden_layers=1",
    "embed_dim=4", "z_dim=2", "label_embed_dim=2", "eval_samples=50",
]


@pytest.fixture(autouse=True)
def small_curves(monkeypatch):
    monkeypatch.setattr(experiments, "CURVE_SAMPLES", 100)


def test_version(capsys):
    assert main(["version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_usage_error():
    assert main(["run", "nonsense"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_run_mog_writes_outputs(tmp_path):
    out = tmp_path / "run"
    code = main(["run", "mog", "--override", "method=reacgan_tac", "seed=1", "--override", *TINY,
                 "--out", str(out)])
    assert code == EXIT_OK
    for name in ("report.csv", "curves.csv", "resolved_config.txt", "summary.txt"):
        assert (out / name).exists()
    resolved = (out / "resolved_config.txt").read_text().splitlines()
    assert "method = reacgan_tac" in resolved
    assert "seed = 1" in resolved


def test_resolved_config_reproduces_run(tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert main(["run", "mog", "--override", "method=acgan", *TINY, "--out", str(first)]) == EXIT_OK
    assert main(["run", "mog", "--config", str(first / "resolved_config.txt"), "--out", str(second)]) == EXIT_OK
    for name in ("report.csv", "curves.csv", "resolved_config.txt"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_missing_key_exits_with_usage_error(tmp_path, capsys):
    assert main(["run", "mog", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "method" in capsys.readouterr().err


def test_config_parse_error_cites_line(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("method = acgan\nseed: 3\n")
    assert main(["run", "mog", "--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err


def test_checkpoints_follow_config(tmp_path):
    out = tmp_path / "ckpt"
    code = main(["run", "ablation", "--override", "p_values=0", "save_checkpoint=true", *TINY, "--out", str(out)])
    assert code == EXIT_OK
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
        "p_0_seed0_discriminator.ckpt", "p_0_seed0_generator.ckpt", "p_0_seed0_generator_ema.ckpt",
    ]


def test_verify_exit_status(monkeypatch, capsys):
    monkeypatch.setattr(verification, "GRADIENT_INSTANCES", 5)
    assert main(["verify", "gradients"]) == EXIT_OK
    assert "PASS gradients.acgan_weight.autodiff" in capsys.readouterr().out

    original = gradient_oracles.d2dce_analytic_grads

    def mutated(bundle, params, batch=None):
        grads = original(bundle, params, batch)
        return dataclasses.replace(grads, d_pos=-grads.d_pos)

    monkeypatch.setattr(gradient_oracles, "d2dce_analytic_grads", mutated)
    assert main(["verify", "gradients"]) == EXIT_FAILED
    assert "FAIL gradients.d2dce_positive_similarity.autodiff" in capsys.readouterr().out
