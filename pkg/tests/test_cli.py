"""Command-line behavior: exit codes, summary lines, and config
resolution order."""

import json
from pathlib import Path

import pytest

from unidim import cli, pipeline
from unidim.artifacts import load_json
from unidim.errors import NumericalError
from unidim.fixtures import write_fixture_workspace

TINY = dict(
    n_models=2,
    n_categories=4,
    images_per_category=2,
    rank=2,
    seeds=2,
    permutations=5,
    n_triplets=8,
)
TINY_FLAGS = [
    "--models", "2",
    "--categories", "4",
    "--images-per-category", "2",
    "--rank", "2",
    "--fit-seeds", "2",
    "--permutations", "5",
    "--triplets", "8",
]


@pytest.fixture(scope="module")
def cli_ws(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("cli") / "ws"
    write_fixture_workspace(
        root,
        n_models=3,
        n_categories=8,
        images_per_category=3,
        rank=2,
        seeds=2,
        permutations=10,
        n_triplets=12,
        rng_seed=99,
    )
    return root


def test_fixtures_subcommand_writes_workspace(tmp_path, capsys):
    root = tmp_path / "ws"
    code = cli.main(["fixtures", "--workspace", str(root)] + TINY_FLAGS)
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("fixtures written: config=")
    assert (root / "config.json").exists()
    assert (root / "inputs" / "manifest.json").exists()
    assert (root / "inputs" / "features" / "model_00.npy").exists()


def test_fixtures_uses_env_workspace(tmp_path, monkeypatch, capsys):
    root = tmp_path / "envws"
    monkeypatch.setenv(pipeline.WORKSPACE_ENV, str(root))
    assert cli.main(["fixtures"] + TINY_FLAGS) == 0
    capsys.readouterr()
    assert (root / "config.json").exists()


def test_fixtures_needs_workspace(monkeypatch, capsys):
    monkeypatch.delenv(pipeline.WORKSPACE_ENV, raising=False)
    assert cli.main(["fixtures"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "--workspace" in err


def test_stage_summary_reports_run_skip_force(cli_ws, capsys):
    assert cli.main(["kernel", "--workspace", str(cli_ws)]) == 0
    line = capsys.readouterr().out.strip()
    assert line == "stage=kernel models=3 computed=3 skipped=0"

    assert cli.main(["kernel", "--workspace", str(cli_ws)]) == 0
    line = capsys.readouterr().out.strip()
    assert line == "stage=kernel models=3 computed=0 skipped=3"

    assert cli.main(["kernel", "--workspace", str(cli_ws), "--force"]) == 0
    line = capsys.readouterr().out.strip()
    assert line == "stage=kernel models=3 computed=3 skipped=0"


def test_stage_resolves_workspace_from_env(cli_ws, monkeypatch, capsys):
    monkeypatch.setenv(pipeline.WORKSPACE_ENV, str(cli_ws))
    assert cli.main(["kernel"]) == 0
    assert "stage=kernel" in capsys.readouterr().out


def test_missing_dependency_maps_to_exit_2(tmp_path, capsys):
    root = tmp_path / "ws"
    write_fixture_workspace(root, rng_seed=5, **TINY)
    assert cli.main(["factorize", "--workspace", str(root)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "kernel stage" in err


def test_numerical_error_maps_to_exit_3(cli_ws, monkeypatch, capsys):
    def boom(ctx):
        raise NumericalError("synthetic instability")

    monkeypatch.setitem(pipeline.STAGE_RUNNERS, "kernel", boom)
    assert cli.main(["kernel", "--workspace", str(cli_ws)]) == 3
    assert "numerical error: synthetic instability" in capsys.readouterr().err


def test_config_flag_beats_workspace_default(cli_ws, tmp_path, capsys):
    alt = tmp_path / "alt_config.json"
    payload = load_json(cli_ws / "config.json")
    payload["run"]["rng_seed"] = 4242
    alt.write_text(json.dumps(payload), encoding="utf-8")
    code = cli.main(
        ["kernel", "--config", str(alt), "--workspace", str(cli_ws)]
    )
    assert code == 0
    capsys.readouterr()
    assert load_json(cli_ws / "config.effective.json")["run"]["rng_seed"] == 4242


def test_seed_flag_overrides_config(cli_ws, capsys):
    assert cli.main(["kernel", "--workspace", str(cli_ws), "--seed", "31"]) == 0
    capsys.readouterr()
    assert load_json(cli_ws / "config.effective.json")["run"]["rng_seed"] == 31


def test_missing_config_reports_error(tmp_path, capsys):
    assert cli.main(["kernel", "--workspace", str(tmp_path)]) == 2
    assert "config file not found" in capsys.readouterr().err


def test_jobs_must_be_positive(cli_ws, capsys):
    assert cli.main(["kernel", "--workspace", str(cli_ws), "--jobs", "0"]) == 2
    assert "--jobs" in capsys.readouterr().err


def test_no_subcommand_is_a_usage_error(capsys):
    with pytest.raises(SystemExit):
        cli.main([])
