import json
from argparse import Namespace

import pytest
from pydantic import ValidationError

from src.app.cli import service as cli_service
from src.app.cli.models import RunConfig
from src.app.cli.repository import parse_run_config, run_config_hash
from src.app.cli.service import CliContext
from src.app.main import main
from src.common.error import ConfigError

TINY_CONFIG = """
[run]
seed = 3

[dataset]
n_trajectories = 6
horizon = 10
expert_fraction = 0.5

[model]
hidden_sizes = [8, 8]
steps = 20
batch_size = 16
eval_every = 10

[influence]
k = 4
theta = 0.05
heldout_trajectories = 2

[augment]
cf_ratio = 0.5

[eval]
k_sims = 5
n_counterfactuals = 10
support_fractions = [0.5, 1.0]

[policy]
hidden_sizes = [8]
steps = 10
batch_size = 16
log_every = 5
cf_pool_size = 10
episodes = 2
horizon = 5
n_seeds = 2
ratios = [0.0, 1.0]
n_boot = 10
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


def run(config_path, out, *args) -> int:
    return main([args[0], "--config", str(config_path), "--out", str(out), *args[1:]])


def test_parse_run_config_sections():
    config = parse_run_config(TINY_CONFIG + '\n[task:z]\ngoal_entities = [2]\ngoal_positions = [[0.1, 0.2]]\nnuisance_rule = {"3": [0.5, 0.5]}\n')
    assert config.run.seed == 3
    assert config.model.hidden_sizes == [8, 8]
    assert config.influence.theta == 0.05
    assert [t.task_id for t in config.tasks] == ["z"]
    assert config.tasks[0].nuisance_rule == {3: (0.5, 0.5)}


def test_unknown_key_names_the_key():
    with pytest.raises(ValidationError) as e:
        parse_run_config("[world]\nbogus_key = 1\n")
    assert "bogus_key" in str(e.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("[nonsense]\na = 1\n")


def test_config_hash_ignores_out_dir_and_jobs():
    base = parse_run_config(TINY_CONFIG)
    moved = parse_run_config(TINY_CONFIG.replace("seed = 3", "seed = 3\nout_dir = elsewhere\njobs = 4"))
    assert run_config_hash(base) == run_config_hash(moved)
    reseeded = parse_run_config(TINY_CONFIG.replace("seed = 3", "seed = 4"))
    assert run_config_hash(base) != run_config_hash(reseeded)


def test_validation_failures_exit_one(tmp_path, config_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[world]\nbogus_key = 1\n", encoding="utf-8")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["gen-data", "--config", str(tmp_path / "missing.ini")]) == 1
    # 이전 단계 산출물이 없다
    assert run(config_path, tmp_path / "empty", "train-model") == 1
    assert main(["no-such-command"]) == 1


def test_runtime_failure_exits_two(monkeypatch, tmp_path):
    monkeypatch.setattr(cli_service, "gradient_check", lambda seed: {"hidden.0.weight": 0.5})
    assert main(["check-grad", "--out", str(tmp_path)]) == 2


def test_check_grad_prints_max_error(capsys, tmp_path):
    assert main(["check-grad", "--out", str(tmp_path)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["max_relative_error"] < 1e-4
    assert printed["max_relative_error"] == max(printed["per_tensor"].values())


def test_score_theta_flag(tmp_path, config_path):
    out = tmp_path / "run"
    assert run(config_path, out, "gen-data") == 0
    assert run(config_path, out, "train-model") == 0
    assert run(config_path, out, "score") == 0
    lines = (out / "scores" / "scores.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["theta"] is None
    assert "uncontrollable" not in json.loads(lines[1])

    assert run(config_path, out, "score", "--theta", "0.05") == 0
    lines = (out / "scores" / "scores.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["theta"] == 0.05
    assert "uncontrollable" in json.loads(lines[1])


def test_subcommands_are_idempotent(tmp_path, config_path):
    out = tmp_path / "run"
    assert run(config_path, out, "gen-data") == 0
    first = (out / "data" / "dataset.jsonl").read_bytes()
    assert run(config_path, out, "gen-data") == 0
    assert (out / "data" / "dataset.jsonl").read_bytes() == first
    # --seed 가 [run] seed 를 대체한다
    assert run(config_path, tmp_path / "other", "gen-data", "--seed", "9") == 0
    assert (tmp_path / "other" / "data" / "dataset.jsonl").read_bytes() != first


def test_theta_precedence(tmp_path):
    config = RunConfig.model_validate({"run": {"out_dir": str(tmp_path)}})
    ctx = CliContext(config, Namespace(theta=None))
    assert ctx.resolve_theta() == 0.05

    summary = ctx.paths.roc_summary("cai")
    summary.parent.mkdir(parents=True)
    summary.write_text(json.dumps({"selected_theta": 0.123}), encoding="utf-8")
    assert ctx.resolve_theta() == 0.123

    configured = config.model_copy(update={"influence": config.influence.model_copy(update={"theta": 0.3})})
    assert CliContext(configured, Namespace(theta=None)).resolve_theta() == 0.3
    assert CliContext(configured, Namespace(theta=0.2)).resolve_theta() == 0.2


def test_pipeline_manifest_is_reproducible(tmp_path, config_path):
    assert run(config_path, tmp_path / "a", "pipeline") == 0
    assert run(config_path, tmp_path / "b", "pipeline") == 0
    manifest_a = (tmp_path / "a" / "manifest.json").read_text(encoding="utf-8")
    manifest_b = (tmp_path / "b" / "manifest.json").read_text(encoding="utf-8")
    assert manifest_a == manifest_b

    manifest = json.loads(manifest_a)
    paths = {entry["path"] for entry in manifest["artifacts"]}
    assert manifest["config_hash"] == run_config_hash(parse_run_config(TINY_CONFIG))
    assert {"data/dataset.jsonl", "model/transition.ckpt", "scores/scores.jsonl", "policy/bc.ckpt", "policy/bc_none.ckpt"} <= paths
    assert all(not p.startswith("/") for p in paths)


def test_follow_up_subcommands(tmp_path, config_path):
    out = tmp_path / "run"
    for command in ("gen-data", "train-model", "score", "roc", "augment", "eval-support"):
        assert run(config_path, out, command) == 0, command
    assert run(config_path, out, "eval-feasibility", "--method", "random_swap") == 0
    assert run(config_path, out, "train-policy", "--ratio", "0.9") == 0
    assert run(config_path, out, "eval-policy", "--regime", "OOD") == 0
    assert run(config_path, out, "ablate-ratio") == 0
    assert run(config_path, out, "support-sweep") == 0
    reports = {p.name.split("_")[0] for p in (out / "reports").iterdir()}
    assert {"roc", "support", "feasibility", "eval", "ablation"} <= reports
    assert run(config_path, out, "train-policy", "--ratio", "1.5") == 1
