"""
评估、消融与命令行测试
"""

import csv
import json
import sys

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from typer.testing import CliRunner

import src.services.ablation as ablation_module
from src.core.config import DEFAULT_TRAIN_CONFIG, load_train_config
from src.core.errors import ShapeError
from src.data.trajectory import record_dataset
from src.models.eval_data import AblationRow, EpisodeResult
from src.networks.policy import ACDiTPolicy, load_policy, save_policy
from src.services.ablation import ABLATION_HEADER, EXPERIMENTS, ablate, write_ablation
from src.services.evaluator import (
    REPORT_HEADER,
    WEIGHTS_HEADER,
    ExpertAgent,
    PolicyAgent,
    evaluate,
    inspect_weights,
    phase_summary,
    rollout,
    write_report,
)
from src.services.trainer import train_two_stage
from src.utils.logger import logger


@pytest.fixture
def untrained_agent(tiny_config) -> PolicyAgent:
    torch.manual_seed(0)
    return PolicyAgent(ACDiTPolicy(tiny_config).eval())


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.setenv("ACDIT_LOG_DIR", str(tmp_path / "logs"))
    yield CliRunner()
    # CLI 回调把日志接到了 CliRunner 的临时流上, 测试结束后恢复
    logger.remove()
    logger.add(sys.stderr, level="INFO")


class TestEpisodeResult:
    """回合结果模型测试"""

    def test_trace_length_must_match(self):
        with pytest.raises(ValidationError):
            EpisodeResult(task="t", seed=0, success=False, steps=2, weights=[[0.25] * 4], actions=[[0] * 5] * 2, phases=["drive"] * 2)

    def test_weights_on_simplex(self):
        with pytest.raises(ValidationError):
            EpisodeResult(task="t", seed=0, success=False, steps=1, weights=[[0.5, 0.5, 0.5, 0.5]], actions=[[0] * 5], phases=["drive"])

    def test_step_limit(self):
        with pytest.raises(ValidationError):
            EpisodeResult(task="t", seed=0, success=False, steps=201)


class TestRollout:
    """闭环执行测试"""

    def test_expert_agent_succeeds(self):
        results = [rollout(ExpertAgent(), "navigate_pick", 100000 + i) for i in range(5)]
        assert sum(r.success for r in results) >= 4
        for r in results:
            assert r.steps == len(r.weights) == len(r.actions) == len(r.phases)

    def test_policy_rollout_deterministic(self, untrained_agent):
        a = rollout(untrained_agent, "navigate_pick", 5, max_steps=4)
        b = rollout(untrained_agent, "navigate_pick", 5, max_steps=4)
        assert a == b
        assert a.steps == 4
        for w in a.weights:
            assert sum(w) == pytest.approx(1.0, abs=1e-6)

    def test_stride(self, untrained_agent):
        result = rollout(untrained_agent, "navigate_pick", 5, stride=2, max_steps=4)
        # 同一动作块内的两行共享一组权重
        assert result.weights[0] == result.weights[1]
        with pytest.raises(ShapeError):
            rollout(untrained_agent, "navigate_pick", 5, stride=3)

    def test_actions_are_clamped(self, untrained_agent):
        result = rollout(untrained_agent, "navigate_pick", 1, max_steps=3)
        actions = np.asarray(result.actions)
        assert np.all(np.abs(actions[:, 0]) <= 1.8)
        assert np.all((actions[:, 4] >= 0) & (actions[:, 4] <= 1))


class TestEvaluate:
    """多任务评估测试"""

    def test_single_repeat_has_zero_std(self):
        report = evaluate(ExpertAgent(), ["navigate_pick"], episodes=2, repeats=1)
        score = report.scores[0]
        assert score.std == 0.0
        assert score.n == 2
        assert 0 <= score.mean <= 100

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            evaluate(ExpertAgent(), ["navigate_pick"], episodes=0)

    def test_report_files(self, tmp_path):
        report = evaluate(ExpertAgent(), ["navigate_pick"], episodes=1, repeats=2, tag="abc")
        path = write_report(report, tmp_path / "eval" / "report.csv")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == REPORT_HEADER
        assert rows[1][0] == "navigate_pick" and rows[1][3] == "1"
        payload = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        assert payload["config_hash"] == "abc"
        assert payload["repeats"] == 2

    @pytest.mark.slow
    def test_expert_success_rate(self):
        report = evaluate(ExpertAgent(), ["navigate_pick", "pick_place", "navigate_open", "navigate_place"], episodes=20, repeats=1)
        for score in report.scores:
            assert score.mean >= 95.0, score

    @pytest.mark.slow
    def test_untrained_policy_fails(self, untrained_agent):
        report = evaluate(untrained_agent, ["navigate_pick"], episodes=10, repeats=1)
        assert report.mean <= 10.0


class TestInspectWeights:
    """权重轨迹导出测试"""

    def test_csv_schema(self, tmp_path):
        path, line = inspect_weights(ExpertAgent(), "navigate_pick", 3, tmp_path / "w.csv")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == WEIGHTS_HEADER
        for i, row in enumerate(rows[1:]):
            assert int(row[0]) == i
            assert sum(float(x) for x in row[1:5]) == pytest.approx(1.0, abs=1e-6)
            assert row[5] in ("drive", "approach", "manipulate")
        assert "task=navigate_pick" in line

    def test_phase_summary(self):
        result = EpisodeResult(
            task="t", seed=0, success=False, steps=2,
            weights=[[0.4, 0.2, 0.2, 0.2], [0.1, 0.3, 0.3, 0.3]],
            actions=[[0] * 5] * 2,
            phases=["drive", "manipulate"],
        )
        summary = phase_summary(result)
        assert summary["drive"] == pytest.approx(0.6)
        assert summary["manipulate"] == pytest.approx(0.9)


class TestAblation:
    """消融实验测试"""

    def test_experiment_flags(self, tiny_train_config):
        configs = [exp.apply(tiny_train_config, seed=5) for exp in EXPERIMENTS]
        assert [c.use_cloud for c in configs] == [False, True, True, True]
        assert [c.conditioning_direction for c in configs] == ["none", "none", "mobility", "mobility"]
        assert [c.use_fusion for c in configs] == [False, False, False, True]
        assert all(c.seed == 5 for c in configs)

    def test_gains_relative_to_first(self, tiny_train_config, tmp_path, monkeypatch):
        rates = {"Exp1": [40.0, 50.0], "Exp2": [50.0, 50.0], "Exp3": [60.0, 60.0], "Exp4": [70.0, 80.0]}
        monkeypatch.setattr(
            ablation_module, "run_experiment",
            lambda exp, base, out_dir, dataset, progress=None: rates[exp.name],
        )
        rows = ablate(tiny_train_config, tmp_path, dataset=[])
        assert [r.exp for r in rows] == ["Exp1", "Exp2", "Exp3", "Exp4"]
        assert [r.gain for r in rows] == pytest.approx([0.0, 5.0, 15.0, 30.0])
        assert rows[3].per_seed == [70.0, 80.0]

        path = write_ablation(rows, tmp_path / "table.csv")
        with open(path, newline="", encoding="utf-8") as f:
            table = list(csv.reader(f))
        assert tuple(table[0]) == ABLATION_HEADER
        assert table[1][:5] == ["Exp1", "1", "0", "0", "0"]
        assert table[4][:5] == ["Exp4", "1", "1", "1", "1"]

    def test_row_bounds(self):
        with pytest.raises(ValidationError):
            AblationRow(exp="Exp1", use_3d=False, pma=False, mbc=False, mean=120.0)

    @pytest.mark.slow
    @pytest.mark.integration
    def test_end_to_end_tiny(self, tiny_train_config, tmp_path):
        cfg = tiny_train_config.model_copy(update={"ablation_seeds": 1, "eval_episodes": 1, "eval_repeats": 1})
        rows = ablate(cfg, tmp_path, experiments=EXPERIMENTS[:1] + EXPERIMENTS[3:])
        assert len(rows) == 2
        assert (tmp_path / "exp4" / "seed0" / "stage1.acdt").exists()


class TestCli:
    """命令行测试"""

    def test_info(self, runner):
        from main import app

        result = runner.invoke(app, ["info"])
        assert result.exit_code == 0, result.output
        assert "navigate_pick" in result.output

    def test_collect(self, runner, tmp_path):
        from main import app
        from src.data.storage import load_dataset

        out = tmp_path / "d.acds"
        result = runner.invoke(app, ["collect", "--task", "navigate_pick", "--episodes", "1", "--seed", "4", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert len(load_dataset(out)) == 1

    def test_missing_checkpoint_exits_nonzero(self, runner, tmp_path):
        from main import app

        result = runner.invoke(app, ["eval", "--checkpoint", str(tmp_path / "none.acdt"), "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 1
        assert "MissingCheckpointError" in result.output

    def test_unknown_task_exits_nonzero(self, runner, tmp_path):
        from main import app

        result = runner.invoke(app, ["collect", "--task", "juggle", "--out", str(tmp_path / "d.acds")])
        assert result.exit_code == 1

    def test_bad_stage(self, runner, tmp_path):
        from main import app

        result = runner.invoke(app, ["train", "--stage", "3", "--out", str(tmp_path / "x.acdt")])
        assert result.exit_code != 0

    @pytest.mark.slow
    def test_inspect_weights(self, runner, tiny_config, tmp_path):
        from main import app

        ckpt = save_policy(ACDiTPolicy(tiny_config), tmp_path / "p.acdt")
        out = tmp_path / "w.csv"
        # 未训练的策略通常会跑满 200 步
        result = runner.invoke(app, ["inspect-weights", "--checkpoint", str(ckpt), "--task", "navigate_pick", "--seed", "1", "--out", str(out)])
        assert result.exit_code == 0, result.output
        with open(out, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == WEIGHTS_HEADER
        assert len(rows) >= 2


@pytest.fixture(scope="module")
def demos():
    """navigate_pick 上的 200 条专家演示"""
    return record_dataset("navigate_pick", episodes=200, seed_start=0)


class TestPipeline:
    """采集 -> 两阶段训练 -> 评估 的整体验收"""

    @pytest.mark.integration
    def test_pipeline_is_deterministic(self, tiny_train_config, small_dataset, tmp_path):
        cfg = tiny_train_config.model_copy(update={"steps": 12, "stage1_steps": 12})

        def run(name):
            result = train_two_stage(cfg, tmp_path / name, small_dataset)
            report = evaluate(PolicyAgent(load_policy(result.checkpoint)), ["navigate_pick"], episodes=2, repeats=1)
            return result, report

        first, report_a = run("a")
        second, report_b = run("b")
        assert report_a == report_b
        assert len(first.losses) >= 10
        assert np.allclose(first.losses[:10], second.losses[:10], rtol=1e-6, atol=0)
        assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()

    @pytest.mark.slow
    @pytest.mark.integration
    def test_default_config_competence(self, demos, tmp_path):
        cfg = load_train_config(DEFAULT_TRAIN_CONFIG)
        result = train_two_stage(cfg, tmp_path / "ckpt", demos)
        report = evaluate(
            PolicyAgent(load_policy(result.checkpoint)), ["navigate_pick"], episodes=50, repeats=3
        )
        assert report.mean >= 80.0, report

    @pytest.mark.slow
    @pytest.mark.integration
    def test_ablation_ordering(self, demos, tmp_path):
        cfg = load_train_config(DEFAULT_TRAIN_CONFIG, ablation_seeds=3, eval_episodes=50, eval_repeats=3)
        rows = {row.exp: row for row in ablate(cfg, tmp_path, dataset=demos)}
        assert rows["Exp4"].mean - rows["Exp1"].mean >= 10.0
        assert rows["Exp4"].mean >= rows["Exp2"].mean
