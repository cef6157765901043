#!/usr/bin/env python3
"""
AC-DiT 移动操作扩散策略 - 统一CLI入口

命令:
  acdit collect          用脚本专家采集演示数据集
  acdit train            训练策略(阶段1 / 阶段2 / 两阶段)
  acdit eval             闭环评估检查点
  acdit ablate           运行 Exp1~Exp4 消融实验
  acdit inspect-weights  导出单回合的感知重要性权重轨迹
  acdit info             显示配置对应的模型参数量

使用示例:
    python main.py collect --task navigate_pick --episodes 200 --seed 0 --out output/data/navigate_pick.acds
    python main.py train --config config/train_default.cfg --out output/ckpt/
    python main.py eval --checkpoint output/ckpt/stage2.acdt --tasks navigate_pick --out output/eval/report.csv
    python main.py ablate --config config/train_default.cfg --out output/ablation/table.csv
    python main.py inspect-weights --checkpoint output/ckpt/stage2.acdt --task navigate_pick --seed 7 --out output/weights.csv
"""

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

# 加载环境变量
from dotenv import load_dotenv
load_dotenv(override=True)

# 添加项目根目录到路径
sys.path.insert(0, str(Path(__file__).parent))

from src import __version__
from src.core.config import load_train_config, log_settings
from src.core.errors import ACDiTError
from src.data.storage import save_dataset
from src.data.trajectory import record_dataset
from src.networks.policy import ACDiTPolicy, load_policy
from src.services.ablation import EXPERIMENTS, ablate as run_ablation, write_ablation
from src.services.evaluator import PolicyAgent, evaluate_checkpoint, inspect_weights, write_report
from src.services.trainer import train as run_train, train_two_stage
from src.sim.tasks import task_names
from src.utils.logger import logger, setup_logger


app = typer.Typer(
    name="acdit",
    help="AC-DiT 移动操作扩散策略: 采集、训练、评估与消融",
    add_completion=False,
)
console = Console()


# ============================================================================
# 辅助函数
# ============================================================================

def parse_tasks(tasks_str: str) -> List[str]:
    """
    解析任务列表参数

    Args:
        tasks_str: 逗号分隔的任务名, "all" 表示注册表中的全部任务

    Returns:
        任务名列表
    """
    if tasks_str.strip().lower() == "all":
        return task_names()
    tasks = [t.strip() for t in tasks_str.split(",") if t.strip()]
    if not tasks:
        raise typer.BadParameter("至少需要一个任务名")
    return tasks


def make_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
    )


@contextmanager
def cli_errors() -> Iterator[None]:
    """把可预期错误转换为红色提示和退出码 1"""
    try:
        yield
    except (ACDiTError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        console.print(f"[red]❌ {type(e).__name__}: {e}[/red]")
        raise typer.Exit(1)


@app.callback()
def main_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出 DEBUG 日志"),
):
    """初始化日志"""
    settings = log_settings()
    setup_logger(
        log_dir=settings["log_dir"],
        log_level="DEBUG" if verbose else settings["log_level"],
    )


# ============================================================================
# 数据采集
# ============================================================================

@app.command()
def collect(
    task: str = typer.Option(..., "--task", "-t", help="任务名"),
    episodes: int = typer.Option(200, "--episodes", "-n", min=1, help="演示条数"),
    seed: int = typer.Option(0, "--seed", "-s", help="起始种子"),
    out: Path = typer.Option(..., "--out", "-o", help="数据集输出路径 (.acds)"),
):
    """用脚本专家采集演示数据集"""
    with cli_errors(), make_progress() as progress:
        bar = progress.add_task(f"正在采集 {task}...", total=episodes)
        dataset = record_dataset(task, episodes, seed, progress=lambda n: progress.update(bar, completed=n))
        path = save_dataset(dataset, out)

    steps = sum(t.length for t in dataset)
    console.print("\n[bold green]✅ 采集完成[/bold green]")
    console.print(f"  任务: {task}")
    console.print(f"  轨迹数: {len(dataset)}")
    console.print(f"  总步数: {steps} (平均 {steps / len(dataset):.1f})")
    console.print(f"  输出: {path}")


# ============================================================================
# 训练
# ============================================================================

@app.command()
def train(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="训练配置文件 (key=value)"),
    stage: str = typer.Option("all", "--stage", help="1 / 2 / all(两阶段)"),
    out: Path = typer.Option(..., "--out", "-o", help="检查点路径; --stage all 时为输出目录"),
    init: Optional[str] = typer.Option(None, "--init", help="阶段2加载的阶段1检查点"),
    dataset: Optional[str] = typer.Option(None, "--dataset", "-d", help="覆盖配置中的数据集路径"),
):
    """训练策略"""
    if stage not in ("1", "2", "all"):
        raise typer.BadParameter(f"--stage 必须是 1、2 或 all, 当前: {stage}")

    with cli_errors():
        overrides = {"dataset_path": dataset, "init_checkpoint": init}
        if stage != "all":
            overrides["stage"] = int(stage)
        cfg = load_train_config(config, **overrides)

        total = cfg.resolved_stage1_steps() if stage == "1" else cfg.steps
        if stage == "all" and cfg.conditioning_direction != "none":
            total += cfg.resolved_stage1_steps()

        with make_progress() as progress:
            bar = progress.add_task("正在训练...", total=total)

            def on_step(step: int, loss: float) -> None:
                progress.update(bar, advance=1, description=f"训练中 loss={loss:.4f}")

            if stage == "all":
                result = train_two_stage(cfg, out, progress=on_step)
            else:
                result = run_train(cfg, out, progress=on_step)

    console.print("\n[bold green]✅ 训练完成[/bold green]")
    console.print(f"  阶段: {result.stage}")
    console.print(f"  最终 loss: {result.final_loss:.5f}")
    console.print(f"  检查点: {result.checkpoint}")
    console.print(f"  训练曲线: {result.metrics}")


# ============================================================================
# 评估
# ============================================================================

@app.command("eval")
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="策略检查点 (.acdt)"),
    tasks: str = typer.Option("navigate_pick", "--tasks", "-t", help="逗号分隔的任务名, 或 all"),
    episodes: int = typer.Option(50, "--episodes", "-n", min=1, help="每轮回合数"),
    repeats: int = typer.Option(3, "--repeats", "-r", min=1, help="重复轮数"),
    stride: int = typer.Option(1, "--stride", help="每个动作块执行的行数"),
    out: Path = typer.Option(..., "--out", "-o", help="报告 CSV 路径(同名 .json 保存完整结果)"),
):
    """闭环评估检查点"""
    task_list = parse_tasks(tasks)
    with cli_errors(), make_progress() as progress:
        bar = progress.add_task("正在评估...", total=len(task_list) * episodes * repeats)
        report = evaluate_checkpoint(
            checkpoint,
            task_list,
            episodes=episodes,
            repeats=repeats,
            stride=stride,
            progress=lambda n: progress.update(bar, completed=n),
        )
        path = write_report(report, out)

    table = Table(title=f"评估结果 ({episodes} 回合 × {repeats} 轮)")
    table.add_column("任务", style="cyan")
    table.add_column("成功率 %", style="green", justify="right")
    table.add_column("标准差", justify="right")
    for score in report.scores:
        table.add_row(score.task, f"{score.mean:.1f}", f"{score.std:.1f}")
    console.print(table)
    console.print(f"  配置指纹: {report.config_hash}")
    console.print(f"  报告: {path}")


# ============================================================================
# 消融
# ============================================================================

@app.command()
def ablate(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="基础训练配置"),
    out: Path = typer.Option(..., "--out", "-o", help="消融表 CSV 路径"),
):
    """运行 Exp1~Exp4 消融实验"""
    with cli_errors():
        base = load_train_config(config)
        run_dir = out.parent / f"{out.stem}_runs"
        with make_progress() as progress:
            bar = progress.add_task("正在消融...", total=len(EXPERIMENTS) * base.ablation_seeds)
            rows = run_ablation(
                base,
                run_dir,
                progress=lambda name: progress.update(bar, advance=1, description=f"完成 {name}"),
            )
        path = write_ablation(rows, out)

    table = Table(title="消融结果")
    for column in ("实验", "2D", "3D", "PMA", "MBC", "成功率 %", "增益"):
        table.add_column(column, justify="right" if column in ("成功率 %", "增益") else "center")
    for row in rows:
        marks = ["✓" if flag else "-" for flag in (row.use_2d, row.use_3d, row.pma, row.mbc)]
        table.add_row(row.exp, *marks, f"{row.mean:.1f}", f"{row.gain:+.1f}")
    console.print(table)
    console.print(f"  消融表: {path}")


# ============================================================================
# 权重轨迹
# ============================================================================

@app.command("inspect-weights")
def inspect_weights_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="策略检查点 (.acdt)"),
    task: str = typer.Option(..., "--task", "-t", help="任务名"),
    seed: int = typer.Option(0, "--seed", "-s", help="回合种子"),
    out: Path = typer.Option(..., "--out", "-o", help="权重轨迹 CSV 路径"),
):
    """导出单回合的感知重要性权重轨迹 (wf, wl, wr, wp, phase)"""
    with cli_errors():
        agent = PolicyAgent(load_policy(checkpoint))
        path, line = inspect_weights(agent, task, seed, out)

    console.print(f"\n[green]✅ 权重轨迹已写入: {path}[/green]")
    console.print(f"  {line}")


# ============================================================================
# 模型信息
# ============================================================================

@app.command()
def info(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="训练配置文件"),
):
    """显示配置对应的模型参数量"""
    with cli_errors():
        cfg = load_train_config(config)
        policy = ACDiTPolicy(cfg.to_model_config())

    table = Table(show_header=False)
    table.add_column("属性", style="cyan")
    table.add_column("值", style="green")
    table.add_row("总参数量", f"{policy.num_parameters():,}")
    for name, module in policy.named_children():
        table.add_row(f"  {name}", f"{sum(p.numel() for p in module.parameters()):,}")
    table.add_row("d_model", str(cfg.d_model))
    table.add_row("历史长度 τ+1", str(cfg.history))
    table.add_row("动作块长度 k", str(cfg.horizon))
    table.add_row("去噪步数 K", str(cfg.diffusion_steps))
    table.add_row("条件方向", cfg.conditioning_direction)
    table.add_row("点云 / 融合", f"{cfg.use_cloud} / {cfg.use_fusion}")
    table.add_row("已注册任务", ", ".join(task_names()))

    console.print(Panel.fit(f"[bold blue]AC-DiT 模型信息[/bold blue] v{__version__}"))
    console.print(table)


if __name__ == "__main__":
    app()
