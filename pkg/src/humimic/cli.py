"""
humimic command line interface.

Every subcommand is one pipeline stage; they share ``--config``, ``--profile``
and ``--set section.key=value`` overrides. Exit codes: 0 success, 1 bad
configuration or usage, 2 runtime failure (a diagnostics file is written
under ``<output_dir>/diagnostics``), 3 acceptance thresholds missed.
"""

from __future__ import annotations

import logging
import sys
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import pandas as pd
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn
from rich.syntax import Syntax
from rich.table import Table

from humimic import __version__, io, workflow
from humimic.checkpoint import load_checkpoint
from humimic.config import PipelineConfig, artifact_meta, dump_config, load_config
from humimic.evaluation import check_thresholds
from humimic.exceptions import AcceptanceFailure, ConfigError

console = Console()
logger = logging.getLogger("humimic")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


def create_table(data: List[Dict[str, Any]], title: Optional[str] = None) -> Table:
    """Rich table from a list of row dicts."""
    table = Table(title=title, show_header=True, header_style="bold magenta")
    if not data:
        return table
    for key in data[0].keys():
        table.add_column(str(key).replace("_", " "))
    for row in data:
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row.values()])
    return table


def frame_table(frame: pd.DataFrame, title: Optional[str] = None) -> Table:
    return create_table(frame.to_dict(orient="records"), title)


class ProgressReporter:
    """Progress callback showing one bar per run and the latest metric."""

    def __init__(self, total: int, description: str, metric: str):
        self.total = total
        self.description = description
        self.metric = metric
        self._progress = Progress(
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TextColumn("{task.fields[value]}"),
            TimeElapsedColumn(),
            console=console,
        )
        self._task = None

    def __enter__(self) -> "ProgressReporter":
        self._progress.start()
        self._task = self._progress.add_task(self.description, total=self.total, value="")
        return self

    def __exit__(self, *exc) -> None:
        self._progress.stop()

    def __call__(self, index: int, row: Dict[str, float]) -> None:
        value = row.get(self.metric)
        text = f"{self.metric} {value:.4g}" if isinstance(value, float) else ""
        self._progress.update(self._task, completed=index + 1, value=text)


def _config(ctx: click.Context) -> PipelineConfig:
    return ctx.obj["config"]


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False), help="YAML config file")
@click.option("--profile", "-p", default="default", show_default=True, help="default, smoke or acceptance")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one config value")
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.version_option(__version__, prog_name="humimic")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], profile: str, overrides: Sequence[str],
        log_level: str) -> None:
    """Motion retargeting and reference-conditioned locomotion training."""
    logging.basicConfig(level=log_level.upper(), format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(console=console, rich_tracebacks=False)], force=True)
    ctx.ensure_object(dict)
    ctx.obj["command"] = ctx.invoked_subcommand or "humimic"
    ctx.obj["config"] = load_config(config_path, profile, overrides)


@cli.command("show-config")
@click.pass_context
def show_config(ctx: click.Context) -> None:
    """Print the fully resolved configuration."""
    console.print(Panel(Syntax(dump_config(_config(ctx)), "yaml"), title="Resolved configuration"))


@cli.command("fit-shape")
@click.pass_context
def fit_shape_cmd(ctx: click.Context) -> None:
    """Fit the human skeleton shape to the robot."""
    config = _config(ctx)
    tree = workflow.resolve_robot(config)
    result = workflow.run_fit_shape(config, tree)
    rows = [{"keypoint": k, "max_m": v[0], "mean_m": v[1]} for k, v in result.per_keypoint.items()]
    console.print(create_table(rows, title=f"Shape fit (alpha {result.shape.alpha:.4f})"))


@cli.command("train-ik")
@click.pass_context
def train_ik_cmd(ctx: click.Context) -> None:
    """Train the human-to-robot IK regressor."""
    config = _config(ctx)
    tree = workflow.resolve_robot(config)
    with ProgressReporter(config.ik.epochs, "IK epochs", "val_loss") as progress:
        _, curves = workflow.run_train_ik(config, tree, progress)
    console.print(frame_table(curves.tail(5), title="IK training (last epochs)"))


@cli.command("generate-motions")
@click.argument("names", nargs=-1)
@click.pass_context
def generate_motions_cmd(ctx: click.Context, names: Sequence[str]) -> None:
    """Generate the procedural human clips."""
    written = workflow.run_generate_motions(_config(ctx), names or None)
    console.print(create_table([{"clip": k, "path": str(v)} for k, v in written.items()], title="Human clips"))


@cli.command()
@click.argument("names", nargs=-1)
@click.pass_context
def retarget(ctx: click.Context, names: Sequence[str]) -> None:
    """Retarget human clips to raw robot motions."""
    config = _config(ctx)
    written = workflow.run_retarget(config, workflow.resolve_robot(config), names or None)
    console.print(create_table([{"motion": k, "path": str(v)} for k, v in written.items()], title="Raw motions"))


@cli.command()
@click.argument("names", nargs=-1)
@click.pass_context
def postprocess(ctx: click.Context, names: Sequence[str]) -> None:
    """Clean raw motions into physically plausible references."""
    config = _config(ctx)
    written = workflow.run_postprocess(config, workflow.resolve_robot(config), names or None)
    console.print(create_table([{"motion": k, "path": str(v)} for k, v in written.items()],
                               title="Processed motions"))


@cli.command("build-dataset")
@click.option("--holdout", is_flag=True, help="Build the held-out split instead")
@click.pass_context
def build_dataset_cmd(ctx: click.Context, holdout: bool) -> None:
    """Pack processed motions into a versioned dataset."""
    manifest = workflow.run_build_dataset(_config(ctx), holdout)
    rows = [{"name": s.name, "frames": s.frames, "file": s.file} for s in manifest.sequences]
    console.print(create_table(rows, title=f"Dataset v{manifest.version}"))


@cli.command("buffer-stats")
@click.option("--dataset", type=click.Path(file_okay=False, exists=True), help="Dataset directory")
@click.pass_context
def buffer_stats(ctx: click.Context, dataset: Optional[str]) -> None:
    """Summarise the reference buffer built from a dataset."""
    config = _config(ctx)
    directory = Path(dataset) if dataset else workflow.workspace(config).dataset()
    buffer = workflow.load_buffer(config, directory, 1)
    console.print(frame_table(buffer.stats(), title="Reference buffer"))


@cli.command()
@click.option("--stage", type=click.IntRange(1, 2), required=True, help="1: DAgger policy, 2: deployable policy")
@click.pass_context
def train(ctx: click.Context, stage: int) -> None:
    """Train the locomotion policy."""
    config = _config(ctx)
    tree = workflow.resolve_robot(config)
    iterations = config.stage1.iterations if stage == 1 else config.stage2.iterations
    with ProgressReporter(iterations, f"stage {stage}", "reward") as progress:
        path = workflow.run_train(config, tree, stage, progress)
    trace, _ = io.read_csv(workflow.workspace(config).trace(f"stage{stage}"))
    console.print(frame_table(trace.tail(5)[["iteration", "reward", "episode_length", "survival"]],
                              title=f"Stage {stage}"))
    console.print(f"[green]policy written to {path}[/green]")


def _eval_config(config: PipelineConfig, masked: bool) -> PipelineConfig:
    if not masked:
        return config
    return config.model_copy(update={"eval": config.eval.model_copy(update={"masked": True})})


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False), help="Policy checkpoint; default stage 2")
@click.option("--dataset", type=click.Path(file_okay=False), help="Dataset directory; default the held-out split")
@click.option("--replay", is_flag=True, help="Score the reference replay instead of a policy")
@click.option("--masked", is_flag=True, help="Hide references and follow sampled commands")
@click.option("--check", is_flag=True, help="Exit 3 when the acceptance thresholds are missed")
@click.pass_context
def eval_cmd(ctx: click.Context, checkpoint: Optional[str], dataset: Optional[str], replay: bool,
             masked: bool, check: bool) -> None:
    """Evaluate tracking and command following."""
    config = _eval_config(_config(ctx), masked)
    tree = workflow.resolve_robot(config)
    metrics = workflow.run_eval(config, tree, checkpoint, dataset, replay)
    console.print(frame_table(metrics, title="Evaluation"))
    if check:
        check_thresholds(metrics, config.eval)


@cli.command("rollout-dump")
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--dataset", type=click.Path(file_okay=False))
@click.option("--replay", is_flag=True)
@click.option("--masked", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV file to write")
@click.pass_context
def rollout_dump_cmd(ctx: click.Context, checkpoint: Optional[str], dataset: Optional[str], replay: bool,
                     masked: bool, out: str) -> None:
    """Write the per-step rollout dump without aggregating it."""
    config = _eval_config(_config(ctx), masked)
    dump = workflow.run_rollout_dump(config, workflow.resolve_robot(config), checkpoint, dataset, replay)
    io.write_csv(out, dump, artifact_meta(config, checkpoint=checkpoint, replay=replay))
    console.print(f"{len(dump)} steps written to {out}")


@cli.command("inspect-ckpt")
@click.argument("path", type=click.Path(dir_okay=False, exists=True))
@click.pass_context
def inspect_ckpt(ctx: click.Context, path: str) -> None:
    """List the tensors and metadata of a checkpoint."""
    ckpt = load_checkpoint(path)
    meta = yaml.safe_dump(ckpt.meta, sort_keys=True) if ckpt.meta else "{}\n"
    console.print(Panel(Syntax(meta, "yaml"), title=f"{ckpt.kind} checkpoint"))
    console.print(create_table(ckpt.table(), title="Tensors"))


@cli.command()
@click.pass_context
def smoke(ctx: click.Context) -> None:
    """Run every stage end to end on the bundled robot."""
    config = _config(ctx)
    with console.status("running every pipeline stage"):
        paths = workflow.run_smoke(config)
    missing = [p for p in paths if not p.exists()]
    console.print(create_table([{"artifact": str(p), "present": p.exists()} for p in paths], title="Smoke run"))
    if missing:
        raise AcceptanceFailure(f"missing artifacts: {[str(p) for p in missing]}")


def write_diagnostics(output_dir: Path, command: str, error: BaseException) -> Optional[Path]:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    path = Path(output_dir) / "diagnostics" / f"{command}-{stamp}.txt"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(traceback.format_exception(type(error), error, error.__traceback__)))
    except OSError:
        return None
    return path


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; returns the process exit code."""
    state: Dict[str, Any] = {}
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="humimic", obj=state,
                 standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        console.print("[red]aborted[/red]")
        return EXIT_RUNTIME
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG
    except ConfigError as e:
        console.print(f"[red]configuration error:[/red] {e}")
        return EXIT_CONFIG
    except AcceptanceFailure as e:
        console.print(f"[red]acceptance failed:[/red] {e}")
        return EXIT_ACCEPTANCE
    except Exception as e:
        config = state.get("config")
        output = config.output_dir if config is not None else Path("runs")
        path = write_diagnostics(output, state.get("command", "humimic"), e)
        console.print(f"[red]{type(e).__name__}:[/red] {e}")
        if path is not None:
            console.print(f"diagnostics written to {path}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
