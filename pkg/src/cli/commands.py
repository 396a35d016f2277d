"Command-line entry point"

import json
import logging
from typing import Any, Dict, Optional

import typer
from rich.console import Console
from rich.table import Table

from src.cli.runner import EXIT_CONFIG, load_config, manifest_path, run
from src.schemas.experiment_schemas import ExperimentConfig

logger = logging.getLogger(__name__)

console = Console()


def schema_help() -> str:
    """One line per top-level key of the experiment document."""
    lines = ["Experiment document keys, 'mce schema' prints the schema:"]
    for name, field in ExperimentConfig.model_fields.items():
        lines.append(f"  {name}: {field.description}")
    return "\n\n".join(lines)


app = typer.Typer(
    help="Market-clearing equilibria on scenario lattices.",
    epilog=schema_help(),
    no_args_is_help=True,
)
experiment_app = typer.Typer(
    help="Convergence, stability and clearing experiments.",
    epilog=schema_help(),
    no_args_is_help=True,
)
app.add_typer(experiment_app, name="experiment")

CONFIG_OPTION = typer.Option(..., "--config", help="Experiment JSON document.")
OUT_OPTION = typer.Option(None, "--out", help="Artifact directory.")
SEED_OPTION = typer.Option(None, "--seed", min=0, help="Root seed (u64).")
THREADS_OPTION = typer.Option(None, "--threads", min=1, help="Worker threads.")


def _summary_table(kind: str, summary: Dict[str, Any]) -> Table:
    table = Table(title=kind)
    table.add_column("quantity")
    table.add_column("value")
    for key in sorted(summary):
        table.add_row(key, str(summary[key]))
    return table


def _execute(
    kind: str,
    config: str,
    out: Optional[str],
    seed: Optional[int],
    threads: Optional[int],
) -> None:
    logging.basicConfig(level=logging.INFO)
    try:
        document = load_config(
            config, {"kind": kind, "seed": seed, "threads": threads}
        )
    except ValueError as e:
        logger.error(f"Invalid config {config}: {e}")
        console.print(f"[red]Invalid config:[/red] {e}")
        raise typer.Exit(code=EXIT_CONFIG)

    code = run(document, out)
    target = manifest_path(document, out)
    if target.exists():
        with open(target, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        console.print(_summary_table(kind, manifest.get("summary", {})))
        console.print(f"Manifest: {target}")
    raise typer.Exit(code=code)


@app.command("validate")
def validate(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Sample the standing assumptions of a model."""
    _execute("validate", config, out, seed, threads)


@app.command("solve-lattice")
def solve_lattice(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Continuation Picard equilibrium, cross-checked by Newton."""
    _execute("solve-lattice", config, out, seed, threads)


@app.command("solve-newton")
def solve_newton(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Global Newton oracle on a small lattice."""
    _execute("solve-newton", config, out, seed, threads)


@app.command("solve-mkv")
def solve_mkv(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Conditional mean-field limit of a homogeneous market."""
    _execute("solve-mkv", config, out, seed, threads)


@app.command("lq-oracle")
def lq_oracle(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Riccati loadings, gap variances and simulated LQ prices."""
    _execute("lq-oracle", config, out, seed, threads)


@app.command("schema")
def schema():
    """Print the JSON schema of the experiment document."""
    typer.echo(json.dumps(ExperimentConfig.model_json_schema(), indent=2))


@experiment_app.command("convergence")
def convergence(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Rates in N of the W2 and price-gap statistics."""
    _execute("experiment-convergence", config, out, seed, threads)


@experiment_app.command("stability")
def stability(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Stability estimates under per-agent perturbations."""
    _execute("experiment-stability", config, out, seed, threads)


@experiment_app.command("clearing")
def clearing(
    config: str = CONFIG_OPTION,
    out: Optional[str] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
):
    """Per-capita clearing residual of the mean-field price."""
    _execute("experiment-clearing", config, out, seed, threads)
