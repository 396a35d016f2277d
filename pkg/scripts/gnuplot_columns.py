r"""
Turns a CSV artifact into whitespace-separated columns for gnuplot.

    python scripts/gnuplot_columns.py \
        artifacts/experiment-clearing_noseed_clearing.csv \
        --columns N,l2_norm,prediction --where source=lattice

Rows with a different value in a grouping column are separated by two blank
lines, which gnuplot reads as a new data index.
"""

import csv
import sys
from typing import List, Optional

import typer

app = typer.Typer(add_completion=False)


def select_rows(rows: List[dict], where: Optional[str]) -> List[dict]:
    if not where:
        return rows
    key, _, value = where.partition("=")
    return [row for row in rows if row.get(key) == value]


@app.command()
def main(
    path: str = typer.Argument(..., help="CSV artifact."),
    columns: str = typer.Option(..., help="Comma-separated column names."),
    where: Optional[str] = typer.Option(None, help="Filter as key=value."),
    group: Optional[str] = typer.Option(
        None, help="Column starting a new block when it changes."
    ),
):
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    names = [name.strip() for name in columns.split(",") if name.strip()]
    missing = [name for name in names if rows and name not in rows[0]]
    if missing:
        typer.echo(f"Unknown columns: {', '.join(missing)}", err=True)
        raise typer.Exit(code=2)

    out = sys.stdout
    out.write("# " + " ".join(names) + "\n")
    previous = None
    for row in select_rows(rows, where):
        if group is not None:
            if previous is not None and row[group] != previous:
                out.write("\n\n")
            previous = row[group]
        out.write(" ".join(row[name] for name in names) + "\n")


if __name__ == "__main__":
    app()
