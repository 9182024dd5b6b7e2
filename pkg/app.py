"""
Vstupný bod laboratória. Príkazy sú v skupinách routes.data a routes.lab, ktoré sa
registrujú do jednej click skupiny.

Exit kódy: 0 úspech, 1 použitie/konfigurácia, 2 dáta, 3 numerická chyba.
"""
import logging
import sys
from typing import Optional

import click
from rich.markup import escape

from exceptions import EXIT_OK, EXIT_USAGE, LabError
from extensions import get_console, setup_logging
from routes.data import data_group
from routes.lab import lab_group

logger = logging.getLogger(__name__)


class LabGroup(click.Group):
    """click skupina, ktorá mapuje LabError na exit kód a chyby použitia na 1."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            get_console(stderr=True).print("Aborted!")
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except LabError as e:
            get_console(stderr=True).print(f"Error ({type(e).__name__}): {escape(str(e))}")
            logger.debug("command failed", exc_info=True)
            sys.exit(e.exit_code)
        if not standalone_mode:
            return rv
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def register_commands(group: click.Group, source: click.Group) -> None:
    for name, command in source.commands.items():
        group.add_command(command, name)


@click.group(cls=LabGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--verbose", "-v", is_flag=True, help="Podrobné (DEBUG) logovanie.")
@click.option("--seed", type=int, default=None, help="Prepíše seed príkazu (aj seed z konfigurácie).")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, seed: Optional[int]):
    """Laboratórium pre dolaďovanie malých QA modelov."""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


register_commands(cli, data_group)
register_commands(cli, lab_group)


if __name__ == "__main__":
    cli()
