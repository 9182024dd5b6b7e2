"""Skupiny CLI príkazov (data, lab) a pomôcky, ktoré zdieľajú."""
from typing import Optional

import click
from rich.markup import escape

from extensions import get_console


def resolve_seed(default: int = 0) -> int:
    """Seed z globálnej voľby --seed, inak predvolený seed príkazu."""
    ctx = click.get_current_context(silent=True)
    seed: Optional[int] = None
    if ctx is not None and ctx.obj:
        seed = ctx.obj.get("seed")
    return default if seed is None else seed


def echo(message: str) -> None:
    get_console().print(escape(message))


def echo_seed(seed: int) -> None:
    echo(f"seed: {seed}")
