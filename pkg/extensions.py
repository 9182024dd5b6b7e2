import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler


load_dotenv()


@dataclass(frozen=True)
class Settings:
    gemini_api_key: str
    log_level: str


def load_settings() -> Settings:
    """Načíta nastavenia procesu z prostredia (.env sa načíta pri importe)."""
    return Settings(
        gemini_api_key=os.getenv("GEMINI_API_KEY", ""),
        log_level=os.getenv("EDUQA_LOG_LEVEL", "INFO").upper(),
    )


settings = load_settings()


def get_console(stderr: bool = False) -> Console:
    # konzola sa viaže na aktuálny sys.stdout, preto nová pri každom výpise
    return Console(stderr=stderr, highlight=False, soft_wrap=True)


def setup_logging(verbose: bool = False) -> None:
    """Nastaví jeden RichHandler na root loggeri; opakované volanie len zmení úroveň."""
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level, logging.INFO)
    root = logging.getLogger()
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(console=get_console(stderr=True), show_path=False, rich_tracebacks=False, markup=False)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(level)
