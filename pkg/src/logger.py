import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union
from rich.console import Console
from rich.logging import RichHandler
from rich.text import Text

console = Console()

RUN_LOG_NAME = "run.log"
NOISY_LOGGERS = ("httpx", "httpcore", "transformers", "PIL", "insightface")


class PlainFormatter(logging.Formatter):
    """Drops rich markup so files hold plain text"""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        try:
            return Text.from_markup(line).plain
        except Exception:
            return line


def setup_logger(name: str = "face_stylizer", level: int = logging.INFO) -> logging.Logger:
    """Rich console logger shared by the CLI and the trainer"""
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.handlers = []
    logger.propagate = False

    rich_handler = RichHandler(
        console=console,
        rich_tracebacks=True,
        tracebacks_show_locals=False,
        markup=True,
        show_path=False,
    )
    rich_handler.setLevel(level)
    rich_handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(rich_handler)

    # torch and transformers report deprecations through warnings
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").handlers = [rich_handler]
    for noisy in NOISY_LOGGERS:
        logging.getLogger(noisy).setLevel(logging.WARNING)

    return logger


def set_level(level: Union[str, int]) -> None:
    """Change the level of the global logger and its console handler"""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"Unknown log level: {level}")
    logger.setLevel(level)
    for handler in logger.handlers:
        if isinstance(handler, RichHandler):
            handler.setLevel(level)


@contextmanager
def run_log(run_dir: Path) -> Iterator[Path]:
    """Mirror log records into <run_dir>/run.log while the block runs"""
    path = Path(run_dir) / RUN_LOG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(PlainFormatter("%(asctime)s %(levelname)s %(message)s"))
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()


logger = setup_logger()
