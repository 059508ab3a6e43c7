import datetime
import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

FILE_FORMAT = "(%(asctime)s)[%(thread)d][%(levelname)s] %(threadName)s: %(message)s"
DEFAULT_LOG = Path('logs', 'log')


class Logger(logging.Logger):
    @staticmethod
    def create_logger(verbose: bool, log: Optional[Path] = None,
                      console: Optional[Console] = None) -> logging.Logger:
        """File log always; with verbose and a console, debug records are mirrored there too."""
        level = logging.DEBUG if verbose else logging.INFO
        log_file = (log or DEFAULT_LOG).absolute()
        log_file.parent.mkdir(parents=True, exist_ok=True)

        handlers: list[logging.Handler] = [RotatingFileHandler(
            filename=log_file,
            mode="a+",
            maxBytes=1024 * 1024 * 20,
            backupCount=3,
            encoding='utf-8'
        )]
        handlers[0].setFormatter(logging.Formatter(FILE_FORMAT, datefmt="%H:%M:%S"))
        if verbose and console is not None:
            handlers.append(RichHandler(console=console, show_path=False, markup=False))

        logging.basicConfig(level=level, handlers=handlers, force=True)
        logger = logging.getLogger(__name__)

        logger.info("=========== search-bc ===========")
        logger.info(f"Started at {datetime.datetime.now().strftime('%d/%m/%Y, %H:%M:%S')}")
        logger.info(f"Logging to {log_file}")
        return logger
