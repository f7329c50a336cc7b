import logging
import signal
import sys
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)


def setup_logging(debug: bool = False, log_file: Optional[Path] = None) -> logging.Logger:
    log_level = logging.DEBUG if debug else logging.INFO

    # Clear any existing handlers
    root_logger = logging.getLogger()
    root_logger.handlers.clear()

    # Everything goes to the log file when one is given
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
        root_logger.addHandler(file_handler)

    # Console only shows warnings and errors, on stderr so CSV on stdout stays clean
    console_handler = RichHandler(console=console, show_time=False, show_path=False)
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(logging.Formatter('%(message)s'))

    root_logger.setLevel(log_level)
    root_logger.addHandler(console_handler)

    return logging.getLogger(__name__)


def signal_handler(shutdown_event):
    def handler(signum, frame):
        console.print("\n[yellow]Received shutdown signal. Finishing current tasks...[/yellow]")
        if shutdown_event.is_set():
            console.print("[red]Second signal, exiting now.[/red]")
            sys.exit(130)
        shutdown_event.set()
    return handler


def install_signal_handlers(shutdown_event) -> None:
    handler = signal_handler(shutdown_event)
    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
