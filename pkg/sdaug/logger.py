"""Human and JSON logging helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from rich.console import Console
from rich.theme import Theme


@dataclass
class HumanEntry:
    title: Optional[str] = None
    body: Optional[str] = None
    variant: str = "info"


class Logger:
    def __init__(
        self,
        command: str,
        log_json_path: Optional[str] = None,
        enable_human_logs: bool = True,
        enable_file_logs: bool = False,
        pretty: bool = True,
    ) -> None:
        self.command = command
        self.log_path = Path(log_json_path) if log_json_path else None
        self.enable_human_logs = enable_human_logs
        self.enable_file_logs = enable_file_logs and self.log_path is not None
        self.pretty = pretty
        self.console = Console(theme=_theme(), highlight=False, stderr=True) if pretty else None

    def start_spinner(self, message: str = "working") -> Callable[[], None]:
        if not self.supports_spinner():
            return lambda: None
        status = self.console.status(message, spinner="dots")
        status.start()
        return status.stop

    def supports_spinner(self) -> bool:
        return bool(self.pretty and self.enable_human_logs and self.console and self.console.is_terminal)

    def human(self, entry: HumanEntry) -> None:
        if not self.enable_human_logs:
            return
        title = entry.title or "info"
        body = entry.body or ""
        variant = entry.variant or "info"
        if self.console:
            prefix = {
                "error": "[error]",
                "warn": "[warn]",
                "epoch": "[epoch]",
                "data": "[data]",
            }.get(variant, "[info]")
            self.console.print(f"{prefix} {title}", style=variant if variant in _STYLES else "info", markup=False)
            if body:
                self.console.print(body, markup=False)
        else:
            print(f"{title}: {body}")

    def info(self, title: str, body: str = "") -> None:
        self.human(HumanEntry(title=title, body=body, variant="info"))

    def warn(self, title: str, body: str = "") -> None:
        self.human(HumanEntry(title=title, body=body, variant="warn"))

    def error(self, title: str, body: str = "") -> None:
        self.human(HumanEntry(title=title, body=body, variant="error"))

    def render(self, renderable: Any) -> None:
        """Print a rich renderable (tables) on the human channel."""
        if not self.enable_human_logs:
            return
        if self.console:
            self.console.print(renderable)
        else:
            print(renderable)

    def json(self, entry: Dict[str, Any]) -> None:
        if not self.enable_file_logs or self.log_path is None:
            return
        payload: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "command": self.command,
            **entry,
        }
        try:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.log_path.open("a", encoding="utf8") as fh:
                fh.write(json.dumps(payload))
                fh.write("\n")
        except OSError:
            if self.console:
                self.console.print("log write failed", style="error")


_STYLES = {
    "info": "cyan",
    "warn": "yellow",
    "error": "red",
    "epoch": "magenta",
    "data": "green",
}


def _theme() -> Theme:
    return Theme(_STYLES)


def null_logger(command: str = "library") -> Logger:
    """Logger that discards everything; default for library calls."""
    return Logger(command=command, enable_human_logs=False, enable_file_logs=False, pretty=False)
