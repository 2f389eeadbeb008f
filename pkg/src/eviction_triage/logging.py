"""Logging configuration for eviction-triage.

Provides :func:`setup_logging` as the single entry point that configures two
handlers on the Python root logger:

- A :class:`JsonLinesFormatter`-backed :class:`logging.FileHandler` writing
  structured records, by default to
  ``~/.config/eviction-triage/logs/eviction-triage.log``.  Pipeline context
  passed through ``extra=`` (``stage``, ``split``, ``model``) is carried into
  each JSON object.
- A :class:`RichConsoleHandler` that prints human-readable output to stderr
  via :class:`rich.console.Console`.

.. note::
    This module is named ``logging.py`` inside the ``eviction_triage`` package.
    The stdlib module is imported under an alias as the very first statement so
    that it is never shadowed by this file.
"""

import json
import logging as _logging
from datetime import UTC, datetime
from pathlib import Path

from rich.console import Console

# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

_LOG_DIR: Path = Path("~/.config/eviction-triage/logs").expanduser()
_LOG_FILE: Path = _LOG_DIR / "eviction-triage.log"

# Attributes copied from ``extra=`` into the JSON payload when present.
_CONTEXT_FIELDS: tuple[str, ...] = ("stage", "split", "model")

# ---------------------------------------------------------------------------
# Custom formatter
# ---------------------------------------------------------------------------


class JsonLinesFormatter(_logging.Formatter):
    """Format each log record as a single-line JSON object.

    Output fields:
    - ``timestamp``: ISO 8601 UTC string ending in ``Z``
    - ``level``: uppercase level name
    - ``logger``: dotted logger name (e.g. ``"eviction_triage.features"``)
    - ``message``: the formatted log message string
    - ``stage`` / ``split`` / ``model``: only when supplied via ``extra=``
    """

    def format(self, record: _logging.LogRecord) -> str:
        """Return the record formatted as a JSON Lines string."""
        ts = datetime.fromtimestamp(record.created, tz=UTC).isoformat()
        if ts.endswith("+00:00"):
            ts = ts[:-6] + "Z"
        payload: dict[str, object] = {
            "timestamp": ts,
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for field in _CONTEXT_FIELDS:
            value = getattr(record, field, None)
            if value is not None:
                payload[field] = str(value)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload)


# ---------------------------------------------------------------------------
# Rich console handler
# ---------------------------------------------------------------------------


class RichConsoleHandler(_logging.Handler):
    """A :class:`logging.Handler` that emits plain text to stderr via Rich.

    Records carrying a ``stage`` attribute are prefixed with ``[stage]`` so
    that long experiment runs stay readable.
    """

    def __init__(self) -> None:
        super().__init__(level=_logging.DEBUG)
        self._console: Console = Console(stderr=True)

    def emit(self, record: _logging.LogRecord) -> None:
        """Print the log record as a plain text message to stderr."""
        try:
            msg = self.format(record)
            stage = getattr(record, "stage", None)
            if stage is not None:
                msg = f"[{stage}] {msg}"
            self._console.print(msg, markup=False, highlight=False)
        except Exception:
            self.handleError(record)


# ---------------------------------------------------------------------------
# Public entry point
# ---------------------------------------------------------------------------


def setup_logging(verbose: bool, log_file: Path | None = None) -> None:
    """Configure application-wide logging.

    Parameters
    ----------
    verbose:
        When ``True`` the root logger level is set to ``logging.DEBUG``;
        otherwise it is set to ``logging.INFO``.
    log_file:
        Destination of the JSON Lines file.  Defaults to the per-user log file
        under ``~/.config/eviction-triage/logs``.  Parent directories are
        created as needed.
    """
    target = log_file if log_file is not None else _LOG_FILE
    target.parent.mkdir(parents=True, exist_ok=True)

    root = _logging.getLogger()
    root.setLevel(_logging.DEBUG if verbose else _logging.INFO)

    # Repeated calls (tests, `run` after `generate`) must not duplicate output.
    for handler in list(root.handlers):
        handler.close()
    root.handlers.clear()

    file_handler = _logging.FileHandler(target, encoding="utf-8")
    file_handler.setLevel(_logging.DEBUG)
    file_handler.setFormatter(JsonLinesFormatter())
    root.addHandler(file_handler)

    root.addHandler(RichConsoleHandler())
