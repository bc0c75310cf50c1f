"""Aligned console output for the impactlab commands.

Produces the aligned key-value output used by every subcommand.
Separates presentation from the analysis code.
"""

import logging
import sys

from .constants import TOOL_NAME, VERSION

logger = logging.getLogger(__name__)


class OutputFormatter:
    """Console writer shared by the pipeline and the single-step commands.

    Produces aligned key-value pairs:
        impactlab v1.0.0
        Command:    run
        Stocks:     8
        replay:     done (1.2s)
        Result:     ✅ bundle written to out/

    Args:
        verbose: Whether `verbose()` lines are shown.
        stream: Destination for regular output (defaults to stdout).
    """

    LABEL_WIDTH: int = 12

    def __init__(self, verbose: bool = False, stream=None) -> None:
        self._verbose = verbose
        self._stream = stream

    def header(self, command: str) -> None:
        """Prints the tool header with version and the running command.

        Args:
            command: The subcommand being executed.
        """
        self._print(f"{TOOL_NAME} v{VERSION}")
        self._field("Command", command)

    def field(self, label: str, value: object) -> None:
        """Prints one aligned `Label: value` line.

        Args:
            label: The field label (e.g. 'Stocks', 'Events').
            value: Any value; printed with `str()`.
        """
        self._field(label, str(value))

    def stage(self, name: str, status: str, elapsed: float | None = None) -> None:
        """Prints the status line of a pipeline stage.

        Args:
            name: Stage name.
            status: "done", "cached" or "skipped".
            elapsed: Wall-clock seconds, when measured.
        """
        suffix = f" ({elapsed:.1f}s)" if elapsed is not None else ""
        self._field(name, f"{status}{suffix}")

    def result(self, message: str) -> None:
        """Prints the closing `Result:` line of a successful command.

        Args:
            message: What was produced, e.g. the bundle location.
        """
        self._field("Result", f"✅ {message}")

    def error(self, message: str) -> None:
        """Prints an aligned `Error:` line on stderr.

        Args:
            message: Error text, usually the exception message.
        """
        print(f"{'Error:'.ljust(self.LABEL_WIDTH)}{message}", file=sys.stderr)

    def verbose(self, message: str) -> None:
        """Prints a bracketed detail line under `--verbose` and logs it at DEBUG.

        Args:
            message: Detail text.
        """
        if self._verbose:
            self._print(f"  [{message}]")
            logger.debug(message)

    def _field(self, label: str, value: str) -> None:
        padded_label = f"{label}:".ljust(self.LABEL_WIDTH)
        self._print(f"{padded_label}{value}")

    def _print(self, message: str) -> None:
        print(message, file=self._stream if self._stream is not None else sys.stdout)
