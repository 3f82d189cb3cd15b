"""Wire-protocol client for training loops measured by the traineff harness.

Wrap your per-epoch hook with an :class:`AdapterSession`: call
``on_epoch_end(train_acc, eval_acc)`` after every epoch and check
``poll_stop()`` between epochs to honor the harness's cooperative stop
command.  The adapter owns standard output — everything it writes parses
under the harness protocol grammar — so all framework logging must go to
standard error (enforced at session start for the stdlib logging module).

No ML-framework dependency; measurement stays on the harness side.
"""

from __future__ import annotations

import json
import logging
import sys
import threading

__all__ = ["AdapterSession", "AdapterStopped", "ProtocolWriteError"]
__version__ = "0.1.0"


class AdapterStopped(Exception):
    """Raised when an epoch event is emitted after the harness requested stop."""


class ProtocolWriteError(Exception):
    pass


def _redirect_stdout_logging() -> None:
    # Any stdlib logging handler aimed at stdout would corrupt the protocol
    # stream; retarget those handlers to stderr.
    for logger in [logging.getLogger()] + list(logging.Logger.manager.loggerDict.values()):
        if not isinstance(logger, logging.Logger):
            continue
        for handler in logger.handlers:
            if isinstance(handler, logging.StreamHandler) and handler.stream is sys.stdout:
                handler.setStream(sys.stderr)


class AdapterSession:
    """One protocol session: contiguous epoch events out, stop command in.

    A background reader watches standard input for ``{"cmd": "stop"}`` and
    sets an atomic flag; malformed command lines are logged to stderr and
    ignored.  After stop is requested, emitting another epoch event raises
    (never silently drops).
    """

    def __init__(self, stdout=None, stdin=None, enforce_stderr_logging: bool = True):
        self._out = stdout if stdout is not None else sys.stdout
        self._in = stdin if stdin is not None else sys.stdin
        self.current_epoch = 0
        self._stop = threading.Event()
        if enforce_stderr_logging:
            _redirect_stdout_logging()
        self._reader = threading.Thread(target=self._watch_stdin, daemon=True)
        self._reader.start()

    def _watch_stdin(self) -> None:
        for line in self._in:
            line = line.strip()
            if not line:
                continue
            try:
                cmd = json.loads(line)
            except json.JSONDecodeError:
                print(f"traineff-adapter: ignoring malformed command line: {line[:80]!r}",
                      file=sys.stderr)
                continue
            if isinstance(cmd, dict) and cmd.get("cmd") == "stop":
                self._stop.set()
                return

    def _write(self, obj: dict) -> None:
        try:
            self._out.write(json.dumps(obj) + "\n")
            self._out.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolWriteError(str(exc)) from exc

    def on_epoch_end(self, train_acc: float, eval_acc: float) -> None:
        """Emit one epoch_end event; epochs are numbered contiguously from 0."""
        if self._stop.is_set():
            raise AdapterStopped(
                f"stop was requested; epoch {self.current_epoch} must not be emitted"
            )
        for name, acc in (("train_acc", train_acc), ("eval_acc", eval_acc)):
            if not (0.0 <= acc <= 1.0):
                raise ValueError(f"{name} out of [0, 1]: {acc}")
        self._write({"event": "epoch_end", "epoch": self.current_epoch,
                     "train_acc": train_acc, "eval_acc": eval_acc})
        self.current_epoch += 1

    def poll_stop(self) -> bool:
        """Non-blocking: has the harness requested termination?"""
        return self._stop.is_set()

    def log(self, message: str) -> None:
        """Protocol-conformant free-text log line."""
        self._write({"event": "log", "message": message})

    def final(self, train_acc: float, eval_acc: float) -> None:
        """Emit the closing final event (allowed after stop)."""
        self._write({"event": "final", "train_acc": train_acc, "eval_acc": eval_acc})
