"""Benchmark objectives and black-box adapters.

Built-in synthetic functions (Branin-Hoo, six-hump camelback, Hartmann-6)
with constants pinned in a data file and guarded by an optimum self-test,
a direction wrapper so the search loop always maximizes, and a line-JSON
subprocess adapter for external ground truths.
"""

from __future__ import annotations

import json
import math
import os
import select
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable

import numpy as np

__all__ = [
    "Direction",
    "Objective",
    "ObjectiveError",
    "branin",
    "camelback",
    "hartmann6",
    "builtin_objective",
    "builtin_names",
    "as_internal_max",
    "subprocess_objective",
    "SubprocessWorker",
    "self_test",
]


class Direction(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class ObjectiveError(RuntimeError):
    """An objective evaluation failed (child error, bad response, timeout)."""


@dataclass(frozen=True, eq=False)
class Objective:
    """A black-box target: name, box bounds, direction, and evaluator."""

    name: str
    dimension: int
    bounds: tuple[tuple[float, float], ...]
    direction: Direction
    evaluator: Callable[[np.ndarray], float] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.dimension:
            raise ValueError(
                f"{self.dimension}-dimensional objective with {len(bounds)} bounds"
            )
        if any(lo >= hi for lo, hi in bounds):
            raise ValueError("bounds must satisfy lower < upper in every dimension")
        object.__setattr__(self, "bounds", bounds)

    def __eq__(self, other):
        if not isinstance(other, Objective):
            return NotImplemented
        return (
            self.name == other.name
            and self.dimension == other.dimension
            and self.bounds == other.bounds
            and self.direction == other.direction
        )

    def __call__(self, x) -> float:
        return float(self.evaluator(np.asarray(x, dtype=float)))


def _constants() -> dict:
    with resources.files("ctxbo.data").joinpath("benchmarks.json").open() as fh:
        return json.load(fh)


_BENCH = _constants()


def branin(x) -> float:
    """Branin-Hoo function (2D, minimization)."""
    x1, x2 = float(x[0]), float(x[1])
    c = _BENCH["branin"]
    inner = x2 - c["b"] * x1**2 + c["c"] * x1 - c["r"]
    return c["a"] * inner**2 + c["s"] * (1.0 - c["t"]) * math.cos(x1) + c["s"]


def camelback(x) -> float:
    """Six-hump camelback function (2D, minimization)."""
    x1, x2 = float(x[0]), float(x[1])
    return (
        (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2
        + x1 * x2
        + (-4.0 + 4.0 * x2**2) * x2**2
    )


def hartmann6(x) -> float:
    """Hartmann-6 in maximization form (negated standard 4-term sum)."""
    c = _BENCH["hartmann6"]
    a = np.asarray(c["A"])
    p = np.asarray(c["P"])
    alpha = np.asarray(c["alpha"])
    x = np.asarray(x, dtype=float)
    exponents = np.sum(a * (x - p) ** 2, axis=1)
    return float(np.sum(alpha * np.exp(-exponents)))


_EVALUATORS = {"branin": branin, "camelback": camelback, "hartmann6": hartmann6}


def builtin_names() -> tuple[str, ...]:
    return tuple(_EVALUATORS)


def builtin_objective(name: str) -> Objective:
    """One of the built-in synthetic benchmarks, by name."""
    if name not in _EVALUATORS:
        raise ValueError(
            f"unknown objective {name!r}; built-ins are {', '.join(_EVALUATORS)}"
        )
    spec = _BENCH[name]
    bounds = tuple(tuple(b) for b in spec["bounds"])
    return Objective(
        name=name,
        dimension=len(bounds),
        bounds=bounds,
        direction=Direction(spec["direction"]),
        evaluator=_EVALUATORS[name],
    )


def as_internal_max(obj: Objective) -> Objective:
    """Wrap a minimization objective so the search loop can always
    maximize; maximization objectives pass through unchanged."""
    if obj.direction is Direction.MAXIMIZE:
        return obj
    inner = obj.evaluator
    return Objective(
        name=obj.name,
        dimension=obj.dimension,
        bounds=obj.bounds,
        direction=Direction.MAXIMIZE,
        evaluator=lambda x: -float(inner(x)),
    )


class SubprocessWorker:
    """Line-JSON bridge to an external evaluator process.

    One request per evaluation: ``{"x": [...]}\\n`` on the child's stdin,
    one ``{"y": <float>}\\n`` line back on its stdout.  The child stays
    alive across evaluations and is respawned after a failure.
    """

    def __init__(self, command: str, timeout: float = 300.0):
        self.command = command
        self.timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        self._buf = bytearray()
        self._stderr_file = None

    def _spawn(self):
        self._stderr_file = tempfile.TemporaryFile()
        self._proc = subprocess.Popen(
            shlex.split(self.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=self._stderr_file,
        )
        self._buf = bytearray()

    def _stderr_tail(self) -> str:
        if self._stderr_file is None:
            return ""
        try:
            self._stderr_file.seek(0)
            return self._stderr_file.read().decode("utf-8", "replace")[-2000:]
        except (OSError, ValueError):
            return ""

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        if self._stderr_file is not None:
            self._stderr_file.close()
            self._stderr_file = None

    def __del__(self):
        self.close()

    def _fail(self, message: str) -> ObjectiveError:
        detail = self._stderr_tail()
        code = self._proc.poll() if self._proc is not None else None
        self.close()
        if code is not None:
            message += f" (child exit code {code})"
        if detail:
            message += f"; child stderr: {detail.strip()}"
        return ObjectiveError(message)

    def _read_line(self, deadline: float) -> bytes:
        import time

        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise self._fail(f"objective timed out after {self.timeout} s")
            ready, _, _ = select.select([self._proc.stdout], [], [], remaining)
            if not ready:
                raise self._fail(f"objective timed out after {self.timeout} s")
            chunk = os.read(self._proc.stdout.fileno(), 4096)
            if not chunk:
                raise self._fail("objective child closed its output")
            self._buf.extend(chunk)
        line, _, rest = bytes(self._buf).partition(b"\n")
        self._buf = bytearray(rest)
        return line

    def evaluate(self, x) -> float:
        import time

        if self._proc is None or self._proc.poll() is not None:
            self.close()
            self._spawn()
        request = json.dumps({"x": [float(v) for v in np.asarray(x).ravel()]})
        try:
            self._proc.stdin.write(request.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise self._fail("objective child rejected the request") from None
        line = self._read_line(time.monotonic() + self.timeout)
        try:
            payload = json.loads(line.decode("utf-8"))
            value = float(payload["y"])
        except (ValueError, KeyError, TypeError):
            raise self._fail(
                f"malformed objective response {line!r}; expected "
                '{"y": <number>}'
            ) from None
        return value


def subprocess_objective(
    command: str,
    dimension: int,
    bounds,
    direction: Direction | str,
    timeout: float = 300.0,
    name: str = "external",
) -> Objective:
    """Objective backed by an external process speaking the line-JSON
    protocol.  Evaluation errors raise ObjectiveError; the search loop
    aborts a run after three consecutive failures."""
    worker = SubprocessWorker(command, timeout=timeout)
    return Objective(
        name=name,
        dimension=int(dimension),
        bounds=tuple(tuple(b) for b in bounds),
        direction=Direction(direction),
        evaluator=worker.evaluate,
    )


def self_test() -> list[tuple[str, bool, str]]:
    """Re-verify every built-in optimum by evaluation.

    Returns (check name, passed, detail) triples; transcription errors in
    the pinned constants show up here.
    """
    tolerances = {"branin": 1e-5, "camelback": 1e-3, "hartmann6": 1e-4}
    results = []
    for name, tol in tolerances.items():
        obj = builtin_objective(name)
        expected = _BENCH[name]["optimum_value"]
        for loc in _BENCH[name]["optima"]:
            got = obj(np.asarray(loc))
            ok = abs(got - expected) <= tol
            results.append(
                (
                    f"{name} optimum at {tuple(loc)}",
                    ok,
                    f"value {got:.8g}, expected {expected:.8g} +/- {tol:g}",
                )
            )
    return results
