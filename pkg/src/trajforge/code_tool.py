"""Client side of the sandboxed code tool.

Observations for every other tool are simulated; code-tool calls run
real code in an external single-shot runner process. The wire protocol
is one JSON request line on the runner's stdin and one JSON response
line on its stdout. A stub executor ships so the rest of the pipeline
(and its whole test suite) works with no runner installed.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import time
from dataclasses import dataclass
from typing import Callable, Optional

CODE_TOOL_NAME = "run_python"
OUTPUT_CAP_BYTES = 64 * 1024
WATCHDOG_GRACE_MS = 1000

VERDICT_OK = "ok"
VERDICT_NONZERO = "nonzero_exit"
VERDICT_TIMEOUT = "timeout"
VERDICT_MEM_KILL = "mem_kill"
VERDICT_RUNNER_ERROR = "runner_error"

VERDICTS = {VERDICT_OK, VERDICT_NONZERO, VERDICT_TIMEOUT, VERDICT_MEM_KILL, VERDICT_RUNNER_ERROR}


def code_tool_schema() -> dict:
    """Interface schema advertised to the assistant when injected."""
    return {
        "name": CODE_TOOL_NAME,
        "description": (
            "Execute a self-contained Python snippet in an isolated sandbox and "
            "return its stdout/stderr. Use it for computations the other tools "
            "cannot do: sorting, filtering, arithmetic, aggregation, parsing."
        ),
        "parameters": {
            "type": "object",
            "properties": {
                "code": {"type": "string", "description": "Python source to execute"},
                "stdin_data": {"type": "string", "description": "Optional text piped to stdin"},
            },
            "required": ["code"],
        },
    }


@dataclass
class CodeExecRequest:
    code: str
    timeout_ms: int = 10000
    mem_limit_mb: int = 256
    stdin_data: Optional[str] = None
    deny_network: bool = True

    def __post_init__(self):
        if not self.code:
            raise ValueError("code must be non-empty")
        if self.timeout_ms <= 0 or self.mem_limit_mb <= 0:
            raise ValueError("limits must be positive")

    def to_wire(self) -> dict:
        return {
            "code": self.code,
            "timeout_ms": self.timeout_ms,
            "mem_limit_mb": self.mem_limit_mb,
            "stdin_data": self.stdin_data,
            "deny_network": self.deny_network,
        }


@dataclass
class CodeExecResult:
    stdout: str
    stderr: str
    exit_code: int
    duration_ms: int
    truncated: bool
    verdict: str

    @classmethod
    def from_wire(cls, d: dict) -> "CodeExecResult":
        verdict = d.get("verdict")
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        if verdict == VERDICT_OK and int(d.get("exit_code", -1)) != 0:
            raise ValueError("verdict ok with nonzero exit_code")
        return cls(
            stdout=d.get("stdout", ""),
            stderr=d.get("stderr", ""),
            exit_code=int(d.get("exit_code", -1)),
            duration_ms=int(d.get("duration_ms", 0)),
            truncated=bool(d.get("truncated", False)),
            verdict=verdict,
        )


def runner_error_result(message: str, duration_ms: int = 0) -> CodeExecResult:
    return CodeExecResult(
        stdout="",
        stderr=message,
        exit_code=-1,
        duration_ms=duration_ms,
        truncated=False,
        verdict=VERDICT_RUNNER_ERROR,
    )


class StubExecutor:
    """Scripted request->result table; no interpreter involved.

    Unknown code falls through to a canned default so offline pipeline
    runs stay deterministic. Tests and the scripted backend register the
    snippets they expect.
    """

    def __init__(self, table: Optional[dict[str, CodeExecResult]] = None):
        self.table = dict(table or {})

    def register(self, code: str, result: CodeExecResult) -> None:
        self.table[code] = result

    def execute(self, req: CodeExecRequest) -> CodeExecResult:
        hit = self.table.get(req.code)
        if hit is not None:
            return hit
        return CodeExecResult(
            stdout="",
            stderr="stub executor has no scripted result for this snippet",
            exit_code=1,
            duration_ms=1,
            truncated=False,
            verdict=VERDICT_NONZERO,
        )


class CodeToolClient:
    """Spawns one runner process per execution and exchanges one JSON line.

    A client-side watchdog at timeout_ms + grace guarantees a hung or
    crashed runner never stalls the pipeline: the process is killed and
    the call reports a timeout/runner_error verdict instead.
    """

    def __init__(
        self,
        runner_cmd: Optional[list[str]] = None,
        stub: Optional[StubExecutor] = None,
        watchdog_grace_ms: int = WATCHDOG_GRACE_MS,
    ):
        if runner_cmd is None and stub is None:
            raise ValueError("configure either a runner command or a stub executor")
        self.runner_cmd = runner_cmd
        self.stub = stub
        self.watchdog_grace_ms = watchdog_grace_ms

    @classmethod
    def from_config(cls, cfg: dict) -> "CodeToolClient":
        mode = cfg.get("mode", "stub")
        if mode == "stub":
            return cls(stub=StubExecutor())
        if mode == "runner":
            cmd = cfg.get("command")
            if isinstance(cmd, str):
                cmd = shlex.split(cmd)
            if not cmd:
                raise ValueError("runner mode needs a 'command'")
            return cls(runner_cmd=list(cmd))
        raise ValueError(f"unknown code tool mode {mode!r}")

    def execute(self, req: CodeExecRequest) -> CodeExecResult:
        if self.stub is not None:
            return self.stub.execute(req)
        return self._execute_subprocess(req)

    def _execute_subprocess(self, req: CodeExecRequest) -> CodeExecResult:
        started = time.monotonic()
        deadline_s = (req.timeout_ms + self.watchdog_grace_ms) / 1000.0
        try:
            proc = subprocess.Popen(
                self.runner_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            return runner_error_result(f"runner spawn failed: {exc}")

        try:
            out, err = proc.communicate(
                input=json.dumps(req.to_wire()) + "\n", timeout=deadline_s
            )
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
            elapsed_ms = int((time.monotonic() - started) * 1000)
            return CodeExecResult(
                stdout="",
                stderr="runner watchdog fired; process killed",
                exit_code=-9,
                duration_ms=max(elapsed_ms, req.timeout_ms),
                truncated=False,
                verdict=VERDICT_TIMEOUT,
            )

        elapsed_ms = int((time.monotonic() - started) * 1000)
        line = out.strip().splitlines()[-1] if out.strip() else ""
        if not line:
            return runner_error_result(
                f"runner produced no response (stderr: {err.strip()[:500]})", elapsed_ms
            )
        try:
            return CodeExecResult.from_wire(json.loads(line))
        except (json.JSONDecodeError, ValueError) as exc:
            return runner_error_result(
                f"malformed runner reply ({exc}); raw payload: {line[:500]}", elapsed_ms
            )


def to_observation(result: CodeExecResult) -> dict:
    """Canonical observation object appended to the trajectory."""
    return {
        "verdict": result.verdict,
        "stdout": result.stdout,
        "stderr": result.stderr,
        "exit_code": result.exit_code,
        "duration_ms": result.duration_ms,
        "truncated": result.truncated,
    }


ExecuteFn = Callable[[CodeExecRequest], CodeExecResult]
