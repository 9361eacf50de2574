"""Single-shot sandboxed script executor.

Reads exactly one JSON request line from stdin, runs the code in a fresh
Python child process under CPU-time, wall-clock, and address-space
limits, and writes exactly one JSON response line to stdout. The process
exits 0 whenever the protocol was served, even if the user code failed;
nonzero exits are reserved for the runner's own crashes.

Wire protocol:
  request  {"code", "timeout_ms", "mem_limit_mb", "stdin_data", "deny_network"}
  response {"stdout", "stderr", "exit_code", "duration_ms", "truncated", "verdict"}
  verdict in {ok, nonzero_exit, timeout, mem_kill, runner_error}
"""

from __future__ import annotations

import json
import os
import resource
import signal
import subprocess
import sys
import tempfile
import time

OUTPUT_CAP = 64 * 1024  # bytes per stream

VERDICT_OK = "ok"
VERDICT_NONZERO = "nonzero_exit"
VERDICT_TIMEOUT = "timeout"
VERDICT_MEM_KILL = "mem_kill"
VERDICT_RUNNER_ERROR = "runner_error"

# runs inside the child: optional network denial, then the user code,
# compiled under a stable filename so tracebacks are readable
_BOOTSTRAP = """\
import sys
code_path, deny = sys.argv[1], sys.argv[2] == "1"
if deny:
    import socket

    def _denied(*args, **kwargs):
        raise OSError("network access denied by sandbox policy")

    socket.socket = _denied
    socket.create_connection = _denied
    socket.socketpair = _denied
with open(code_path, "r", encoding="utf-8") as fh:
    source = fh.read()
sys.argv = ["<sandbox>"]
exec(compile(source, "<sandbox>", "exec"), {"__name__": "__main__"})
"""

_NOBODY_UID = 65534


def _make_preexec(cpu_seconds: int, mem_bytes: int):
    def preexec():
        # limits first, then privileges: an unprivileged child cannot
        # raise its own hard limits back up
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
        os.setsid()
        if os.geteuid() == 0:
            try:
                os.setgroups([])
            except OSError:
                pass
            os.setgid(_NOBODY_UID)
            os.setuid(_NOBODY_UID)

    return preexec


def _cap(data: bytes) -> tuple[str, bool]:
    truncated = len(data) > OUTPUT_CAP
    return data[:OUTPUT_CAP].decode("utf-8", errors="replace"), truncated


def _response(stdout: str, stderr: str, exit_code: int, duration_ms: int, truncated: bool, verdict: str) -> dict:
    return {
        "stdout": stdout,
        "stderr": stderr,
        "exit_code": exit_code,
        "duration_ms": duration_ms,
        "truncated": truncated,
        "verdict": verdict,
    }


def _error(message: str, duration_ms: int = 0) -> dict:
    return _response("", message, -1, duration_ms, False, VERDICT_RUNNER_ERROR)


def _classify(returncode: int, stderr: str) -> str:
    if returncode in (-signal.SIGXCPU, -signal.SIGKILL):
        return VERDICT_TIMEOUT
    if returncode != 0 and "MemoryError" in stderr:
        return VERDICT_MEM_KILL
    if returncode != 0:
        return VERDICT_NONZERO
    return VERDICT_OK


def parse_request(line: str) -> tuple[dict | None, str | None]:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return None, f"request is not valid JSON: {exc.msg}"
    if not isinstance(req, dict):
        return None, "request must be a JSON object"
    code = req.get("code")
    if not isinstance(code, str) or not code:
        return None, "request is missing a non-empty 'code' string"
    timeout_ms = req.get("timeout_ms", 10000)
    mem_limit_mb = req.get("mem_limit_mb", 256)
    if not isinstance(timeout_ms, int) or timeout_ms <= 0:
        return None, "'timeout_ms' must be a positive integer"
    if not isinstance(mem_limit_mb, int) or mem_limit_mb <= 0:
        return None, "'mem_limit_mb' must be a positive integer"
    stdin_data = req.get("stdin_data")
    if stdin_data is not None and not isinstance(stdin_data, str):
        return None, "'stdin_data' must be a string when present"
    return (
        {
            "code": code,
            "timeout_ms": timeout_ms,
            "mem_limit_mb": mem_limit_mb,
            "stdin_data": stdin_data,
            "deny_network": bool(req.get("deny_network", True)),
        },
        None,
    )


def execute(req: dict) -> dict:
    """Run one request in a fresh limited child; always returns a response."""
    cpu_seconds = max(1, -(-req["timeout_ms"] // 1000))
    mem_bytes = req["mem_limit_mb"] * 1024 * 1024
    started = time.monotonic()

    with tempfile.TemporaryDirectory(prefix="sandbox-") as workdir:
        os.chmod(workdir, 0o777)
        code_path = os.path.join(workdir, "snippet.py")
        with open(code_path, "w", encoding="utf-8") as fh:
            fh.write(req["code"])
        os.chmod(code_path, 0o644)

        cmd = [
            sys.executable,
            "-I",
            "-c",
            _BOOTSTRAP,
            code_path,
            "1" if req["deny_network"] else "0",
        ]
        try:
            proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                preexec_fn=_make_preexec(cpu_seconds, mem_bytes),
            )
        except OSError as exc:
            return _error(f"could not spawn interpreter: {exc}")

        stdin_bytes = req["stdin_data"].encode("utf-8") if req["stdin_data"] else b""
        try:
            out, err = proc.communicate(input=stdin_bytes, timeout=req["timeout_ms"] / 1000.0)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            out, err = proc.communicate()
            duration_ms = max(int((time.monotonic() - started) * 1000), req["timeout_ms"])
            stdout, trunc_out = _cap(out)
            return _response(
                stdout,
                "wall-clock limit exceeded; process group killed",
                -signal.SIGKILL,
                duration_ms,
                trunc_out,
                VERDICT_TIMEOUT,
            )

    duration_ms = int((time.monotonic() - started) * 1000)
    stdout, trunc_out = _cap(out)
    stderr, trunc_err = _cap(err)
    return _response(
        stdout,
        stderr,
        proc.returncode,
        duration_ms,
        trunc_out or trunc_err,
        _classify(proc.returncode, stderr),
    )


def handle_line(line: str) -> dict:
    req, problem = parse_request(line)
    if req is None:
        return _error(problem)
    return execute(req)


def run_once(stdin=None, stdout=None) -> int:
    """Serve one request from stdin and emit one response line."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    line = stdin.readline()
    if not line.strip():
        response = _error("no request line on stdin")
    else:
        response = handle_line(line)
    stdout.write(json.dumps(response, sort_keys=True))
    stdout.write("\n")
    stdout.flush()
    return 0


SELF_TEST_CASES = [
    (
        "echo",
        json.dumps({"code": 'print("hi")'}),
        lambda r: r["verdict"] == VERDICT_OK and r["stdout"] == "hi\n" and r["exit_code"] == 0,
    ),
    (
        "memory bomb",
        json.dumps({"code": "x = bytearray(512 * 1024 * 1024)", "mem_limit_mb": 64, "timeout_ms": 10000}),
        lambda r: r["verdict"] == VERDICT_MEM_KILL,
    ),
    (
        "malformed request",
        json.dumps({"timeout_ms": 1000}),
        lambda r: r["verdict"] == VERDICT_RUNNER_ERROR,
    ),
]


def self_test() -> int:
    failures = 0
    for name, request_line, check in SELF_TEST_CASES:
        response = handle_line(request_line)
        ok = check(response)
        print(f"{'PASS' if ok else 'FAIL'}: {name} -> {response['verdict']}")
        if not ok:
            failures += 1
            print(f"  response: {json.dumps(response, sort_keys=True)}")
    return 1 if failures else 0


def main(argv=None) -> int:
    argv = argv if argv is not None else sys.argv[1:]
    if "--self-test" in argv:
        return self_test()
    return run_once()
