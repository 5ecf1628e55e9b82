"""Adapter for black-box simulators running as child processes.

Newline-delimited JSON over the child's stdin/stdout:

    {"cmd": "init", "seed": S}                        -> {"ok": true}
    {"cmd": "reset", "path_id": P, "seed": K}         -> {"ok": true}
    {"cmd": "reset", "path_id": P, "parent": Q, "seed": K} -> {"ok": true}
    {"cmd": "step", "t": T}                           -> {"z": <float>}

``reset`` without a parent starts a fresh path at the initial state; with a
parent it starts a new path from a copy of path Q's current state, which is
how split offspring are created.  Steps always apply to the most recently
reset path.  Every request gets exactly one response line.
"""

from __future__ import annotations

import json
import math
import selectors
import subprocess
import time

import numpy as np

from . import rng
from .models import ExternalBlackBox, ProcessState, StepBudget


class ExternalSimulatorError(RuntimeError):
    """Protocol violation, timeout or exit of the simulator; ``payload`` holds the raw line."""

    def __init__(self, message: str, payload=None):
        super().__init__(message if payload is None else f"{message}: {payload!r}")
        self.payload = payload


class ExternalSession:
    def __init__(self, spec: ExternalBlackBox, budget: StepBudget | None = None):
        spec.validate()
        self.spec = spec
        self.budget = budget
        self.proc = None
        self.path_id = -1
        self._next_id = 0
        self._buf = b""
        self._sel = None

    # -- process management

    def open(self) -> "ExternalSession":
        try:
            self.proc = subprocess.Popen(list(self.spec.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise ExternalSimulatorError(f"cannot launch simulator {self.spec.command!r}: {exc}") from exc
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        reply = self._request({"cmd": "init", "seed": int(self.spec.seed)})
        if reply != {"ok": True}:
            raise ExternalSimulatorError("bad handshake reply", reply)
        return self

    def close(self) -> None:
        if self.proc is None:
            return
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self._sel.close()
        self.proc.stdout.close()
        self.proc = None

    def __enter__(self):
        return self.open()

    def __exit__(self, *exc):
        self.close()

    # -- wire level

    def _readline(self) -> bytes:
        deadline = time.monotonic() + self.spec.timeout
        while b"\n" not in self._buf:
            left = deadline - time.monotonic()
            if left <= 0 or not self._sel.select(left):
                raise ExternalSimulatorError(f"simulator did not answer within {self.spec.timeout}s", self._buf)
            chunk = self.proc.stdout.read1(65536)
            if not chunk:
                code = self.proc.poll()
                raise ExternalSimulatorError(f"simulator exited (code {code})", self._buf)
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _request(self, msg: dict):
        if self.proc is None:
            raise ExternalSimulatorError("session is not open")
        try:
            self.proc.stdin.write((json.dumps(msg) + "\n").encode())
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ExternalSimulatorError(f"simulator pipe closed: {exc}") from exc
        raw = self._readline()
        try:
            return json.loads(raw)
        except ValueError:
            raise ExternalSimulatorError("malformed response", raw.decode(errors="replace")) from None

    # -- protocol operations

    def reset(self, parent: int | None = None, seed: int = 0) -> int:
        pid = self._next_id
        self._next_id += 1
        msg = {"cmd": "reset", "path_id": pid, "seed": int(seed)}
        if parent is not None:
            msg["parent"] = int(parent)
        reply = self._request(msg)
        if reply != {"ok": True}:
            raise ExternalSimulatorError("bad reset reply", reply)
        self.path_id = pid
        return pid

    def step_z(self, t: int) -> float:
        if self.budget is not None:
            self.budget.charge(1)
        reply = self._request({"cmd": "step", "t": int(t)})
        if not isinstance(reply, dict) or set(reply) != {"z"}:
            raise ExternalSimulatorError("step reply must be an object with exactly the key 'z'", reply)
        z = reply["z"]
        if isinstance(z, bool) or not isinstance(z, (int, float)) or not math.isfinite(z):
            raise ExternalSimulatorError("step reply 'z' is not a finite number", reply)
        return float(z)

    # -- sampler kernel hooks (same signatures as the compiled built-ins)

    def kernel_step(self, model, state, key, ctr):
        t = int(state[0]) + 1
        state[1] = self.step_z(t)
        state[0] = t
        return np.uint64(ctr) + np.uint64(1)

    def kernel_fork(self, model, state, handle, key, ctr):
        seed = int(rng.derive(np.uint64(key), np.uint64(ctr))) & 0x7FFF_FFFF_FFFF_FFFF
        self.reset(None if handle < 0 else int(handle), seed)
        return 0

    def kernel_snapshot(self, model, state):
        return self.path_id


def external_step(session: ExternalSession, t: int) -> ProcessState:
    """One protocol round trip on the current path; costs one budget unit."""
    z = session.step_z(t)
    return ProcessState(int(t), z, (0.0,))
