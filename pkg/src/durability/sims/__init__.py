"""Reference simulators speaking the external black-box protocol."""

from __future__ import annotations

import copy
import json
import sys

import numpy as np


def serve(initial, step, stdin=None, stdout=None) -> None:
    """Answer protocol requests until stdin closes.

    ``initial(gen)`` returns a fresh path state; ``step(state, gen)`` advances it
    in place and returns z.  Each path owns a numpy generator seeded from the
    reset message.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    paths = {}
    current = None

    def reply(obj):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    for line in stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        cmd = msg.get("cmd")
        if cmd == "init":
            paths.clear()
            current = None
            reply({"ok": True})
        elif cmd == "reset":
            gen = np.random.default_rng(int(msg.get("seed", 0)))
            parent = msg.get("parent")
            if parent is None:
                # a new root: earlier trees are finished
                paths.clear()
                state = initial(gen)
            else:
                state = copy.deepcopy(paths[parent][0])
            current = msg["path_id"]
            paths[current] = (state, gen)
            reply({"ok": True})
        elif cmd == "step":
            if current is None:
                state, gen = initial(np.random.default_rng(0)), np.random.default_rng(0)
                current = -1
                paths[current] = (state, gen)
            state, gen = paths[current]
            reply({"z": float(step(state, gen))})
        else:
            reply({"error": f"unknown command {cmd!r}"})
