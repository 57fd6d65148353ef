"""Reference child for the JSON-lines evaluation protocol.

Fitness is the number of horizontal-actuator cells ('H') in the design. Flags
inject the failure modes the parent has to cope with::

    python -m herd.echo_evaluator [--reverse N] [--error-id ID] [--hang-id ID]
                                  [--malformed-id ID] [--exit-after N]
                                  [--crash-once FILE]
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time


def fitness(design: dict) -> float:
    return float(design["cells"].count("H"))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="herd-echo-evaluator")
    ap.add_argument("--reverse", type=int, default=1, help="buffer N requests and answer them in reverse order")
    ap.add_argument("--error-id", type=int, action="append", default=[])
    ap.add_argument("--hang-id", type=int, action="append", default=[])
    ap.add_argument("--malformed-id", type=int, action="append", default=[])
    ap.add_argument("--exit-after", type=int, default=None, help="exit after answering N requests")
    ap.add_argument("--crash-once", default=None, help="exit after one answer unless FILE exists; creates FILE")
    ap.add_argument("--delay", type=float, default=0.0)
    args = ap.parse_args(argv)

    exit_after = args.exit_after
    if args.crash_once and not os.path.exists(args.crash_once):
        open(args.crash_once, "w").close()
        exit_after = 1

    answered = 0
    buffer: list[dict] = []
    for line in sys.stdin:
        if not line.strip():
            continue
        buffer.append(json.loads(line))
        if len(buffer) < args.reverse:
            continue
        for req in reversed(buffer):
            rid = req["id"]
            if rid in args.hang_id:
                continue
            if args.delay:
                time.sleep(args.delay)
            if rid in args.malformed_id:
                out = "{not json"
            elif rid in args.error_id:
                out = json.dumps({"id": rid, "error": "sim crash"})
            else:
                out = json.dumps({"id": rid, "fitness": fitness(req["design"])})
            sys.stdout.write(out + "\n")
            sys.stdout.flush()
            answered += 1
            if exit_after is not None and answered >= exit_after:
                return 0
        buffer.clear()
    return 0


if __name__ == "__main__":
    sys.exit(main())
