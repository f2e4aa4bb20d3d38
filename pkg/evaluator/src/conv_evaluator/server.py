"""Line-JSON evaluation server.

Speaks the external-evaluator wire protocol on stdin/stdout, one JSON
object per line:

    -> {"type": "hello", "protocol": 1}
    <- {"type": "ready", "protocol": 1}
    -> {"type": "eval", "id": 7, "structure": [4, 8, 16], "seed": 42, "epochs": 2}
    <- {"type": "result", "id": 7, "fitness": 0.84, "metrics": {...}}
    <- {"type": "error", "id": 7, "message": "..."}       (instead of result)
    -> {"type": "shutdown"}                                (exit 0)

stdout carries protocol messages only; logs go to stderr. Malformed lines
and unknown message types get an error reply (id -1 when the request's id
is unrecoverable) and the loop continues; only shutdown or end-of-input
stops the server. Each eval trains the conv net from scratch with the
request's seed, so replies are deterministic per (structure, seed, epochs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence, TextIO

import torch

from . import PROTOCOL_VERSION
from .data import make_dataset
from .net import train_and_score

logger = logging.getLogger("conv-evaluator")


def _parse_widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}")
    if len(widths) != 3 or any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("widths must be three positive ints")
    return widths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conv-evaluator",
        description="Train a small conv net per eval request over line JSON.",
    )
    parser.add_argument("--widths", type=_parse_widths, default=(8, 16, 32),
                        help="base channel counts (default 8,16,32)")
    parser.add_argument("--epochs-cap", type=int, default=8,
                        help="upper bound on per-request training epochs")
    parser.add_argument("--train-size", type=int, default=256)
    parser.add_argument("--test-size", type=int, default=128)
    parser.add_argument("--dataset-seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=0.01)
    return parser


class Server:
    def __init__(self, args: argparse.Namespace, out: TextIO) -> None:
        self.widths = tuple(args.widths)
        self.epochs_cap = int(args.epochs_cap)
        self.lr = float(args.lr)
        self.out = out
        self.dataset = make_dataset(
            train_size=int(args.train_size),
            test_size=int(args.test_size),
            seed=int(args.dataset_seed),
        )

    def send(self, message: dict) -> None:
        self.out.write(json.dumps(message) + "\n")
        self.out.flush()

    def error(self, request_id: int, message: str) -> None:
        logger.warning("error reply (id %s): %s", request_id, message)
        self.send({"type": "error", "id": request_id, "message": message})

    def _validated_structure(self, value: object) -> Optional[Sequence[int]]:
        if not isinstance(value, list) or len(value) != len(self.widths):
            return None
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return None
        if any(v < 1 or v > base for v, base in zip(value, self.widths)):
            return None
        return value

    def handle_eval(self, msg: dict, request_id: int) -> None:
        structure = self._validated_structure(msg.get("structure"))
        if structure is None:
            self.error(
                request_id,
                f"structure must be {len(self.widths)} ints within "
                f"{list(self.widths)}, got {msg.get('structure')!r}",
            )
            return
        seed = msg.get("seed")
        epochs = msg.get("epochs")
        if not isinstance(seed, int) or isinstance(seed, bool):
            self.error(request_id, f"seed must be an int, got {seed!r}")
            return
        if not isinstance(epochs, int) or isinstance(epochs, bool) or epochs < 1:
            self.error(request_id, f"epochs must be a positive int, got {epochs!r}")
            return
        epochs = min(epochs, self.epochs_cap)
        try:
            fitness, metrics = train_and_score(
                self.dataset, structure, seed=seed, epochs=epochs, lr=self.lr
            )
        except Exception as exc:  # noqa: BLE001 - reply and keep serving
            logger.exception("training failed")
            self.error(request_id, f"training failed: {exc}")
            return
        self.send(
            {"type": "result", "id": request_id, "fitness": fitness,
             "metrics": metrics}
        )

    def handle_line(self, line: str) -> bool:
        """Process one request line; returns False when asked to shut down."""
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self.error(-1, f"not valid JSON: {exc}")
            return True
        if not isinstance(msg, dict):
            self.error(-1, "message must be a JSON object")
            return True
        request_id = msg.get("id")
        if not isinstance(request_id, int) or isinstance(request_id, bool):
            request_id = -1
        kind = msg.get("type")
        if kind == "hello":
            if msg.get("protocol") != PROTOCOL_VERSION:
                self.error(
                    request_id,
                    f"unsupported protocol {msg.get('protocol')!r} "
                    f"(this evaluator speaks {PROTOCOL_VERSION})",
                )
                return True
            self.send({"type": "ready", "protocol": PROTOCOL_VERSION})
            return True
        if kind == "eval":
            self.handle_eval(msg, request_id)
            return True
        if kind == "shutdown":
            return False
        self.error(request_id, f"unknown request type {kind!r}")
        return True


def serve(args: argparse.Namespace, stdin: TextIO, stdout: TextIO) -> int:
    # single-threaded, deterministic CPU training
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    server = Server(args, stdout)
    logger.info(
        "serving widths %s, epoch cap %d", server.widths, server.epochs_cap
    )
    for line in stdin:
        if not line.strip():
            continue
        if not server.handle_line(line):
            logger.info("shutdown requested")
            return 0
    logger.info("input closed; exiting")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    return serve(args, sys.stdin, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
