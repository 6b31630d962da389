"""Command-line entry points.

    scorer-bridge serve --gallery DIR --listen stdio|tcp:PORT [--temperature T]
    scorer-bridge extract-mask IN OUT [--landmarks points.json]

Exit codes: 0 success, 1 usage or config error (bad gallery, missing
landmark sidecar, malformed landmarks), 4 no face detected. Set
SCORER_BRIDGE_LOG=DEBUG|INFO|... for stderr logging; serve defaults to
INFO so each query is logged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .embed import DEFAULT_TEMPERATURE
from .errors import BridgeError, NoFaceDetected
from .landmarks import extract_face_mask
from .server import ScorerServer, TcpServer


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="scorer-bridge", description="reference wire-protocol face scorer")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="answer hello/score requests for one gallery")
    s.add_argument("--gallery", required=True, help="directory of <label>.pgm/.png")
    s.add_argument(
        "--listen", default="stdio", help="stdio (default) or tcp:PORT (port 0 = ephemeral)"
    )
    s.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    s.set_defaults(func=cmd_serve)

    e = sub.add_parser("extract-mask", help="turn 81 landmarks into a face mask PGM")
    e.add_argument("image", help="face image (PGM/PNG)")
    e.add_argument("out", help="output mask path (.pgm/.png)")
    e.add_argument(
        "--landmarks",
        help="landmark sidecar JSON (default: <image>.landmarks.json)",
    )
    e.set_defaults(func=cmd_extract)

    return p


def cmd_serve(args) -> int:
    try:
        server = ScorerServer(args.gallery, args.temperature)
    except (BridgeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.listen == "stdio":
        server.serve_stdio()
        return 0
    if args.listen.startswith("tcp:"):
        try:
            port = int(args.listen[4:])
        except ValueError:
            print(f"error: bad port in {args.listen!r}", file=sys.stderr)
            return 1
        tcp = TcpServer(server, port=port)
        # announced on stdout so callers binding port 0 can discover it
        print(f"listening tcp:{tcp.host}:{tcp.port}", flush=True)
        tcp.serve_forever()
        return 0
    print(f"error: --listen must be stdio or tcp:PORT, got {args.listen!r}", file=sys.stderr)
    return 1


def cmd_extract(args) -> int:
    try:
        extract_face_mask(args.image, args.out, args.landmarks)
    except NoFaceDetected as exc:
        print(f"no face: {exc}", file=sys.stderr)
        return 4
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    level = os.environ.get("SCORER_BRIDGE_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
