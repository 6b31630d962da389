"""Line-delimited JSON scoring server.

One request per line, one reply per line, strictly 1:1 so clients can pair
them without framing beyond the newline. Malformed input of any kind gets
an {"error": ...} reply and the loop continues; nothing a client sends can
take the process down.

    -> {"cmd": "hello"}
    <- {"labels": ["alice", "bob", ...]}
    -> {"cmd": "score", "probe": "<base64 PGM bytes>", "gallery": "default"}
    <- {"probs": {"alice": 0.9, "bob": 0.1}}
    <- {"error": "<message>"}                            on any failure

Transports: stdio (serve_stdio) and TCP (TcpServer), one request in flight
per connection, any number of concurrent connections.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import socket
import threading

from .embed import DEFAULT_TEMPERATURE, GalleryScorer, block_embed
from .errors import BridgeError
from .images import decode_image_bytes, load_gallery

log = logging.getLogger("scorer_bridge")

GALLERY_NAME = "default"


class ScorerServer:
    """Protocol state machine around one gallery; transport-agnostic."""

    def __init__(self, gallery_dir, temperature: float = DEFAULT_TEMPERATURE, embed=block_embed):
        self.scorer = GalleryScorer(load_gallery(gallery_dir), temperature, embed)
        self._queries = 0

    @property
    def query_count(self) -> int:
        return self._queries

    def handle_request(self, line) -> dict:
        """One reply object for one raw request line. Never raises."""
        try:
            return self._dispatch(line)
        except BridgeError as exc:
            return {"error": str(exc)}
        except Exception as exc:  # malformed input must never kill the loop
            return {"error": f"internal: {exc}"}

    def _dispatch(self, line) -> dict:
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        line = line.strip()
        if not line:
            return {"error": "empty request"}
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            return {"error": "request is not valid JSON"}
        if not isinstance(doc, dict):
            return {"error": "request must be a JSON object"}
        cmd = doc.get("cmd")
        if cmd == "hello":
            return {"labels": self.scorer.labels}
        if cmd == "score":
            return self._score(doc)
        return {"error": f"unknown command {cmd!r}"}

    def _score(self, doc: dict) -> dict:
        gallery = doc.get("gallery", GALLERY_NAME)
        if gallery != GALLERY_NAME:
            return {"error": f"unknown gallery {gallery!r}, this server has {GALLERY_NAME!r}"}
        probe = doc.get("probe")
        if not isinstance(probe, str):
            return {"error": "score request needs a base64 string in 'probe'"}
        try:
            blob = base64.b64decode(probe, validate=True)
        except (binascii.Error, ValueError):
            return {"error": "probe is not valid base64"}
        pixels = decode_image_bytes(blob)
        probs = self.scorer.probabilities(pixels)
        self._queries += 1
        log.info("query %d: %dx%d probe", self._queries, pixels.shape[1], pixels.shape[0])
        return {"probs": probs}

    def handle_line(self, line) -> bytes:
        return json.dumps(self.handle_request(line), separators=(",", ":")).encode() + b"\n"

    def serve_stdio(self, stdin=None, stdout=None) -> None:
        """Blocking request loop over binary streams; returns at EOF."""
        import sys

        stdin = stdin if stdin is not None else sys.stdin.buffer
        stdout = stdout if stdout is not None else sys.stdout.buffer
        for line in iter(stdin.readline, b""):
            stdout.write(self.handle_line(line))
            stdout.flush()

    def serve_connection(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rb") as reader:
            for line in iter(reader.readline, b""):
                try:
                    conn.sendall(self.handle_line(line))
                except OSError:
                    return


class TcpServer:
    """Listener wrapper: accept loop, one daemon thread per connection."""

    def __init__(self, server: ScorerServer, host: str = "127.0.0.1", port: int = 0):
        self.server = server
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._closing = False

    def serve_forever(self) -> None:
        log.info("listening on tcp:%s:%d", self.host, self.port)
        while True:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                if self._closing:
                    return
                raise
            threading.Thread(
                target=self.server.serve_connection, args=(conn,), daemon=True
            ).start()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self) -> None:
        self._closing = True
        self._sock.close()
