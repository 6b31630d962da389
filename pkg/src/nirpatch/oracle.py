"""Face-identification oracles: the built-in reference scorer and the
line-delimited JSON protocol client for external scorers.

The attack treats the recognizer as a black box returning one probability per
gallery identity. The built-in scorer embeds an image by 16x16 block
averaging, removes the mean, L2-normalizes, and softmaxes the cosine
similarities against the gallery at a fixed temperature. It exists so the
whole pipeline runs hermetically; real systems plug in over the wire
protocol below.

Wire protocol (authoritative): one JSON object per line over stdio
(`exec:<command>`) or TCP (`tcp:<host>:<port>`).

    -> {"cmd": "hello"}
    <- {"labels": ["alice", "bob", ...]}
    -> {"cmd": "score", "probe": "<base64 PGM bytes>", "gallery": "<name>"}
    <- {"probs": {"alice": 0.9, "bob": 0.1}}            on success
    <- {"error": "<message>"}                           on failure

One request is in flight per connection at a time; concurrent callers must
open separate connections. Probabilities must cover exactly the handshake
labels, be non-negative, and sum to 1 within 1e-6. Query counting lives
here: every score call bumps the owning scorer's counter.
"""

from __future__ import annotations

import base64
import json
import selectors
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidLabel,
    IoFailure,
    ProtocolViolation,
    ScorerFailure,
    ScorerTimeout,
    UnsupportedFormat,
)
from .image import NirImage, encode_pgm, load_image

EMBED_GRID = 16
EMBED_DIM = EMBED_GRID * EMBED_GRID
DEFAULT_TEMPERATURE = 0.05
DEFAULT_TIMEOUT = 10.0
PROB_SUM_TOL = 1e-6
ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True)
class ScoreVector:
    """Per-label probabilities; non-negative and summing to 1 within 1e-6."""

    probs: dict

    def __post_init__(self):
        probs = {str(k): float(v) for k, v in dict(self.probs).items()}
        if not probs:
            raise InvalidLabel("score vector has no labels")
        if min(probs.values()) < 0.0:
            raise ProtocolViolation("negative probability in score vector")
        total = sum(probs.values())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ProtocolViolation(f"probabilities sum to {total}, not 1")
        object.__setattr__(self, "probs", probs)

    def __getitem__(self, label: str) -> float:
        return self.probs[label]

    def top1(self) -> str:
        """Most probable label; ties break to the lexicographically smallest."""
        best = max(self.probs.values())
        return min(lbl for lbl, p in self.probs.items() if p == best)


def top1(scores: ScoreVector) -> str:
    return scores.top1()


@dataclass(frozen=True)
class Gallery:
    """Enrolled identities: (label, image) pairs, all the same size."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((str(lbl), img) for lbl, img in self.entries)
        if len(entries) < 2:
            raise InvalidLabel(f"gallery needs >= 2 identities, got {len(entries)}")
        labels = [lbl for lbl, _ in entries]
        if len(set(labels)) != len(labels):
            raise InvalidLabel("duplicate labels in gallery")
        w, h = entries[0][1].width, entries[0][1].height
        for lbl, img in entries:
            if (img.width, img.height) != (w, h):
                raise DimensionMismatch(
                    f"gallery image {lbl!r} is {img.width}x{img.height}, expected {w}x{h}"
                )
        object.__setattr__(self, "entries", entries)

    @property
    def labels(self) -> list[str]:
        return [lbl for lbl, _ in self.entries]

    @property
    def width(self) -> int:
        return self.entries[0][1].width

    @property
    def height(self) -> int:
        return self.entries[0][1].height

    def image(self, label: str) -> NirImage:
        for lbl, img in self.entries:
            if lbl == label:
                return img
        raise InvalidLabel(f"label {label!r} not in gallery")

    @classmethod
    def load(cls, directory) -> "Gallery":
        """Load <label>.pgm / <label>.png files in lexicographic order."""
        root = Path(directory)
        if not root.is_dir():
            raise IoFailure(f"gallery directory {root} does not exist")
        files = sorted(
            p for p in root.iterdir() if p.suffix.lower() in (".pgm", ".png")
        )
        if not files:
            raise UnsupportedFormat(f"no PGM/PNG files in {root}")
        return cls(entries=tuple((p.stem, load_image(p)) for p in files))


# --- built-in embedding and scoring -------------------------------------------

def builtin_embed(img: NirImage) -> np.ndarray:
    """16x16 block-average embedding, mean-removed and L2-normalized.

    Row r lands in block floor(r * 16 / h) (likewise columns); images smaller
    than the grid leave empty blocks at 0. A constant image embeds to the
    zero vector.
    """
    h, w = img.height, img.width
    data = img.data
    if h % EMBED_GRID == 0 and w % EMBED_GRID == 0:
        pooled = data.reshape(
            EMBED_GRID, h // EMBED_GRID, EMBED_GRID, w // EMBED_GRID
        ).mean(axis=(1, 3))
    else:
        row_bin = np.arange(h) * EMBED_GRID // h
        col_bin = np.arange(w) * EMBED_GRID // w
        flat = (row_bin[:, None] * EMBED_GRID + col_bin[None, :]).ravel()
        sums = np.bincount(flat, weights=data.ravel(), minlength=EMBED_DIM)
        counts = np.bincount(flat, minlength=EMBED_DIM)
        pooled = (sums / np.maximum(counts, 1)).reshape(EMBED_GRID, EMBED_GRID)
    vec = pooled.ravel() - pooled.mean()
    norm = np.linalg.norm(vec)
    # mean subtraction leaves ~1e-16 of rounding noise on a constant image;
    # without the tolerance that noise would be normalized to full scale
    if norm <= ZERO_NORM_TOL:
        return np.zeros(EMBED_DIM)
    return vec / norm


def cosine_similarities(probe: NirImage, gallery: Gallery) -> np.ndarray:
    """Cosine of the probe embedding against each gallery embedding, in
    gallery order."""
    pe = builtin_embed(probe)
    return np.array([float(builtin_embed(img) @ pe) for _, img in gallery.entries])


def _softmax(values: np.ndarray, temperature: float) -> np.ndarray:
    z = values / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def score(
    probe: NirImage, gallery: Gallery, temperature: float = DEFAULT_TEMPERATURE
) -> ScoreVector:
    """Softmax over cosine similarities at the given temperature."""
    if (probe.width, probe.height) != (gallery.width, gallery.height):
        raise DimensionMismatch(
            f"probe {probe.width}x{probe.height} vs gallery "
            f"{gallery.width}x{gallery.height}"
        )
    probs = _softmax(cosine_similarities(probe, gallery), temperature)
    return ScoreVector(probs=dict(zip(gallery.labels, probs)))


class BuiltinScorer:
    """In-process oracle with cached gallery embeddings and a query counter."""

    def __init__(self, gallery: Gallery, temperature: float = DEFAULT_TEMPERATURE):
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.gallery = gallery
        self.temperature = temperature
        self._embeds = np.stack([builtin_embed(img) for _, img in gallery.entries])
        self._labels = gallery.labels
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def score(self, probe: NirImage) -> ScoreVector:
        if (probe.width, probe.height) != (self.gallery.width, self.gallery.height):
            raise DimensionMismatch(
                f"probe {probe.width}x{probe.height} vs gallery "
                f"{self.gallery.width}x{self.gallery.height}"
            )
        sims = self._embeds @ builtin_embed(probe)
        probs = _softmax(sims, self.temperature)
        with self._lock:
            self._queries += 1
        return ScoreVector(probs=dict(zip(self._labels, probs)))

    def close(self):
        pass


# --- protocol client ------------------------------------------------------------

class _StdioTransport:
    """Child process speaking the protocol over its stdin/stdout."""

    def __init__(self, command: str, timeout: float):
        argv = shlex.split(command)
        if not argv:
            raise ScorerFailure("empty exec command")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise ScorerFailure(f"cannot launch scorer {argv[0]!r}: {exc}") from exc
        self._timeout = timeout
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: bytes):
        if self._proc.poll() is not None:
            raise ScorerFailure(f"scorer exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(line + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerFailure(f"scorer pipe closed: {exc}") from exc

    def recv_line(self) -> bytes:
        while b"\n" not in self._buf:
            if not self._sel.select(self._timeout):
                raise ScorerTimeout(f"no response within {self._timeout}s")
            chunk = self._proc.stdout.read1(65536)
            if not chunk:
                raise ScorerFailure("scorer closed its output stream")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self):
        self._sel.close()
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpTransport:
    """The same line protocol over a TCP socket."""

    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ScorerFailure(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._buf = b""

    def send_line(self, line: bytes):
        try:
            self._sock.sendall(line + b"\n")
        except OSError as exc:
            raise ScorerFailure(f"socket send failed: {exc}") from exc

    def recv_line(self) -> bytes:
        while b"\n" not in self._buf:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise ScorerTimeout("no response within socket timeout") from None
            except OSError as exc:
                raise ScorerFailure(f"socket recv failed: {exc}") from exc
            if not chunk:
                raise ScorerFailure("scorer closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def _open_transport(endpoint: str, timeout: float):
    if endpoint.startswith("exec:"):
        return _StdioTransport(endpoint[len("exec:"):], timeout)
    if endpoint.startswith("tcp:"):
        rest = endpoint[len("tcp:"):]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ScorerFailure(f"malformed tcp endpoint {endpoint!r}")
        try:
            port_num = int(port)
        except ValueError:
            raise ScorerFailure(f"malformed tcp port in {endpoint!r}") from None
        return _TcpTransport(host, port_num, timeout)
    raise ScorerFailure(f"unknown oracle endpoint {endpoint!r} (want exec:... or tcp:...)")


class ExternalScorer:
    """Protocol client: handshakes on connect, then scores probes one at a time."""

    def __init__(
        self,
        endpoint: str,
        gallery_ref: str = "default",
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.endpoint = endpoint
        self.gallery_ref = gallery_ref
        self._transport = _open_transport(endpoint, timeout)
        self._lock = threading.Lock()
        self._queries = 0
        try:
            reply = self._roundtrip({"cmd": "hello"})
        except Exception:
            self._transport.close()
            raise
        labels = reply.get("labels")
        if not isinstance(labels, list) or not all(isinstance(l, str) for l in labels):
            self._transport.close()
            raise ProtocolViolation(f"bad hello reply: {reply!r}")
        self._labels = labels

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def _roundtrip(self, request: dict) -> dict:
        payload = json.dumps(request, separators=(",", ":")).encode("utf-8")
        with self._lock:
            self._transport.send_line(payload)
            line = self._transport.recv_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolViolation(f"response is not JSON: {line[:200]!r}") from None
        if not isinstance(reply, dict):
            raise ProtocolViolation(f"response is not an object: {line[:200]!r}")
        if "error" in reply:
            raise ScorerFailure(f"scorer error: {reply['error']}")
        return reply

    def score(self, probe: NirImage) -> ScoreVector:
        request = {
            "cmd": "score",
            "probe": base64.b64encode(encode_pgm(probe)).decode("ascii"),
            "gallery": self.gallery_ref,
        }
        reply = self._roundtrip(request)
        probs = reply.get("probs")
        if not isinstance(probs, dict):
            raise ProtocolViolation(f"score reply missing probs: {reply!r}")
        if set(probs) != set(self._labels):
            raise ProtocolViolation(
                f"probs labels {sorted(probs)} do not match handshake {sorted(self._labels)}"
            )
        try:
            vector = ScoreVector(probs=probs)
        except (TypeError, ValueError) as exc:
            raise ProtocolViolation(f"malformed probabilities: {exc}") from exc
        with self._lock:
            self._queries += 1
        return vector

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def external_score(
    probe: NirImage,
    gallery_ref: str,
    endpoint: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> ScoreVector:
    """One-shot protocol round trip: connect, handshake, score, close."""
    with ExternalScorer(endpoint, gallery_ref, timeout) as scorer:
        return scorer.score(probe)
