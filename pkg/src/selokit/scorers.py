"""Similarity scorers: the pluggable stand-in for a retrieval model.

A scorer maps (query, tile) to a similarity scalar. Built-in synthetic
scorers cover model-free testing and calibration; ExternalScorerSession
talks the newline-delimited JSON wire protocol to a scorer subprocess:

* handshake (child -> parent): ``{"proto": 1, "name": str, "concurrent": bool}``
* request: ``{"id": int, "query": str, "image": str, "x0": int, "y0": int,
  "side": int}`` or the same with ``"png_b64"`` carrying the tile pixels
* response: ``{"id": int, "score": float}`` or ``{"id": int, "error": str}``
* shutdown: parent closes the child's stdin; child exits 0
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    HandshakeError,
    ProtocolError,
    ScorerTimeoutError,
    ScorerUnavailableError,
)
from .pipeline import RasterRef, Tile

PROTOCOL_VERSION = 1
SCORER_KINDS = ("constant", "seeded-random", "gt-oracle", "gaussian-target",
                "external")


@dataclass(frozen=True)
class ScoreRequest:
    request_id: int
    query: str
    image: str
    x0: int
    y0: int
    side: int

    def to_wire(self) -> dict:
        return {
            "id": self.request_id,
            "query": self.query,
            "image": self.image,
            "x0": self.x0,
            "y0": self.y0,
            "side": self.side,
        }


@dataclass(frozen=True)
class ScoreResponse:
    request_id: int
    score: float


@dataclass(frozen=True)
class ScorerSpec:
    """Parsed scorer selection, e.g. from the --scorer CLI flag."""

    kind: str
    value: float | None = None
    seed: int | None = None
    target: tuple[float, float, float] | None = None  # x, y, sigma
    sigma: float | None = None
    command: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise ValueError(
                f"unknown scorer kind {self.kind!r}; expected one of "
                f"{SCORER_KINDS}"
            )


def parse_scorer_spec(text: str) -> ScorerSpec:
    """Parse ``kind[:params]`` scorer strings.

    Examples: ``constant:0.5``, ``seeded-random:42``, ``gt-oracle``,
    ``gaussian-target``, ``gaussian-target:64``,
    ``gaussian-target:100,200,32``, ``external:selo-bridge --mode stub-hash``.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    rest = rest.strip()
    if kind == "constant":
        if not rest:
            raise ValueError("constant scorer needs a value, e.g. constant:0.5")
        return ScorerSpec(kind=kind, value=float(rest))
    if kind == "seeded-random":
        return ScorerSpec(kind=kind, seed=int(rest) if rest else None)
    if kind == "gt-oracle":
        if rest:
            raise ValueError("gt-oracle takes no parameters")
        return ScorerSpec(kind=kind)
    if kind == "gaussian-target":
        if not rest:
            return ScorerSpec(kind=kind)
        parts = [float(p) for p in rest.split(",")]
        if len(parts) == 1:
            return ScorerSpec(kind=kind, sigma=parts[0])
        if len(parts) == 3:
            return ScorerSpec(kind=kind, target=(parts[0], parts[1], parts[2]))
        raise ValueError(
            "gaussian-target takes 'sigma' or 'x,y,sigma', got "
            f"{rest!r}"
        )
    if kind == "external":
        if not rest:
            raise ValueError("external scorer needs a command line")
        return ScorerSpec(kind=kind, command=tuple(shlex.split(rest)))
    raise ValueError(f"unknown scorer kind {kind!r}")


class ConstantScorer:
    """Every tile scores the same value."""

    concurrent_ok = True

    def __init__(self, value: float):
        if not math.isfinite(value):
            raise ValueError("constant score must be finite")
        self.value = float(value)

    def score_tiles(self, query: str, tiles: list[Tile], image) -> np.ndarray:
        return np.full(len(tiles), self.value, dtype=np.float64)


class SeededRandomScorer:
    """Stable pseudo-random score per (seed, query, tile) identity.

    Scores are derived from a keyed blake2b hash so they are identical
    across runs, platforms, and tile orderings.
    """

    concurrent_ok = True

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _score_one(self, query: str, tile: Tile) -> float:
        payload = f"{self.seed}|{query}|{tile.x0}|{tile.y0}|{tile.side}"
        digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2**64

    def score_tiles(self, query: str, tiles: list[Tile], image) -> np.ndarray:
        return np.array([self._score_one(query, t) for t in tiles], np.float64)


class GtOracleScorer:
    """Score = fraction of the tile covered by the ground-truth mask."""

    concurrent_ok = True

    def __init__(self, mask: np.ndarray):
        if mask.ndim != 2:
            raise ValueError("gt mask must be 2-D")
        ii = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), np.int64)
        ii[1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1)
        self._integral = ii
        self.shape = mask.shape

    def _covered(self, tile: Tile) -> int:
        ii = self._integral
        y0, y1 = tile.y0, tile.y0 + tile.side
        x0, x1 = tile.x0, tile.x0 + tile.side
        return int(ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0])

    def score_tiles(self, query: str, tiles: list[Tile], image) -> np.ndarray:
        return np.array(
            [self._covered(t) / (t.side * t.side) for t in tiles], np.float64
        )


class GaussianTargetScorer:
    """Score = exp(-d^2 / (2 sigma^2)), d from tile center to the target.

    With several targets the per-tile score is the max over targets, which
    yields one analytic peak per target in the stacked map.
    """

    concurrent_ok = True

    def __init__(self, targets: list[tuple[float, float, float]]):
        if not targets:
            raise ValueError("gaussian-target scorer needs >= 1 target")
        for x, y, sigma in targets:
            if sigma <= 0:
                raise ValueError(f"sigma must be > 0, got {sigma}")
        self.targets = [(float(x), float(y), float(s)) for x, y, s in targets]

    def score_tiles(self, query: str, tiles: list[Tile], image) -> np.ndarray:
        out = np.empty(len(tiles), np.float64)
        for i, t in enumerate(tiles):
            cx = t.x0 + t.side / 2.0
            cy = t.y0 + t.side / 2.0
            best = 0.0
            for x, y, sigma in self.targets:
                d2 = (cx - x) ** 2 + (cy - y) ** 2
                best = max(best, math.exp(-d2 / (2.0 * sigma * sigma)))
            out[i] = best
        return out


class ExternalScorerSession:
    """Client side of the wire protocol against one scorer subprocess."""

    def __init__(
        self,
        command,
        env: dict[str, str] | None = None,
        timeout: float = 30.0,
        max_inflight: int = 64,
        payload_mode: bool = False,
    ):
        self.command = list(command)
        self.timeout = timeout
        self.max_inflight = max_inflight
        self.payload_mode = payload_mode
        self._next_id = 0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                env=env,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerUnavailableError(
                f"failed to spawn scorer {self.command!r}: {exc}"
            ) from exc
        self._reader = threading.Thread(target=self._drain_stdout, daemon=True)
        self._reader.start()
        hello = self._next_message()
        if not isinstance(hello, dict) or hello.get("proto") != PROTOCOL_VERSION:
            self.close()
            raise HandshakeError(
                f"expected handshake with proto={PROTOCOL_VERSION}, got {hello!r}"
            )
        self.name = hello.get("name", "")
        self.concurrent_ok = bool(hello.get("concurrent", False))

    def _drain_stdout(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _next_message(self):
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ScorerTimeoutError(
                f"scorer silent for {self.timeout}s"
            ) from None
        if line is None:
            raise ProtocolError("scorer closed its stdout (process died?)")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"scorer sent invalid JSON: {line!r}") from exc

    def _send(self, obj: dict):
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise ProtocolError(f"scorer stdin closed: {exc}") from exc

    def _tile_payload(self, image: RasterRef, tile: Tile) -> str:
        from PIL import Image

        with Image.open(image.path) as im:
            crop = im.crop((tile.x0, tile.y0, tile.x0 + tile.side,
                            tile.y0 + tile.side))
            buf = io.BytesIO()
            crop.save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode("ascii")

    def score_tiles(self, query: str, tiles: list[Tile], image) -> np.ndarray:
        """Pipeline the batch through the child, matching replies by id."""
        if not isinstance(image, RasterRef):
            image = RasterRef.from_file(image)
        with self._lock:
            requests = []
            for tile in tiles:
                rid = self._next_id
                self._next_id += 1
                requests.append(
                    (ScoreRequest(request_id=rid, query=query,
                                  image=image.path or "", x0=tile.x0,
                                  y0=tile.y0, side=tile.side), tile)
                )
            results: dict[int, float] = {}
            pending: set[int] = set()
            sent = 0
            while len(results) < len(requests):
                while sent < len(requests) and len(pending) < self.max_inflight:
                    request, tile = requests[sent]
                    msg = request.to_wire()
                    if self.payload_mode:
                        msg["png_b64"] = self._tile_payload(image, tile)
                    self._send(msg)
                    pending.add(request.request_id)
                    sent += 1
                reply = self._next_message()
                rid = reply.get("id")
                if rid not in pending:
                    raise ProtocolError(f"reply for unknown id: {reply!r}")
                if "error" in reply:
                    raise ProtocolError(
                        f"scorer error for id {rid}: {reply['error']}"
                    )
                score = reply.get("score")
                if not isinstance(score, (int, float)) or not math.isfinite(score):
                    raise ProtocolError(f"non-finite or missing score: {reply!r}")
                response = ScoreResponse(request_id=rid, score=float(score))
                pending.remove(response.request_id)
                results[response.request_id] = response.score
            return np.array(
                [results[r.request_id] for r, _ in requests], np.float64
            )

    def close(self):
        try:
            if self._proc.stdin and not self._proc.stdin.closed:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_external_scorer(command, env: dict[str, str] | None = None,
                          **kwargs) -> ExternalScorerSession:
    """Start a scorer subprocess and complete the protocol handshake."""
    return ExternalScorerSession(command, env=env, **kwargs)


def score_tiles(scorer, query: str, tiles: list[Tile], image) -> np.ndarray:
    """Score every tile, validating the scorer honored its contract."""
    scores = np.asarray(scorer.score_tiles(query, tiles, image), np.float64)
    if scores.shape != (len(tiles),):
        raise ProtocolError(
            f"scorer returned {scores.shape} scores for {len(tiles)} tiles"
        )
    if not np.isfinite(scores).all():
        raise ProtocolError("scorer returned non-finite scores")
    return scores


def build_scorer(spec: ScorerSpec, *, run_seed: int = 0, gt_mask=None,
                 targets=None, env=None, timeout: float = 30.0):
    """Instantiate a scorer from its spec plus per-case context.

    gt-oracle needs the case's rasterized GT union; gaussian-target without
    an explicit target point needs per-region (x, y, sigma) triples.
    """
    if spec.kind == "constant":
        return ConstantScorer(spec.value)
    if spec.kind == "seeded-random":
        return SeededRandomScorer(spec.seed if spec.seed is not None else run_seed)
    if spec.kind == "gt-oracle":
        if gt_mask is None:
            raise ScorerUnavailableError("gt-oracle scorer needs a GT mask")
        return GtOracleScorer(gt_mask)
    if spec.kind == "gaussian-target":
        if spec.target is not None:
            return GaussianTargetScorer([spec.target])
        if not targets:
            raise ScorerUnavailableError(
                "gaussian-target scorer needs target points"
            )
        if spec.sigma is not None:
            targets = [(x, y, spec.sigma) for x, y, _ in targets]
        return GaussianTargetScorer(targets)
    if spec.kind == "external":
        return spawn_external_scorer(spec.command, env=env, timeout=timeout)
    raise ScorerUnavailableError(f"unknown scorer kind {spec.kind!r}")
