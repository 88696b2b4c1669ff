"""Serve scorer requests over stdio, newline-delimited JSON.

Protocol (version 1):

* handshake, emitted first: ``{"proto": 1, "name": str, "concurrent": false}``
* request: ``{"id": int, "query": str, "image": str, "x0": int, "y0": int,
  "side": int}``, optionally with ``"png_b64"`` carrying the tile pixels
* response: ``{"id": int, "score": float}``; failures become
  ``{"id": int, "error": str}`` (id -1 when the request was unparseable)
* the parent closes stdin to shut the bridge down; it exits 0

Requests are handled serially and answered in arrival order. A malformed
line never kills the session.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass

# Keyed hash making stub-hash scores reproducible across runs, platforms,
# and implementations; changing it breaks recorded golden files.
STUB_HASH_KEY = b"selo-bridge-stub-v1"

MODES = ("stub-constant", "stub-hash", "model")


@dataclass(frozen=True)
class BridgeConfig:
    mode: str
    value: float = 0.5
    model: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "model" and not self.model:
            raise ValueError("model mode needs --model module:factory")


def stub_hash_score(query: str, x0: int, y0: int, side: int) -> float:
    """Scores in [0, 1): keyed 64-bit hash of the request identity, mod 1e6."""
    payload = f"{query}|{x0}|{y0}|{side}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8, key=STUB_HASH_KEY).digest()
    return (int.from_bytes(digest, "big") % 10**6) / 10**6


def _load_model(spec: str):
    """Import ``module:factory`` and call the factory to get the adapter.

    The adapter must expose ``embed_image(pil_image) -> 1-D array`` and
    ``embed_text(text) -> 1-D array``; scoring is the cosine similarity of
    the two embeddings. No model ships with the bridge.
    """
    import importlib

    module_name, _, factory_name = spec.partition(":")
    if not factory_name:
        raise ValueError(f"model spec must be module:factory, got {spec!r}")
    module = importlib.import_module(module_name)
    factory = getattr(module, factory_name)
    return factory()


def _model_score(adapter, req: dict) -> float:
    import base64
    import io

    import numpy as np
    from PIL import Image

    if "png_b64" in req:
        raw = base64.b64decode(req["png_b64"])
        tile = Image.open(io.BytesIO(raw)).convert("RGB")
    else:
        with Image.open(req["image"]) as im:
            x0, y0, side = req["x0"], req["y0"], req["side"]
            tile = im.convert("RGB").crop((x0, y0, x0 + side, y0 + side))
    v = np.asarray(adapter.embed_image(tile), dtype=np.float64).ravel()
    t = np.asarray(adapter.embed_text(req["query"]), dtype=np.float64).ravel()
    denom = float(np.linalg.norm(v) * np.linalg.norm(t))
    if denom == 0.0:
        return 0.0
    return float(np.dot(v, t) / denom)


def _answer(config: BridgeConfig, adapter, req: dict) -> dict:
    rid = req["id"]
    if not isinstance(rid, int):
        raise TypeError("'id' must be an integer")
    if config.mode == "stub-constant":
        return {"id": rid, "score": config.value}
    if config.mode == "stub-hash":
        score = stub_hash_score(
            req["query"], req["x0"], req["y0"], req["side"]
        )
        return {"id": rid, "score": score}
    return {"id": rid, "score": _model_score(adapter, req)}


def serve(config: BridgeConfig, stdin=None, stdout=None) -> int:
    """Answer requests until stdin closes; returns the exit status."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    adapter = _load_model(config.model) if config.mode == "model" else None

    def emit(obj: dict):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    emit({"proto": 1, "name": f"selo-bridge/{config.mode}", "concurrent": False})
    for line in stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            emit({"id": -1, "error": f"unparseable request: {exc}"})
            continue
        try:
            emit(_answer(config, adapter, req))
        except Exception as exc:  # noqa: BLE001 - one bad request, not fatal
            rid = req.get("id") if isinstance(req, dict) else None
            rid = rid if isinstance(rid, int) else -1
            emit({"id": rid, "error": f"{type(exc).__name__}: {exc}"})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="selo-bridge",
        description="Reference scorer subprocess for the selokit protocol.",
    )
    parser.add_argument("--mode", choices=MODES, default="stub-hash")
    parser.add_argument("--value", type=float, default=0.5,
                        help="score used by stub-constant")
    parser.add_argument("--model", default=None,
                        help="module:factory returning an embedding adapter")
    args = parser.parse_args(argv)
    config = BridgeConfig(mode=args.mode, value=args.value, model=args.model)
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
