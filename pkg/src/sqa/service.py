"""Local batch-scoring HTTP endpoint.

POST /score with a WAV body (content-type audio/wav) or JSON
{"path": "<server-local wav>"}; GET /healthz reports version and weight
hash. Stateless: the model is immutable and shared across requests, so
concurrent identical requests return identical payloads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import __version__
from .audio_io import decode_wav, load_wav
from .errors import SqaError
from .features import StftConfig
from .model import Model, WeightBundle, score_clip_detailed

log = logging.getLogger("sqa.service")

DEFAULT_MAX_DURATION_S = 60.0


class ScoringService:
    """Owns the shared model and turns audio into score payloads."""

    def __init__(self, model: Model, bundle: WeightBundle,
                 max_duration_s: float = DEFAULT_MAX_DURATION_S):
        self.model = model
        self.bundle = bundle
        self.max_duration_s = max_duration_s
        self.weight_hash = bundle.checksum()
        stft = StftConfig(hop_len=model.cfg.hop_len)
        self.feature_config_hash = hashlib.sha256(repr(stft).encode()).hexdigest()[:16]

    def health(self) -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "variant": self.model.cfg.variant,
            "weight_hash": self.weight_hash,
        }

    def score(self, clip) -> dict:
        duration = len(clip.samples) / clip.sample_rate
        if duration > self.max_duration_s:
            raise PayloadTooLarge(
                f"clip is {duration:.1f} s, limit is {self.max_duration_s:.0f} s"
            )
        scores, num_segments = score_clip_detailed(self.model, clip)
        return {"clip_id": clip.clip_id, **scores.as_dict(),
                "num_segments": num_segments,
                "model": self.weight_hash,
                "feature_config": self.feature_config_hash}


class PayloadTooLarge(SqaError):
    pass


class _Handler(BaseHTTPRequestHandler):
    service: ScoringService = None  # set by make_server

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/healthz":
            self._send_json(200, self.service.health())
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/score":
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            # raw-WAV byte bound: float32 mono at the highest supported rate
            max_bytes = int(self.service.max_duration_s * 48_000 * 4 * 8) + 1024
            if length > max_bytes:
                self._send_json(413, {"error": "payload too large"})
                return
            body = self.rfile.read(length)
            content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
            if content_type == "application/json":
                try:
                    req = json.loads(body)
                    path = req["path"]
                except (ValueError, KeyError, TypeError):
                    self._send_json(400, {"error": "expected JSON {\"path\": ...}"})
                    return
                clip = load_wav(path)
            else:
                clip = decode_wav(body, clip_id="request")
            self._send_json(200, self.service.score(clip))
        except PayloadTooLarge as e:
            self._send_json(413, {"error": str(e)})
        except SqaError as e:
            self._send_json(400, {"error": str(e)})
        except Exception:
            fault_id = uuid.uuid4().hex[:12]
            log.exception("internal fault %s", fault_id)
            self._send_json(500, {"error": "internal fault", "id": fault_id})


def make_server(service: ScoringService, host: str = "127.0.0.1",
                port: int = 8765) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: ScoringService, host: str, port: int) -> None:
    server = make_server(service, host, port)
    log.info("serving on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()
