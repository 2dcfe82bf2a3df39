"""Challenge service: issues freshly generated adversarial CAPTCHAs, verifies
one-shot answers, aggregates per-session usability statistics.

HTTP+JSON surface:
    POST /api/challenge {"length": n, "session": sid?} -> {"id", "image_base64"}
    POST /api/verify {"id", "answer", "elapsed_ms", "session"?} -> {"correct"} | {"error"}
    GET  /api/stats?session=sid -> summary
plus static file serving for the UI bundle. Answers are stored server-side
only and never appear in responses or logs.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .attacks import AttackConfig, run_attack
from .backgrounds import builtin_library
from .generate import GenerationConfig, sample_spec, compose_captcha
from .glyphs import ALPHABET, TILE, char_to_class
from .imgio import png_base64
from .models import build_model
from .tensor import Model, load_model

DEFAULT_TTL = 180.0
DEFAULT_EXCLUDED = ("l", "I")  # confusing for humans; configurable


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8757
    ttl: float = DEFAULT_TTL
    max_live: int = 4096
    static_dir: str | None = None
    surrogate_path: str | None = None
    attack: str = "sgtcs"
    attack_cfg: AttackConfig = field(default_factory=lambda: AttackConfig(eps=0.1, iters=10, mu=1.0, sigma=3.0))
    excluded_chars: tuple = DEFAULT_EXCLUDED
    seed: int = 0
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    @classmethod
    def load(cls, path=None, env=os.environ) -> "ServiceConfig":
        """Config file (JSON) plus RTCAPTCHA_* environment overrides."""
        cfg = cls()
        if path:
            with open(path) as f:
                raw = json.load(f)
            for key in ("host", "port", "ttl", "static_dir", "surrogate_path", "attack", "seed", "max_live"):
                if key in raw:
                    setattr(cfg, key, raw[key])
            if "attack_cfg" in raw:
                cfg.attack_cfg = AttackConfig(**raw["attack_cfg"])
            if "excluded_chars" in raw:
                cfg.excluded_chars = tuple(raw["excluded_chars"])
        if "RTCAPTCHA_HOST" in env:
            cfg.host = env["RTCAPTCHA_HOST"]
        if "RTCAPTCHA_PORT" in env:
            cfg.port = int(env["RTCAPTCHA_PORT"])
        if "RTCAPTCHA_TTL" in env:
            cfg.ttl = float(env["RTCAPTCHA_TTL"])
        if "RTCAPTCHA_SURROGATE" in env:
            cfg.surrogate_path = env["RTCAPTCHA_SURROGATE"]
        return cfg


@dataclass
class Challenge:
    id: str
    answer: str
    issued_at: float
    ttl: float
    session: str
    consumed: bool = False
    image_b64: str = ""


class ChallengeStore:
    """Single synchronized owner of live challenges and session stats."""

    def __init__(self, ttl: float, max_live: int, clock=time.monotonic):
        self.ttl = ttl
        self.max_live = max_live
        self.clock = clock
        self._lock = threading.Lock()
        self._live: dict[str, Challenge] = {}
        self._sessions: dict[str, list[dict]] = {}
        self._confusion: dict[str, dict[str, dict[str, int]]] = {}

    def _evict(self, now: float):
        expired = [cid for cid, ch in self._live.items() if now - ch.issued_at > ch.ttl]
        for cid in expired:
            del self._live[cid]
        while len(self._live) >= self.max_live:  # make room for the incoming entry
            oldest = min(self._live.values(), key=lambda ch: ch.issued_at)
            del self._live[oldest.id]

    def add(self, answer: str, session: str, image_b64: str) -> Challenge:
        with self._lock:
            now = self.clock()
            self._evict(now)
            cid = secrets.token_urlsafe(16)  # 128-bit URL-safe token
            ch = Challenge(cid, answer, now, self.ttl, session, image_b64=image_b64)
            self._live[cid] = ch
            self._sessions.setdefault(session, [])
            self._confusion.setdefault(session, {})
            return ch

    def verify(self, cid: str, answer: str, elapsed_ms: float):
        """Returns {"correct": bool} or raises VerifyError; consumes the id
        regardless of the outcome."""
        with self._lock:
            now = self.clock()
            ch = self._live.get(cid)
            if ch is None:
                raise VerifyError("unknown_id", 404)
            if ch.consumed:
                raise VerifyError("consumed", 409)
            if now - ch.issued_at > ch.ttl:
                ch.consumed = True
                raise VerifyError("expired", 410)
            ch.consumed = True
            correct = answer == ch.answer  # exact, case-sensitive
            self._sessions.setdefault(ch.session, []).append(
                {"challenge": cid, "correct": correct, "elapsed_ms": float(elapsed_ms)}
            )
            conf = self._confusion.setdefault(ch.session, {})
            if len(answer) == len(ch.answer):
                for truth_c, ans_c in zip(ch.answer, answer):
                    conf.setdefault(truth_c, {})
                    conf[truth_c][ans_c] = conf[truth_c].get(ans_c, 0) + 1
            return {"correct": correct}

    def stats(self, session: str) -> dict:
        with self._lock:
            if session not in self._sessions:
                raise VerifyError("unknown_session", 404)
            attempts = self._sessions[session]
            n = len(attempts)
            acc = (sum(1 for a in attempts if a["correct"]) / n) if n else None
            mean_ms = (sum(a["elapsed_ms"] for a in attempts) / n) if n else None
            return {
                "session": session,
                "attempts": n,
                "accuracy": acc,
                "mean_elapsed_ms": mean_ms,
                "confusion": self._confusion.get(session, {}),
            }


class VerifyError(Exception):
    def __init__(self, code: str, status: int):
        super().__init__(code)
        self.code = code
        self.status = status


class CaptchaService:
    def __init__(self, config: ServiceConfig, surrogate: Model | None = None, clock=time.monotonic):
        self.config = config
        self.store = ChallengeStore(config.ttl, config.max_live, clock=clock)
        if surrogate is not None:
            self.surrogate = surrogate
        elif config.surrogate_path:
            self.surrogate = load_model(config.surrogate_path)
        else:
            self.surrogate = build_model("tiny_lenet", seed=config.seed)
        self._library = config.generation.library or builtin_library()
        self._gen_sem = threading.BoundedSemaphore(2)  # bounded generation pool
        self._counter = 0
        self._counter_lock = threading.Lock()

    def _alphabet(self):
        return [c for c in ALPHABET if c not in self.config.excluded_chars]

    def create_challenge(self, length: int, session: str = "default") -> dict:
        if not 1 <= length <= 8:
            raise ValueError(f"length must be 1..8, got {length}")
        with self._counter_lock:
            self._counter += 1
            index = self._counter
        with self._gen_sem:
            rng = np.random.default_rng([self.config.seed, index])
            allowed = self._alphabet()
            chars = [allowed[rng.integers(len(allowed))] for _ in range(length)]
            gen = self.config.generation
            spec = sample_spec(
                GenerationConfig(mode=gen.mode, p_t=gen.p_t, p_f=gen.p_f, fonts=gen.fonts,
                                 library=self._library, length=length),
                seed=[self.config.seed, index], rng=rng, chars=chars)
            img, label = compose_captcha(spec, library=self._library)
            labels = np.array([char_to_class(c) for c in label])
            tiles = np.stack([img[:, i * TILE : (i + 1) * TILE, :] for i in range(length)])
            attacked = run_attack(self.config.attack, self.surrogate, tiles, labels, self.config.attack_cfg)
            strip = np.concatenate(list(attacked), axis=1)
        ch = self.store.add(label, session, png_base64(strip))
        return {"id": ch.id, "image_base64": ch.image_b64}

    def verify_answer(self, cid: str, answer: str, elapsed_ms: float) -> dict:
        return self.store.verify(cid, answer, elapsed_ms)

    def stats(self, session: str) -> dict:
        return self.store.stats(session)


def make_handler(service: CaptchaService):
    static_dir = Path(service.config.static_dir) if service.config.static_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default; never logs bodies
            pass

        def _json(self, status: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length).decode())

        def do_POST(self):
            path = urlparse(self.path).path
            try:
                body = self._read_body()
                if path == "/api/challenge":
                    length = int(body.get("length", 4))
                    session = str(body.get("session", "default"))
                    self._json(200, service.create_challenge(length, session))
                elif path == "/api/verify":
                    result = service.verify_answer(
                        str(body.get("id", "")), str(body.get("answer", "")),
                        float(body.get("elapsed_ms", 0.0)))
                    self._json(200, result)
                else:
                    self._json(404, {"error": "not_found"})
            except VerifyError as e:
                self._json(e.status, {"error": e.code})
            except (ValueError, KeyError, json.JSONDecodeError) as e:
                self._json(400, {"error": "bad_request", "detail": str(e)})
            except Exception:
                self._json(500, {"error": "internal"})  # opaque on generation failure

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/api/stats":
                session = parse_qs(parsed.query).get("session", ["default"])[0]
                try:
                    self._json(200, service.stats(session))
                except VerifyError as e:
                    self._json(e.status, {"error": e.code})
                return
            if static_dir is not None:
                rel = parsed.path.lstrip("/") or "index.html"
                target = (static_dir / rel).resolve()
                if static_dir.resolve() in target.parents or target == static_dir.resolve():
                    if target.is_file():
                        ctype = {
                            ".html": "text/html", ".js": "text/javascript",
                            ".css": "text/css", ".png": "image/png",
                        }.get(target.suffix, "application/octet-stream")
                        body = target.read_bytes()
                        self.send_response(200)
                        self.send_header("Content-Type", ctype)
                        self.send_header("Content-Length", str(len(body)))
                        self.end_headers()
                        self.wfile.write(body)
                        return
            self._json(404, {"error": "not_found"})

    return Handler


def serve(config: ServiceConfig, surrogate: Model | None = None) -> ThreadingHTTPServer:
    """Construct (but do not run) the HTTP server; call serve_forever() on it."""
    service = CaptchaService(config, surrogate=surrogate)
    server = ThreadingHTTPServer((config.host, config.port), make_handler(service))
    server.service = service
    return server
