"""A small threaded HTTP server exposing a backend suite over the wire protocol.

Used by the CLI's serve-mock command and by protocol-transparency tests.
The server is intentionally dependency-free; production serving lives in
the separate service package.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import CapabilityError, InvalidArgumentError, WcgenError
from ..geometry import ImageBuffer
from .contracts import BackendSuite
from . import protocol

__all__ = ["MockService"]


def _decode_single_image(body: dict, field: str = "image") -> ImageBuffer:
    if not isinstance(body, dict) or body.get(field) is None:
        raise InvalidArgumentError(f"request body must carry {field!r}")
    import base64

    try:
        data = base64.b64decode(str(body[field]).encode("ascii"), validate=True)
    except Exception as exc:
        raise InvalidArgumentError(f"invalid base64 in {field!r}") from exc
    try:
        return protocol.decode_image_png(data)
    except WcgenError as exc:
        raise InvalidArgumentError(str(exc)) from exc


class _Handler(BaseHTTPRequestHandler):
    server_version = "wcgen-mock/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        if getattr(self.server, "verbose", False):
            super().log_message(format, *args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):  # noqa: N802 - stdlib naming
        suite: BackendSuite = self.server.suite
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except Exception:
            self._send_json(400, protocol.error_body("bad_request", "body is not valid JSON"))
            return

        try:
            if self.path == "/generate":
                req = protocol.request_from_json(body)
                req.validate()
                resp = suite.generator.generate(req)
                self._send_json(200, protocol.response_to_json(resp))
            elif self.path == "/depth":
                img = _decode_single_image(body)
                depth = suite.depth.estimate_depth(img)
                self._send_json(200, protocol.depth_response_to_json(depth))
            elif self.path == "/caption":
                img = _decode_single_image(body)
                text = suite.captioner.caption(img)
                self._send_json(200, {"caption": text})
            else:
                self._send_json(404, protocol.error_body("not_found", f"no such endpoint {self.path}"))
        except CapabilityError as exc:
            self._send_json(400, protocol.error_body("unsupported_mode", str(exc)))
        except InvalidArgumentError as exc:
            self._send_json(400, protocol.error_body("invalid_argument", str(exc)))
        except Exception as exc:  # pragma: no cover - defensive
            self._send_json(500, protocol.error_body("internal", str(exc)))


class MockService:
    """Hosts a backend suite on a local port; usable as a context manager."""

    def __init__(self, suite: BackendSuite, host: str = "127.0.0.1", port: int = 0, verbose: bool = False):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.suite = suite
        self._server.verbose = verbose
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "MockService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
