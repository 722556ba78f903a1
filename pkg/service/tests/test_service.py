import base64
import threading
import time

import numpy as np
import pytest
import requests
import uvicorn

from wcgen.backend import protocol
from wcgen.backend.conformance import run_conformance
from wcgen.backend.contracts import GenerationRequest, Mode
from wcgen.backend.mocks import FillNearestBackend
from wcgen.backend.remote import RemoteCaptionBackend, RemoteDepthBackend, remote_generate
from wcgen.geometry import DepthMap, ImageBuffer

from wcgen_service import ServiceConfig, create_app


class ServerThread:
    """uvicorn on an ephemeral port, in this process so tests can reach app state."""

    def __init__(self, app):
        self.config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(self.config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 15
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture(scope="module")
def stub_app():
    return create_app(ServiceConfig())


@pytest.fixture(scope="module")
def server(stub_app):
    with ServerThread(stub_app) as srv:
        yield srv


def checker_image(width=24, height=16) -> ImageBuffer:
    v, u = np.mgrid[0:height, 0:width]
    arr = np.stack(
        [
            ((u // 3 + v // 3) % 2).astype(np.float32),
            (u / max(width - 1, 1)).astype(np.float32),
            (v / max(height - 1, 1)).astype(np.float32),
        ],
        axis=-1,
    )
    return ImageBuffer(arr).quantized()


# ---------------------------------------------------------------------------
# Config validation


def test_unknown_model_rejected_at_startup():
    with pytest.raises(ValueError):
        ServiceConfig(generator_model="not-a-model")
    with pytest.raises(ValueError):
        ServiceConfig(depth_model="not-a-model")
    with pytest.raises(ValueError):
        ServiceConfig(max_jobs=0)


def test_stub_config_is_deterministic():
    assert ServiceConfig().deterministic
    cfg = ServiceConfig(generator_model="sd-controlnet-depth")
    assert not cfg.deterministic
    assert cfg.stubbed().deterministic


# ---------------------------------------------------------------------------
# Conformance: the shared contract suite must pass against stub mode


def test_primary_conformance_suite_passes(server):
    start = time.perf_counter()
    results = run_conformance(server.url)
    failed = [r for r in results if not r.passed]
    elapsed = time.perf_counter() - start
    print(f"[{'FAIL' if failed else 'PASS'}] service-conformance ({elapsed:.2f}s, budget 60s)")
    assert not failed, failed
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# Stub responses are byte-identical to the in-process mock


@pytest.mark.parametrize("mode", [Mode.DEPTH_TO_IMAGE, Mode.IMAGE_TO_IMAGE, Mode.OUTPAINT])
def test_stub_matches_in_process_mock(server, mode):
    img = checker_image()
    mask = np.zeros((16, 24), dtype=np.float32)
    mask[:, 12:] = 1.0
    req = GenerationRequest(
        mode,
        prompt="a corridor",
        depth=DepthMap.constant(24, 16, 2.5),
        init_image=None if mode is Mode.DEPTH_TO_IMAGE else img,
        mask=mask if mode is Mode.OUTPAINT else None,
        strength=0.6,
        seed=99,
    )
    local = FillNearestBackend().generate(req)
    remote = remote_generate(server.url, req)
    assert np.array_equal(local.image.values, remote.image.values)
    assert protocol.encode_image_png(local.image) == protocol.encode_image_png(remote.image)


def test_stub_depth_and_caption(server):
    img = checker_image()
    depth = RemoteDepthBackend(server.url).estimate_depth(img)
    assert np.all(depth.values == 3.0)
    assert RemoteCaptionBackend(server.url).caption(img) == "an indoor scene"


# ---------------------------------------------------------------------------
# Contract enforcement


def test_outpaint_mask_preservation(server):
    img = checker_image()
    mask = np.zeros((16, 24), dtype=np.float32)
    mask[:, :12] = 1.0
    req = GenerationRequest(Mode.OUTPAINT, prompt="x", init_image=img, mask=mask, seed=5)
    resp = remote_generate(server.url, req)
    keep = mask >= 1.0
    diff = np.abs(resp.image.values[keep] - img.values[keep])
    assert float(diff.max()) <= 1.0 / 255.0


def test_recompositing_fixes_a_repainting_model(server, stub_app):
    """Even if the model repaints kept pixels, the service re-composites
    them from the init image before responding."""

    class Repainter(FillNearestBackend):
        def _render(self, req):
            return np.full((req.dimensions()[1], req.dimensions()[0], 3), 0.25, dtype=np.float32)

    original = stub_app.state.suite.generator
    stub_app.state.suite.generator = Repainter()
    try:
        img = checker_image()
        mask = np.zeros((16, 24), dtype=np.float32)
        mask[:, :12] = 1.0
        req = GenerationRequest(Mode.OUTPAINT, prompt="x", init_image=img, mask=mask, seed=5)
        resp = remote_generate(server.url, req)
        keep = mask >= 1.0
        assert float(np.abs(resp.image.values[keep] - img.values[keep]).max()) <= 1.0 / 255.0
        hole = mask < 0.5
        assert np.allclose(resp.image.values[hole], 0.25, atol=1 / 255)
    finally:
        stub_app.state.suite.generator = original


def test_unknown_mode_400(server):
    resp = requests.post(server.url + "/generate", json={"mode": "paint_the_walls"}, timeout=5)
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "invalid_argument"


def test_missing_conditioning_400(server):
    resp = requests.post(
        server.url + "/generate", json={"mode": "outpaint", "prompt": "x", "seed": 0}, timeout=5
    )
    assert resp.status_code == 400


def test_malformed_json_400(server):
    resp = requests.post(
        server.url + "/generate",
        data=b"{oops",
        headers={"Content-Type": "application/json"},
        timeout=5,
    )
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "bad_request"


def test_oversized_image_payload_too_large():
    app = create_app(ServiceConfig(max_pixels=32 * 32))
    with ServerThread(app) as srv:
        img = checker_image(64, 64)
        payload = {"image": base64.b64encode(protocol.encode_image_png(img)).decode("ascii")}
        resp = requests.post(srv.url + "/depth", json=payload, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "payload_too_large"


def test_oversized_body_payload_too_large():
    app = create_app(ServiceConfig(max_body_bytes=512))
    with ServerThread(app) as srv:
        rng = np.random.default_rng(0)
        img = ImageBuffer(rng.random((32, 32, 3), dtype=np.float32))  # incompressible
        payload = {"image": base64.b64encode(protocol.encode_image_png(img)).decode("ascii")}
        resp = requests.post(srv.url + "/depth", json=payload, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "payload_too_large"


def test_busy_maps_to_503(server, stub_app):
    """Hold every job slot, then expect 503 with the busy code."""
    sem = stub_app.state.jobs
    held = 0
    try:
        while sem.acquire(blocking=False):
            held += 1
        img = checker_image()
        payload = {"image": base64.b64encode(protocol.encode_image_png(img)).decode("ascii")}
        resp = requests.post(server.url + "/caption", json=payload, timeout=5)
        assert resp.status_code == 503
        assert resp.json()["error"]["code"] == "busy"
    finally:
        for _ in range(held):
            sem.release()


def test_health_reports_models(server):
    body = requests.get(server.url + "/health", timeout=5).json()
    assert body["ok"] is True
    assert body["deterministic"] is True
    assert body["models"]["generator"] == "stub"
