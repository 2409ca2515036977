"""HTTP service tests: upload/query/reload contracts over a tiny checkpoint."""

import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from tokenforge.app.http import create_app, load_service_checkpoint, snap_dims
from tokenforge.errors import SpecError
from tokenforge.evalkit import zero_shot_foreground
from tokenforge.model import (
    ModelConfig,
    init_params,
    save_checkpoint,
    token_embedding,
)
from tokenforge.trainer import make_glyph_vocab

PATCH = 8
UNIT = 4 * PATCH


@pytest.fixture(scope="module")
def ckpt_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    vocab = make_glyph_vocab()
    cfg = ModelConfig(
        patch_size=PATCH, encoder_dim=8, encoder_layers=1, embed_dim=6,
        vocab_size=len(vocab), seed=3,
    )
    a = root / "a.ckpt"
    b = root / "b.ckpt"
    save_checkpoint(init_params(cfg), a, vocab_doc=vocab.to_json())
    save_checkpoint(
        init_params(ModelConfig(**{**cfg.to_json(), "seed": 4})),
        b,
        vocab_doc=vocab.to_json(),
    )
    bare = root / "bare.ckpt"
    save_checkpoint(init_params(cfg), bare)  # no vocabulary on purpose
    return a, b, bare


@pytest.fixture()
def client(ckpt_paths):
    return TestClient(create_app(ckpt_paths[0]))


def png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def some_image(seed=0, shape=(60, 90, 3)) -> bytes:
    rng = np.random.default_rng(seed)
    return png_bytes(rng.integers(0, 256, shape).astype(np.uint8))


class TestSnapDims:
    def test_exact_multiples_unchanged(self):
        assert snap_dims(UNIT, 3 * UNIT, PATCH) == (UNIT, 3 * UNIT)

    def test_minimum_is_one_unit(self):
        assert snap_dims(1, 1, PATCH) == (UNIT, UNIT)

    def test_maximum_is_capped(self):
        h, w = snap_dims(5000, 5000, PATCH)
        assert h == w == 1024 - 1024 % UNIT

    def test_rounds_to_nearest(self):
        # 60 is 1.875 units -> 2 units; 90 is 2.8125 units -> 3 units
        assert snap_dims(60, 90, PATCH) == (2 * UNIT, 3 * UNIT)

    def test_always_unit_multiples_in_range(self):
        for v in [1, 17, 31, 32, 33, 100, 640, 1000, 1024, 4096]:
            h, w = snap_dims(v, v, PATCH)
            assert h % UNIT == 0 and UNIT <= h <= 1024
            assert (h, w) == (w, h)

    def test_oversized_patch_rejected(self):
        with pytest.raises(SpecError):
            snap_dims(100, 100, 300)


class TestHealth:
    def test_reports_checkpoint_ident(self, client):
        doc = client.get("/health").json()
        assert doc["status"] == "ok"
        assert len(doc["checkpoint"]) == 16
        int(doc["checkpoint"], 16)  # hex digest prefix


class TestUpload:
    def test_same_bytes_same_id(self, client):
        data = some_image()
        first = client.post("/images", content=data).json()
        second = client.post("/images", content=data).json()
        assert first == second
        assert len(client.app.state.service.images) == 1

    def test_dims_snapped(self, client):
        doc = client.post("/images", content=some_image()).json()
        assert (doc["height"], doc["width"]) == (2 * UNIT, 3 * UNIT)
        assert (doc["grid_h"], doc["grid_w"]) == (
            4 * doc["height"] // PATCH,
            4 * doc["width"] // PATCH,
        )

    def test_one_pixel_image_resized_to_minimum(self, client):
        doc = client.post("/images", content=png_bytes(np.zeros((1, 1, 3), np.uint8))).json()
        assert (doc["height"], doc["width"]) == (UNIT, UNIT)

    def test_corrupt_bytes_rejected(self, client):
        r = client.post("/images", content=b"definitely not a png")
        assert r.status_code == 400
        doc = r.json()
        assert set(doc) == {"error", "detail"}
        assert doc["error"] == "bad_image"

    def test_empty_body_rejected(self, client):
        assert client.post("/images", content=b"").status_code == 400


class TestQuery:
    @staticmethod
    def upload(client, seed=0):
        return client.post("/images", content=some_image(seed)).json()

    def test_two_tokens_two_maps(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": "OX"}
        ).json()
        assert [t["text"] for t in doc["tokens"]] == ["O", "X"]
        n = doc["grid_h"] * doc["grid_w"]
        assert all(len(t["heatmap"]) == n for t in doc["tokens"])
        assert len(doc["combined"]) == n

    def test_grid_matches_upload(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": "O"}
        ).json()
        assert (doc["grid_h"], doc["grid_w"]) == (up["grid_h"], up["grid_w"])

    def test_values_in_unit_interval(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": "OX= H"}
        ).json()
        for t in doc["tokens"]:
            assert min(t["heatmap"]) >= 0.0 and max(t["heatmap"]) <= 1.0

    def test_combined_is_cellwise_max(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": "OX=#"}
        ).json()
        stack = np.array([t["heatmap"] for t in doc["tokens"] if t["heatmap"]])
        recomputed = [max(stack[:, j]) for j in range(stack.shape[1])]
        assert np.allclose(doc["combined"], recomputed, atol=0)

    def test_space_probe_negates_whitespace_similarity(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": " "}
        ).json()
        assert len(doc["tokens"]) == 1
        state = client.app.state.service
        ck = state.checkpoint
        _, feats = state.features(up["image_id"])
        sid = ck.vocab.id_of(" ")
        want = zero_shot_foreground(feats, token_embedding([sid], ck.params)[0])
        assert np.allclose(doc["tokens"][0]["heatmap"], want.scores.ravel())
        assert doc["combined"] == doc["tokens"][0]["heatmap"]

    def test_unknown_image_is_404(self, client):
        r = client.post("/query", json={"image_id": "0" * 16, "text": "O"})
        assert r.status_code == 404
        assert r.json()["error"] == "not_found"

    def test_unknown_token_gets_null_heatmap(self, client):
        up = self.upload(client)
        doc = client.post(
            "/query", json={"image_id": up["image_id"], "text": "Oq"}
        ).json()
        by_text = {t["text"]: t for t in doc["tokens"]}
        assert by_text["q"]["token_id"] is None
        assert by_text["q"]["heatmap"] is None
        assert by_text["O"]["heatmap"] is not None
        # the null map contributes nothing to the combination
        assert doc["combined"] == by_text["O"]["heatmap"]

    def test_blank_text_rejected(self, client):
        up = self.upload(client)
        for text in ["", "   ", "\t"]:
            r = client.post("/query", json={"image_id": up["image_id"], "text": text})
            assert r.status_code == 400, text

    def test_missing_field_is_validation_error(self, client):
        r = client.post("/query", json={"text": "O"})
        assert r.status_code == 422
        assert r.json()["error"] == "validation"

    def test_identical_queries_identical_responses(self, client):
        up = self.upload(client)
        body = {"image_id": up["image_id"], "text": "OX"}
        a = client.post("/query", json=body).json()
        b = client.post("/query", json=body).json()
        assert a == b


class TestCheckpointReload:
    def test_swap_changes_ident_and_maps(self, ckpt_paths):
        a, b, _ = ckpt_paths
        client = TestClient(create_app(a))
        up = client.post("/images", content=some_image()).json()
        body = {"image_id": up["image_id"], "text": "O"}
        before = client.post("/query", json=body).json()

        doc = client.post("/checkpoint", json={"path": str(b)}).json()
        assert doc["checkpoint"] != before["checkpoint"]
        assert client.get("/health").json()["checkpoint"] == doc["checkpoint"]

        after = client.post("/query", json=body).json()
        assert after["checkpoint"] == doc["checkpoint"]
        assert not np.allclose(
            before["tokens"][0]["heatmap"], after["tokens"][0]["heatmap"]
        )

    def test_reload_without_path_rereads_current(self, ckpt_paths):
        client = TestClient(create_app(ckpt_paths[0]))
        ident = client.get("/health").json()["checkpoint"]
        doc = client.post("/checkpoint", json={}).json()
        assert doc["checkpoint"] == ident

    def test_missing_file_is_domain_error(self, ckpt_paths):
        client = TestClient(create_app(ckpt_paths[0]))
        r = client.post("/checkpoint", json={"path": "/nonexistent/x.ckpt"})
        assert r.status_code == 400
        assert set(r.json()) == {"error", "detail"}

    def test_checkpoint_without_vocab_rejected(self, ckpt_paths):
        with pytest.raises(SpecError):
            load_service_checkpoint(ckpt_paths[2])
