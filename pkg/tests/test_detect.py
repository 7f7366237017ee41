import json

import numpy as np
import pytest

from conftest import make_oracle_backend_dir, planted_melspec
from cueengine.cuegraph import Graph, GraphBackend, _concat_coord_x, _conv2d, _maxpool2d, load_graph
from cueengine.detect import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    BackendError,
    BackendOutput,
    BackendSpec,
    ConfidenceTrace,
    accumulate,
    decode_window,
    load_backend,
    load_sidecar,
    normalize_image,
    run_detection,
)
from cueengine.specfeat import N_MELS, TILE_WIDTH, InferenceWindow, inference_windows


def simple_spec(**kw):
    defaults = dict(kind="oracle", num_queries=4, cue_class_index=0, no_object_index=1)
    defaults.update(kw)
    return BackendSpec(**defaults)


class TestNormalizeImage:
    def test_zero_image_is_constant_per_channel(self):
        out = normalize_image(np.zeros((N_MELS, TILE_WIDTH), dtype=np.uint8))
        for c, (m, s) in enumerate(zip(IMAGENET_MEAN, IMAGENET_STD)):
            np.testing.assert_allclose(out[c], (0 - m) / s, rtol=1e-6)

    def test_saturated_pixel(self):
        img = np.zeros((N_MELS, TILE_WIDTH), dtype=np.uint8)
        img[3, 7] = 255
        out = normalize_image(img)
        assert out[0, 3, 7] == pytest.approx((1 - 0.485) / 0.229, abs=1e-4)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(N_MELS, TILE_WIDTH), dtype=np.uint8)
        assert normalize_image(img).tobytes() == normalize_image(img).tobytes()

    def test_shape_checked(self):
        with pytest.raises(ValueError, match="image"):
            normalize_image(np.zeros((64, TILE_WIDTH), dtype=np.uint8))


class TestDecodeWindow:
    def _window(self, left_edge):
        return InferenceWindow(image=np.zeros((N_MELS, TILE_WIDTH), dtype=np.uint8), left_edge=left_edge)

    def test_center_maps_back_through_pad(self):
        spec = simple_spec(num_queries=1)
        logits = np.array([[50.0, 0.0]])
        boxes = np.array([[0.5, 0.5, 0.06, 1.0]])
        out = decode_window(logits, boxes, self._window(89), pad=89, n_columns=1000, spec=spec)
        assert out == [(178, pytest.approx(1.0, abs=1e-9))]

    def test_no_object_argmax_dropped(self):
        spec = simple_spec(num_queries=1)
        logits = np.array([[0.0, 3.0]])
        boxes = np.array([[0.5, 0.5, 0.06, 1.0]])
        assert decode_window(logits, boxes, self._window(0), 89, 1000, spec) == []

    def test_pad_region_dropped(self):
        spec = simple_spec(num_queries=1)
        logits = np.array([[5.0, 0.0]])
        boxes = np.array([[0.0, 0.5, 0.06, 1.0]])
        # column 0 + 0 - 89 = -89: inside the zero-pad, not the track
        assert decode_window(logits, boxes, self._window(0), 89, 1000, spec) == []

    def test_past_track_end_dropped(self):
        spec = simple_spec(num_queries=1)
        logits = np.array([[5.0, 0.0]])
        boxes = np.array([[340 / 355, 0.5, 0.06, 1.0]])
        assert decode_window(logits, boxes, self._window(89), 89, n_columns=300, spec=spec) == []

    def test_score_is_softmax_of_cue_class(self):
        spec = simple_spec(num_queries=2)
        logits = np.array([[1.0, 0.0], [0.2, 1.4]])
        boxes = np.array([[0.1, 0.5, 0.06, 1.0], [0.9, 0.5, 0.06, 1.0]])
        out = decode_window(logits, boxes, self._window(89), 89, 1000, spec)
        assert len(out) == 1
        col, score = out[0]
        assert col == round(0.1 * 355)
        assert score == pytest.approx(np.exp(1) / (np.exp(1) + 1), abs=1e-12)


class TestAccumulate:
    def test_max_wins_per_column(self):
        trace = accumulate([(500, 0.7), (500, 0.95), (10, 0.3)], n_columns=1000)
        assert trace.columns.tolist() == [10, 500]
        assert trace.scores.tolist() == [0.3, 0.95]

    def test_empty(self):
        trace = accumulate([], n_columns=100)
        assert len(trace) == 0

    def test_order_independent(self):
        pairs = [(5, 0.1), (900, 0.8), (3, 0.5), (900, 0.2)]
        a = accumulate(pairs, 1000)
        b = accumulate(list(reversed(pairs)), 1000)
        assert a.columns.tolist() == b.columns.tolist()
        assert a.scores.tolist() == b.scores.tolist()
        assert a.columns.tolist() == sorted(a.columns.tolist())

    def test_csv_round_trip(self, tmp_path):
        trace = accumulate([(10, 0.25), (700, 0.9)], n_columns=1000)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        text = path.read_text()
        assert text.splitlines()[0] == "column,time_s,score"
        loaded = ConfidenceTrace.from_csv(path, n_columns=1000)
        assert loaded.columns.tolist() == [10, 700]
        assert loaded.scores.tolist() == pytest.approx([0.25, 0.9])


class TestSidecar:
    def test_load_oracle_backend(self, tmp_path):
        backend = load_backend(make_oracle_backend_dir(tmp_path / "b"))
        assert backend.spec.kind == "oracle"
        assert backend.spec.num_queries == 100

    def test_bad_version(self, tmp_path):
        p = tmp_path / "sidecar.json"
        p.write_text(json.dumps({"version": 2}))
        with pytest.raises(BackendError, match="version"):
            load_sidecar(p)

    def test_missing_keys(self, tmp_path):
        p = tmp_path / "sidecar.json"
        p.write_text(json.dumps({"version": 1, "num_queries": 10}))
        with pytest.raises(BackendError, match="malformed"):
            load_sidecar(p)

    def test_unknown_kind(self, tmp_path):
        d = make_oracle_backend_dir(tmp_path / "b")
        doc = json.loads((d / "sidecar.json").read_text())
        doc["kind"] = "mystery"
        (d / "sidecar.json").write_text(json.dumps(doc))
        with pytest.raises(BackendError, match="mystery"):
            load_backend(d)

    def test_not_a_file(self, tmp_path):
        with pytest.raises(BackendError):
            load_backend(tmp_path / "nope")


class _FixedColumnBackend:
    """Fires one detection at a fixed tile-relative column, every window."""

    def __init__(self, tile_col, spec):
        self.tile_col = tile_col
        self.spec = spec

    def infer(self, batch):
        b, q = batch.shape[0], self.spec.num_queries
        logits = np.zeros((b, q, 2), dtype=np.float32)
        logits[:, :, 1] = 8.0
        logits[:, 0, 0] = 8.0
        logits[:, 0, 1] = 0.0
        boxes = np.zeros((b, q, 4), dtype=np.float32)
        boxes[:, 0, 0] = self.tile_col / TILE_WIDTH
        return BackendOutput(logits=logits, boxes=boxes)


class TestRunDetection:
    def test_fixed_column_backend_spaced_by_stride(self):
        spec_img = planted_melspec(2000, [])
        backend = _FixedColumnBackend(100, simple_spec(num_queries=3))
        trace = run_detection(spec_img, backend, pad=89)
        diffs = np.diff(trace.columns)
        assert np.all(diffs == 89)

    @pytest.mark.parametrize("pad", [89, 177, 266])
    def test_oracle_recovers_plants(self, tmp_path, pad):
        plants = [150, 900, 1700]
        spec_img = planted_melspec(2000, plants)
        backend = load_backend(make_oracle_backend_dir(tmp_path / "b"))
        trace = run_detection(spec_img, backend, pad=pad)
        strong = trace.columns[trace.scores > 0.9]
        assert sorted(strong.tolist()) == plants

    def test_batch_size_invariant(self, tmp_path):
        plants = [150, 900, 1700]
        spec_img = planted_melspec(2000, plants)
        backend = load_backend(make_oracle_backend_dir(tmp_path / "b"))
        a = run_detection(spec_img, backend, pad=177, batch_size=1)
        b = run_detection(spec_img, backend, pad=177, batch_size=64)
        assert a.columns.tolist() == b.columns.tolist()
        assert a.scores.tolist() == b.scores.tolist()


# ---------------------------------------------------------------------------
# interchange graph executor

class TestGraphOps:
    def test_conv2d_same_matches_direct_computation(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 6, 7, 2)).astype(np.float32)
        w = rng.standard_normal((3, 3, 2, 4)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = _conv2d(x, w, b, stride=(1, 1), padding="same")
        assert out.shape == (1, 6, 7, 4)
        # even kernel coverage: compare one interior position against a dot product
        patch = x[0, 1:4, 2:5, :]
        expected = np.einsum("klc,klcd->d", patch, w) + b
        np.testing.assert_allclose(out[0, 2, 3], expected, rtol=1e-5)

    def test_conv2d_same_stride_tf_padding(self):
        # height 16, kernel 16, stride 16 -> out height 1 with no padding
        x = np.ones((1, 16, 10, 1), dtype=np.float32)
        w = np.ones((16, 3, 1, 1), dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        out = _conv2d(x, w, b, stride=(16, 1), padding="same")
        assert out.shape == (1, 1, 10, 1)
        # interior columns see the full 16x3 window of ones
        assert np.all(out[0, 0, 1:-1, 0] == 48.0)
        # TF pads one column on each side for kernel 3
        assert out[0, 0, 0, 0] == 32.0 and out[0, 0, -1, 0] == 32.0

    def test_maxpool(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
        out = _maxpool2d(x, (2, 2))
        np.testing.assert_array_equal(out[0, :, :, 0], [[5, 7], [13, 15]])

    def test_coord_channel(self):
        x = np.zeros((2, 3, 5, 1), dtype=np.float32)
        out = _concat_coord_x(x)
        assert out.shape == (2, 3, 5, 2)
        np.testing.assert_allclose(out[0, 0, :, 1], [0, 0.25, 0.5, 0.75, 1.0])


def _write_tiny_graph(tmp_path, num_queries=TILE_WIDTH, classes=2):
    """Hand-built graph: collapse each column to its mean, one query per column.

    conv2d with a 128x1 averaging kernel (valid) produces (B, 1, 355, C);
    dense heads then emit logits and boxes per column, so Q = 355.
    """
    c_feat = 2
    conv_w = np.zeros((N_MELS, 1, 3, c_feat), dtype=np.float32)
    conv_w[:, 0, 0, 0] = 1.0 / N_MELS  # channel 0 mean -> feature 0
    conv_b = np.zeros(c_feat, dtype=np.float32)
    logit_w = np.zeros((c_feat, classes), dtype=np.float32)
    logit_w[0, 0] = 4.0  # bright column -> cue class
    logit_b = np.array([0.0, 1.0], dtype=np.float32)
    box_w = np.zeros((c_feat, 4), dtype=np.float32)
    box_b = np.zeros(4, dtype=np.float32)

    tensors = {}
    blobs = []
    offset = 0
    for name, arr in [("conv_w", conv_w), ("conv_b", conv_b), ("logit_w", logit_w),
                      ("logit_b", logit_b), ("box_w", box_w), ("box_b", box_b)]:
        tensors[name] = {"offset": offset, "shape": list(arr.shape)}
        blobs.append(arr.ravel())
        offset += arr.size
    np.concatenate(blobs).astype("<f4").tofile(tmp_path / "weights.bin")

    manifest = {
        "format": "cuegraph",
        "version": 1,
        "input": {"layout": "NCHW", "shape": [3, N_MELS, TILE_WIDTH], "name": "image"},
        "weights_file": "weights.bin",
        "tensors": tensors,
        "ops": [
            {"op": "transpose_nchw_nhwc", "input": "image", "output": "t0"},
            {"op": "conv2d", "input": "t0", "output": "t1", "weights": "conv_w",
             "bias": "conv_b", "stride": [1, 1], "padding": "valid"},
            {"op": "squeeze_queries", "input": "t1", "output": "t2"},
            {"op": "dense", "input": "t2", "output": "logits", "weights": "logit_w", "bias": "logit_b"},
            {"op": "dense", "input": "t2", "output": "boxes_raw", "weights": "box_w", "bias": "box_b"},
            {"op": "sigmoid", "input": "boxes_raw", "output": "boxes"},
        ],
        "outputs": {"logits": "logits", "boxes": "boxes"},
    }
    (tmp_path / "model.json").write_text(json.dumps(manifest))
    sidecar = {
        "version": 1,
        "kind": "cuegraph",
        "num_queries": num_queries,
        "cue_class_index": 0,
        "no_object_index": 1,
        "input": {"channels": 3, "height": N_MELS, "width": TILE_WIDTH},
        "normalize": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
    }
    (tmp_path / "sidecar.json").write_text(json.dumps(sidecar))
    return tmp_path


class TestGraphBackend:
    def test_query_count_mismatch_rejected(self, tmp_path):
        # graph emits one query per column; a lying sidecar must be caught
        d = _write_tiny_graph(tmp_path, num_queries=100)
        backend = load_backend(d)
        batch = np.zeros((1, 3, N_MELS, TILE_WIDTH), dtype=np.float32)
        with pytest.raises(BackendError, match="logits"):
            backend.infer(batch)

    def test_runs_and_shapes(self, tmp_path):
        d = _write_tiny_graph(tmp_path)
        backend = load_backend(d)
        batch = np.zeros((2, 3, N_MELS, TILE_WIDTH), dtype=np.float32)
        out = backend.infer(batch)
        assert out.logits.shape == (2, TILE_WIDTH, 2)
        assert out.boxes.shape == (2, TILE_WIDTH, 4)
        assert np.all(out.boxes >= 0) and np.all(out.boxes <= 1)

    def test_bright_column_fires_cue_class(self, tmp_path):
        d = _write_tiny_graph(tmp_path)
        backend = load_backend(d)
        batch = np.zeros((1, 3, N_MELS, TILE_WIDTH), dtype=np.float32)
        batch[0, 0, :, 42] = 2.0  # mean feature 2.0 -> cue logit 8 > no-object 1
        out = backend.infer(batch)
        assert out.logits[0, 42, 0] > out.logits[0, 42, 1]
        assert out.logits[0, 41, 0] < out.logits[0, 41, 1]

    def test_identical_rows_for_identical_images(self, tmp_path):
        d = _write_tiny_graph(tmp_path)
        backend = load_backend(d)
        rng = np.random.default_rng(11)
        one = rng.standard_normal((1, 3, N_MELS, TILE_WIDTH)).astype(np.float32)
        batch = np.concatenate([one, one])
        out = backend.infer(batch)
        np.testing.assert_array_equal(out.logits[0], out.logits[1])

    def test_input_shape_mismatch_rejected(self, tmp_path):
        d = _write_tiny_graph(tmp_path)
        graph = load_graph(d)
        with pytest.raises(BackendError, match="input"):
            graph.run(np.zeros((1, 3, 64, TILE_WIDTH), dtype=np.float32))

    def test_truncated_weights_rejected(self, tmp_path):
        d = _write_tiny_graph(tmp_path)
        data = (d / "weights.bin").read_bytes()
        (d / "weights.bin").write_bytes(data[: len(data) // 2])
        with pytest.raises(BackendError, match="overruns"):
            load_graph(d)
