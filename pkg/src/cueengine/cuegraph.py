"""Numpy interpreter for the detector interchange-graph format.

A model directory contains three files:

* ``sidecar.json`` - the backend contract (queries, class indices, input
  shape, normalization constants) shared by every backend kind.
* ``model.json`` - the graph manifest: an ordered op list over named
  tensors, a weight table, and the output tensor names::

      {
        "format": "cuegraph", "version": 1,
        "input": {"layout": "NCHW", "shape": [3, 128, 355], "name": "image"},
        "weights_file": "weights.bin",
        "tensors": {"conv1_w": {"offset": 0, "shape": [16, 5, 4, 16]}, ...},
        "ops": [{"op": "conv2d", "input": "t0", "output": "t1",
                 "weights": "conv1_w", "bias": "conv1_b",
                 "stride": [16, 1], "padding": "same"}, ...],
        "outputs": {"logits": "logits", "boxes": "boxes"}
      }

* ``weights.bin`` - raw little-endian float32 values; each entry of the
  tensor table points at ``offset`` (in floats) with its shape.

Supported ops (image tensors are NHWC after the entry transpose):

=====================  ====================================================
transpose_nchw_nhwc    (B,C,H,W) -> (B,H,W,C)
maxpool2d              valid pooling, stride = size; param ``size: [ph,pw]``
concat_coord_x         append a column-position channel with values
                       j / (W - 1)
conv2d                 kernel (kh,kw,cin,cout); params ``stride``,
                       ``padding`` ("same" pads like TensorFlow: total pad
                       split with the smaller half before)
relu                   elementwise max(x, 0)
squeeze_queries        (B,1,W,C) -> (B,W,C)
dense                  trailing-axis matmul, kernel (cin,cout) plus bias
sigmoid                elementwise logistic
=====================  ====================================================

Arithmetic is float32 throughout to track the training framework's
numerics; parity is asserted by the exporter's bundled check vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import BackendError, BackendOutput, BackendSpec

GRAPH_VERSION = 1


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride, padding: str) -> np.ndarray:
    kh, kw = w.shape[0], w.shape[1]
    sh, sw = stride
    if padding == "same":
        h, wd = x.shape[1], x.shape[2]
        oh, ow = -(-h // sh), -(-wd // sw)
        ph = max((oh - 1) * sh + kh - h, 0)
        pw = max((ow - 1) * sw + kw - wd, 0)
        x = np.pad(x, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    elif padding != "valid":
        raise BackendError(f"unknown conv2d padding {padding!r}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.einsum("bhwckl,klcd->bhwd", windows, w, optimize=True)
    return (out + b).astype(np.float32)


def _maxpool2d(x: np.ndarray, size) -> np.ndarray:
    ph, pw = size
    b, h, w, c = x.shape
    oh, ow = h // ph, w // pw
    trimmed = x[:, : oh * ph, : ow * pw, :]
    return trimmed.reshape(b, oh, ph, ow, pw, c).max(axis=(2, 4))


def _concat_coord_x(x: np.ndarray) -> np.ndarray:
    b, h, w, _ = x.shape
    ramp = np.linspace(0.0, 1.0, w, dtype=np.float32) if w > 1 else np.zeros(w, dtype=np.float32)
    coord = np.broadcast_to(ramp[None, None, :, None], (b, h, w, 1))
    return np.concatenate([x, coord.astype(np.float32)], axis=3)


@dataclass
class Graph:
    input_name: str
    input_shape: tuple[int, int, int]
    ops: list[dict]
    weights: dict[str, np.ndarray]
    output_logits: str
    output_boxes: str

    def run(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.input_shape:
            raise BackendError(
                f"input batch {batch.shape} does not match graph input {self.input_shape}"
            )
        tensors: dict[str, np.ndarray] = {self.input_name: batch.astype(np.float32)}
        for node in self.ops:
            op = node["op"]
            x = tensors[node["input"]]
            if op == "transpose_nchw_nhwc":
                y = np.transpose(x, (0, 2, 3, 1))
            elif op == "maxpool2d":
                y = _maxpool2d(x, node["size"])
            elif op == "concat_coord_x":
                y = _concat_coord_x(x)
            elif op == "conv2d":
                y = _conv2d(x, self.weights[node["weights"]], self.weights[node["bias"]],
                            node["stride"], node.get("padding", "same"))
            elif op == "relu":
                y = np.maximum(x, 0.0)
            elif op == "squeeze_queries":
                if x.shape[1] != 1:
                    raise BackendError(f"squeeze_queries expects height 1, got {x.shape}")
                y = x.reshape(x.shape[0], x.shape[2], x.shape[3])
            elif op == "dense":
                y = (x @ self.weights[node["weights"]] + self.weights[node["bias"]]).astype(np.float32)
            elif op == "sigmoid":
                y = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
                y = y.astype(np.float32)
            else:
                raise BackendError(f"unknown op {op!r}")
            tensors[node["output"]] = y
        return tensors[self.output_logits], tensors[self.output_boxes]


def load_graph(model_dir: str | Path) -> Graph:
    model_dir = Path(model_dir)
    manifest_path = model_dir / "model.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendError(f"{manifest_path}: cannot read graph manifest ({exc})") from exc
    if manifest.get("format") != "cuegraph" or manifest.get("version") != GRAPH_VERSION:
        raise BackendError(f"{manifest_path}: not a cuegraph v{GRAPH_VERSION} manifest")

    weights_path = model_dir / manifest.get("weights_file", "weights.bin")
    try:
        flat = np.fromfile(weights_path, dtype="<f4")
    except OSError as exc:
        raise BackendError(f"{weights_path}: cannot read weights ({exc})") from exc

    weights: dict[str, np.ndarray] = {}
    for name, entry in manifest.get("tensors", {}).items():
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        if offset + count > flat.size:
            raise BackendError(f"{weights_path}: tensor {name} overruns weight file")
        weights[name] = flat[offset : offset + count].reshape(shape).copy()

    inp = manifest["input"]
    if inp.get("layout", "NCHW") != "NCHW":
        raise BackendError(f"{manifest_path}: only NCHW graph input is supported")
    outputs = manifest["outputs"]
    return Graph(
        input_name=inp.get("name", "image"),
        input_shape=tuple(int(d) for d in inp["shape"]),
        ops=list(manifest["ops"]),
        weights=weights,
        output_logits=outputs["logits"],
        output_boxes=outputs["boxes"],
    )


class GraphBackend:
    """Detector backend executing an interchange graph with numpy."""

    def __init__(self, graph: Graph, spec: BackendSpec):
        self.graph = graph
        self.spec = spec

    @classmethod
    def load(cls, model_dir: str | Path, spec: BackendSpec) -> "GraphBackend":
        graph = load_graph(model_dir)
        expected = (spec.channels, spec.height, spec.width)
        if graph.input_shape != expected:
            raise BackendError(
                f"graph input {graph.input_shape} does not match sidecar input {expected}"
            )
        return cls(graph, spec)

    def infer(self, batch: np.ndarray) -> BackendOutput:
        logits, boxes = self.graph.run(batch)
        q = self.spec.num_queries
        if logits.ndim != 3 or logits.shape[1] != q:
            raise BackendError(f"graph produced logits {logits.shape}, expected (B, {q}, classes)")
        if boxes.shape != (batch.shape[0], q, 4):
            raise BackendError(f"graph produced boxes {boxes.shape}, expected (B, {q}, 4)")
        return BackendOutput(logits=logits, boxes=boxes)
