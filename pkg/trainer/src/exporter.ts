/** Interchange export: graph manifest + raw float32 weights + sidecar.
 *
 * The emitted op list mirrors model.ts exactly; the consuming engine
 * executes it with plain array math, so the two sides agree as long as
 * this file and model.ts stay in lockstep. A parity file with reference
 * outputs for a handful of tiles lets any consumer assert that.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import { batchImages, IMAGE_HEIGHT, IMAGE_WIDTH, NORMALIZE_MEAN, NORMALIZE_STD } from "./coco.js";
import { CUE_CLASS, NO_OBJECT_CLASS, NUM_QUERIES, POOL, forwardImages, getWeights, type CueNet } from "./model.js";
import type { Sample } from "./types.js";

const GRAPH_OPS = [
  { op: "transpose_nchw_nhwc", input: "image", output: "t0" },
  { op: "maxpool2d", input: "t0", output: "t1", size: POOL },
  { op: "concat_coord_x", input: "t1", output: "t2" },
  { op: "conv2d", input: "t2", output: "t3", weights: "conv1_w", bias: "conv1_b", stride: [16, 1], padding: "same" },
  { op: "relu", input: "t3", output: "t4" },
  { op: "conv2d", input: "t4", output: "t5", weights: "conv2_w", bias: "conv2_b", stride: [1, 5], padding: "same" },
  { op: "relu", input: "t5", output: "t6" },
  { op: "conv2d", input: "t6", output: "t7", weights: "conv3_w", bias: "conv3_b", stride: [1, 1], padding: "same" },
  { op: "relu", input: "t7", output: "t8" },
  { op: "squeeze_queries", input: "t8", output: "queries" },
  { op: "dense", input: "queries", output: "logits", weights: "logits_w", bias: "logits_b" },
  { op: "dense", input: "queries", output: "box_raw", weights: "box_w", bias: "box_b" },
  { op: "sigmoid", input: "box_raw", output: "boxes" },
];

export function exportModel(model: CueNet, outDir: string): void {
  fs.mkdirSync(outDir, { recursive: true });

  const weights = getWeights(model);
  const tensors: Record<string, { offset: number; shape: number[] }> = {};
  let offset = 0;
  let total = 0;
  for (const { data } of weights.values()) total += data.length;
  const flat = new Float32Array(total);
  for (const [name, { shape, data }] of weights) {
    tensors[name] = { offset, shape };
    flat.set(data, offset);
    offset += data.length;
  }
  fs.writeFileSync(path.join(outDir, "weights.bin"), Buffer.from(flat.buffer, flat.byteOffset, flat.byteLength));

  const manifest = {
    format: "cuegraph",
    version: 1,
    input: { layout: "NCHW", shape: [3, IMAGE_HEIGHT, IMAGE_WIDTH], name: "image" },
    weights_file: "weights.bin",
    tensors,
    ops: GRAPH_OPS,
    outputs: { logits: "logits", boxes: "boxes" },
  };
  fs.writeFileSync(path.join(outDir, "model.json"), JSON.stringify(manifest, null, 2));

  const sidecar = {
    version: 1,
    kind: "cuegraph",
    num_queries: NUM_QUERIES,
    cue_class_index: CUE_CLASS,
    no_object_index: NO_OBJECT_CLASS,
    input: { channels: 3, height: IMAGE_HEIGHT, width: IMAGE_WIDTH },
    normalize: { mean: NORMALIZE_MEAN, std: NORMALIZE_STD },
  };
  fs.writeFileSync(path.join(outDir, "sidecar.json"), JSON.stringify(sidecar, null, 2));
}

/** Read back an exported model's weights (also the warm-start path). */
export function loadExportedWeights(dir: string): Map<string, Float32Array> {
  const manifest = JSON.parse(fs.readFileSync(path.join(dir, "model.json"), "utf-8"));
  if (manifest.format !== "cuegraph" || manifest.version !== 1) {
    throw new Error(`${dir}: not a cuegraph v1 model`);
  }
  const raw = fs.readFileSync(path.join(dir, manifest.weights_file ?? "weights.bin"));
  const flat = new Float32Array(raw.buffer, raw.byteOffset, raw.byteLength / 4);
  const out = new Map<string, Float32Array>();
  for (const [name, entry] of Object.entries<{ offset: number; shape: number[] }>(manifest.tensors)) {
    const count = entry.shape.reduce((a, c) => a * c, 1);
    out.set(name, flat.slice(entry.offset, entry.offset + count));
  }
  return out;
}

export interface ParityFile {
  tiles: string[];
  outputs: { logits: number[][]; boxes: number[][] }[];
}

/** Reference forward-pass outputs for cross-implementation checks. */
export function writeParity(model: CueNet, samples: Sample[], outDir: string, count = 20): ParityFile {
  const subset = samples.slice(0, count);
  const images = batchImages(subset);
  const { logits, boxes } = forwardImages(model, images);
  const parity: ParityFile = {
    tiles: subset.map((s) => s.file),
    outputs: subset.map((_, i) => ({
      logits: (logits.arraySync() as number[][][])[i],
      boxes: (boxes.arraySync() as number[][][])[i],
    })),
  };
  logits.dispose();
  boxes.dispose();
  images.dispose();
  fs.writeFileSync(path.join(outDir, "parity.json"), JSON.stringify(parity));
  return parity;
}
