/** The compact cue detector.
 *
 * A column detector with query-style outputs: pooled spectrogram rows get
 * a column-coordinate channel, a full-height conv collapses the image to
 * a 1-D feature row, two more convs widen the receptive field and stride
 * down to 71 query positions, and two dense heads emit class logits and
 * normalized (cx, cy, w, h) boxes per query. The coordinate channel is
 * what lets a convolutional head regress absolute positions.
 *
 * The layer list mirrors the interchange graph op-for-op (see
 * exporter.ts); anything changed here must change there too.
 */

import * as tf from "@tensorflow/tfjs";

export const NUM_QUERIES = 71;
export const NUM_CLASSES = 2;
export const CUE_CLASS = 0;
export const NO_OBJECT_CLASS = 1;

export const POOL: [number, number] = [8, 1];
// conv1 is a per-column projection (kernel width 1): width context comes
// from conv2/conv3, and the thin kernel keeps its backprop affordable on
// the plain CPU backend
const CONV_SPECS = [
  { name: "conv1", kernel: [16, 1], stride: [16, 1], inCh: 4, outCh: 16 },
  { name: "conv2", kernel: [1, 9], stride: [1, 5], inCh: 16, outCh: 24 },
  { name: "conv3", kernel: [1, 5], stride: [1, 1], inCh: 24, outCh: 32 },
] as const;
const FEATURES = 32;

export interface CueNet {
  /** canonical weight order, as serialized in the interchange file */
  weights: Map<string, tf.Variable>;
  backboneNames: string[];
  headNames: string[];
}

export function createModel(seed = 0): CueNet {
  const weights = new Map<string, tf.Variable>();
  let s = seed;
  const next = () => ++s;

  for (const spec of CONV_SPECS) {
    const init = tf.initializers.heNormal({ seed: next() });
    const shape = [spec.kernel[0], spec.kernel[1], spec.inCh, spec.outCh];
    weights.set(`${spec.name}_w`, tf.variable(init.apply(shape) as tf.Tensor, true, `${spec.name}_w`));
    weights.set(`${spec.name}_b`, tf.variable(tf.zeros([spec.outCh]), true, `${spec.name}_b`));
  }
  const headInit = tf.initializers.glorotUniform({ seed: next() });
  weights.set("logits_w", tf.variable(headInit.apply([FEATURES, NUM_CLASSES]) as tf.Tensor, true, "logits_w"));
  weights.set("logits_b", tf.variable(tf.zeros([NUM_CLASSES]), true, "logits_b"));
  weights.set("box_w", tf.variable(headInit.apply([FEATURES, 4]) as tf.Tensor, true, "box_w"));
  // start boxes at the label statistics: center height, 21-px width,
  // full height; only cx has real variance to learn
  const boxBias = [0.0, 0.0, Math.log(0.0592 / (1 - 0.0592)), 6.9];
  weights.set("box_b", tf.variable(tf.tensor(boxBias), true, "box_b"));

  return {
    weights,
    // conv1 is the image-feature extractor (the "backbone" LR group);
    // the striding detection stack and heads train at the higher rate
    backboneNames: ["conv1_w", "conv1_b"],
    headNames: [
      "conv2_w", "conv2_b", "conv3_w", "conv3_b",
      "logits_w", "logits_b", "box_w", "box_b",
    ],
  };
}

export function weightOrder(model: CueNet): string[] {
  return [...model.backboneNames, ...model.headNames];
}

/** Parameter-free front end: pool rows, append the column coordinate.
 *
 * Split out from the trainable stack so training can run it once per
 * sample (nothing upstream of it has gradients, and max-pool backprop
 * over full-resolution images dominates the step time otherwise).
 */
export function preprocess(images: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    const x: tf.Tensor4D = tf.maxPool(images, POOL, POOL, "valid");
    const [b, h, width] = x.shape;
    const ramp = tf.linspace(0, 1, width).reshape([1, 1, width, 1]).tile<tf.Tensor4D>([b, h, 1, 1]);
    return tf.concat([x, ramp], 3);
  });
}

/** Trainable stack over preprocessed features (B, 16, 355, 4). */
export function forward(model: CueNet, features: tf.Tensor4D): { logits: tf.Tensor3D; boxes: tf.Tensor3D } {
  return tf.tidy(() => {
    const w = (name: string) => model.weights.get(name)!;
    const b = features.shape[0];

    let x = features;
    for (const spec of CONV_SPECS) {
      x = tf.conv2d(
        x,
        w(`${spec.name}_w`) as unknown as tf.Tensor4D,
        spec.stride as [number, number],
        "same",
      );
      x = tf.add(x, w(`${spec.name}_b`));
      x = tf.relu(x);
    }

    const queries = x.reshape([b, NUM_QUERIES, FEATURES]);
    const flat = queries.reshape([b * NUM_QUERIES, FEATURES]);
    const logits = flat
      .matMul(w("logits_w") as unknown as tf.Tensor2D)
      .add(w("logits_b"))
      .reshape([b, NUM_QUERIES, NUM_CLASSES]) as tf.Tensor3D;
    const boxes = tf.sigmoid(
      flat.matMul(w("box_w") as unknown as tf.Tensor2D).add(w("box_b")),
    ).reshape([b, NUM_QUERIES, 4]) as tf.Tensor3D;
    return { logits, boxes };
  });
}

/** Full image-to-detections pass (what the exported graph computes). */
export function forwardImages(model: CueNet, images: tf.Tensor4D): { logits: tf.Tensor3D; boxes: tf.Tensor3D } {
  return tf.tidy(() => {
    const features = preprocess(images);
    return forward(model, features);
  });
}

export function setWeights(model: CueNet, values: Map<string, Float32Array>): void {
  for (const [name, variable] of model.weights) {
    const data = values.get(name);
    if (!data) throw new Error(`missing weight ${name}`);
    const expected = variable.shape.reduce((a, c) => a * c, 1);
    if (data.length !== expected) {
      throw new Error(`${name}: ${data.length} values for shape [${variable.shape}]`);
    }
    variable.assign(tf.tensor(data, variable.shape));
  }
}

export function getWeights(model: CueNet): Map<string, { shape: number[]; data: Float32Array }> {
  const out = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const name of weightOrder(model)) {
    const v = model.weights.get(name)!;
    out.set(name, { shape: v.shape.slice(), data: v.dataSync() as Float32Array });
  }
  return out;
}

export function disposeModel(model: CueNet): void {
  for (const v of model.weights.values()) v.dispose();
}
