/** Query matching and the detection loss.
 *
 * Each ground-truth box is assigned to the query with the lowest
 * class-plus-L1 cost (computed from a gradient-free forward pass, as
 * usual for set-prediction training). Matched queries learn the cue
 * class and their box; all others learn no-object, down-weighted so the
 * negatives do not drown the handful of positives.
 */

import * as tf from "@tensorflow/tfjs";

import { CUE_CLASS, NO_OBJECT_CLASS, NUM_CLASSES, NUM_QUERIES, forward, forwardImages, type CueNet } from "./model.js";
import type { Bbox, Sample, TrainConfig } from "./types.js";

export interface Assignment {
  image: number;
  query: number;
  box: Bbox;
}

/** Natural column of query q (stride-5 grid, 'same' padding) in [0, 1]. */
export function queryPosition(q: number): number {
  return (q * 5 + 2) / 355;
}

export function matchQueries(
  cueProbs: Float32Array, // (B * Q)
  boxes: Float32Array, // (B * Q * 4)
  samples: Sample[],
  boxCostWeight: number,
  positionPriorWeight = 0,
): Assignment[] {
  const assignments: Assignment[] = [];
  samples.forEach((sample, i) => {
    if (sample.boxes.length === 0) return;
    const costs: { query: number; target: number; cost: number }[] = [];
    for (let q = 0; q < NUM_QUERIES; q++) {
      const p = cueProbs[i * NUM_QUERIES + q];
      const base = (i * NUM_QUERIES + q) * 4;
      sample.boxes.forEach((gt, t) => {
        let l1 = 0;
        for (let k = 0; k < 4; k++) l1 += Math.abs(boxes[base + k] - gt[k]);
        const prior = positionPriorWeight * Math.abs(queryPosition(q) - gt[0]);
        costs.push({ query: q, target: t, cost: -p + boxCostWeight * l1 + prior });
      });
    }
    costs.sort((a, b) => a.cost - b.cost);
    const usedQ = new Set<number>();
    const usedT = new Set<number>();
    for (const c of costs) {
      if (usedQ.has(c.query) || usedT.has(c.target)) continue;
      usedQ.add(c.query);
      usedT.add(c.target);
      assignments.push({ image: i, query: c.query, box: sample.boxes[c.target] });
      if (usedT.size === sample.boxes.length) break;
    }
  });
  return assignments;
}

/** Forward pass without gradients, then cost-based assignment. */
export function assignBatch(model: CueNet, features: tf.Tensor4D, samples: Sample[], cfg: TrainConfig): Assignment[] {
  const [probs, boxes] = tf.tidy(() => {
    const out = forward(model, features);
    return [tf.softmax(out.logits, -1).slice([0, 0, CUE_CLASS], [-1, -1, 1]), out.boxes];
  });
  const assignments = matchQueries(
    probs.dataSync() as Float32Array,
    boxes.dataSync() as Float32Array,
    samples,
    cfg.boxLossWeight,
    cfg.positionPriorWeight,
  );
  probs.dispose();
  boxes.dispose();
  return assignments;
}

/** Scalar loss for fixed assignments; differentiable in the weights.
 *
 * The box term is a masked L1 rather than a gather (tfjs ships no
 * GatherNd gradient): matched positions carry their target box and a
 * unit mask, everything else contributes zero.
 */
export function detectionLoss(
  model: CueNet,
  features: tf.Tensor4D,
  assignments: Assignment[],
  cfg: TrainConfig,
): tf.Scalar {
  const batch = features.shape[0];
  const classTarget = new Int32Array(batch * NUM_QUERIES).fill(NO_OBJECT_CLASS);
  const classWeight = new Float32Array(batch * NUM_QUERIES).fill(cfg.noObjectWeight);
  const boxMask = new Float32Array(batch * NUM_QUERIES);
  const boxTarget = new Float32Array(batch * NUM_QUERIES * 4);
  for (const a of assignments) {
    const at = a.image * NUM_QUERIES + a.query;
    classTarget[at] = CUE_CLASS;
    // one positive per ~70 negatives: boost it so the class head
    // separates within a short toy schedule
    classWeight[at] = 4.0;
    boxMask[at] = 1.0;
    boxTarget.set(a.box, at * 4);
  }

  return tf.tidy(() => {
    const { logits, boxes } = forward(model, features);
    const oneHot = tf.oneHot(tf.tensor(classTarget, [batch, NUM_QUERIES], "int32"), NUM_CLASSES);
    const ce = tf.losses.softmaxCrossEntropy(
      oneHot,
      logits,
      tf.tensor(classWeight, [batch, NUM_QUERIES]),
      undefined,
      tf.Reduction.SUM_BY_NONZERO_WEIGHTS,
    );
    if (assignments.length === 0) return ce.asScalar();
    const mask = tf.tensor(boxMask, [batch, NUM_QUERIES, 1]);
    const gt = tf.tensor(boxTarget, [batch, NUM_QUERIES, 4]);
    const l1 = boxes.sub(gt).abs().mul(mask).sum().div(assignments.length);
    return ce.add(l1.mul(cfg.boxLossWeight)).asScalar();
  });
}

/** IoU of two normalized (cx, cy, w, h) boxes. */
export function iouCxcywh(a: Bbox, b: Bbox): number {
  const corners = ([cx, cy, w, h]: Bbox) => [cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2];
  const [ax0, ay0, ax1, ay1] = corners(a);
  const [bx0, by0, bx1, by1] = corners(b);
  const iw = Math.max(0, Math.min(ax1, bx1) - Math.max(ax0, bx0));
  const ih = Math.max(0, Math.min(ay1, by1) - Math.max(ay0, by0));
  const inter = iw * ih;
  const union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return union > 0 ? inter / union : 0;
}

export interface Recovery {
  file: string;
  score: number;
  iou: number;
  predBox: Bbox;
}

/** Best-query prediction per sample, for overfit verification. */
export function evaluateRecovery(model: CueNet, images: tf.Tensor4D, samples: Sample[]): Recovery[] {
  const [probsT, boxesT] = tf.tidy(() => {
    const out = forwardImages(model, images);
    return [tf.softmax(out.logits, -1).slice([0, 0, CUE_CLASS], [-1, -1, 1]), out.boxes];
  });
  const probs = probsT.dataSync() as Float32Array;
  const boxes = boxesT.dataSync() as Float32Array;
  probsT.dispose();
  boxesT.dispose();

  return samples.map((sample, i) => {
    let best = 0;
    for (let q = 1; q < NUM_QUERIES; q++) {
      if (probs[i * NUM_QUERIES + q] > probs[i * NUM_QUERIES + best]) best = q;
    }
    const base = (i * NUM_QUERIES + best) * 4;
    const predBox: Bbox = [boxes[base], boxes[base + 1], boxes[base + 2], boxes[base + 3]];
    const iou = sample.boxes.length ? iouCxcywh(predBox, sample.boxes[0]) : 0;
    return { file: sample.file, score: probs[i * NUM_QUERIES + best], iou, predBox };
  });
}
