/** Training loop: AdamW with two learning-rate groups and a plateau LR drop.
 *
 * The parameter-free image front end (pool + coordinate channel) is
 * applied exactly once per sample up front; epochs then shuffle and
 * slice the cached feature tensor.
 */

import * as tf from "@tensorflow/tfjs";

import { AdamW } from "./adamw.js";
import { batchImages } from "./coco.js";
import { assignBatch, detectionLoss } from "./loss.js";
import { createModel, preprocess, setWeights, type CueNet } from "./model.js";
import { mulberry32, shuffled, validateConfig, type Sample, type TrainConfig } from "./types.js";

export interface EpochLog {
  epoch: number;
  trainLoss: number;
  valLoss: number;
  lr: number;
}

export interface TrainResult {
  model: CueNet;
  log: EpochLog[];
}

function featurize(samples: Sample[]): tf.Tensor4D {
  return tf.tidy(() => {
    const images = batchImages(samples);
    return preprocess(images);
  });
}

function evalLoss(model: CueNet, features: tf.Tensor4D, samples: Sample[], cfg: TrainConfig): number {
  const assignments = assignBatch(model, features, samples, cfg);
  const loss = detectionLoss(model, features, assignments, cfg);
  const value = loss.dataSync()[0];
  loss.dispose();
  return value;
}

export async function train(
  samples: Sample[],
  cfg: TrainConfig,
  options: {
    initialWeights?: Map<string, Float32Array>;
    onEpoch?: (log: EpochLog) => void;
  } = {},
): Promise<TrainResult> {
  validateConfig(cfg);
  if (samples.length === 0) throw new Error("no training samples");

  const rand = mulberry32(cfg.seed);
  const ordered = shuffled(samples, rand);
  const nVal = Math.floor(cfg.valFraction * ordered.length);
  const valSet = nVal > 0 ? ordered.slice(0, nVal) : ordered;
  const trainSet = nVal > 0 ? ordered.slice(nVal) : ordered;

  const trainFeatures = featurize(trainSet);
  const valFeatures = nVal > 0 ? featurize(valSet) : trainFeatures;

  const model = createModel(cfg.seed);
  if (options.initialWeights) setWeights(model, options.initialWeights);

  const optimizer = new AdamW(
    model.weights,
    [
      { names: model.backboneNames, lr: cfg.backboneLr },
      { names: model.headNames, lr: cfg.headLr },
    ],
    cfg.weightDecay,
  );

  const log: EpochLog[] = [];
  let bestVal = Infinity;
  let sinceImprovement = 0;

  // zero-rate groups are left off the tape entirely: the engine then
  // prunes their whole backward subgraph, which is what makes a frozen
  // backbone cheap on the plain CPU backend
  const trainableVars = optimizer.groups
    .filter((g) => g.lr > 0)
    .flatMap((g) => g.names)
    .map((name) => model.weights.get(name)!);

  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    const order = shuffled([...trainSet.keys()], rand);
    let epochLoss = 0;
    let nBatches = 0;
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const idx = order.slice(start, start + cfg.batchSize);
      const batchSamples = idx.map((i) => trainSet[i]);
      const features = tf.gather(trainFeatures, idx) as tf.Tensor4D;
      const assignments = assignBatch(model, features, batchSamples, cfg);
      const { value, grads } = tf.variableGrads(
        () => detectionLoss(model, features, assignments, cfg),
        trainableVars,
      );
      optimizer.applyGradients(grads);
      epochLoss += value.dataSync()[0];
      nBatches += 1;
      value.dispose();
      Object.values(grads).forEach((g) => g.dispose());
      features.dispose();
    }

    const valLoss = evalLoss(model, valFeatures, valSet, cfg);

    if (valLoss < bestVal - 1e-9) {
      bestVal = valLoss;
      sinceImprovement = 0;
    } else {
      sinceImprovement += 1;
      if (sinceImprovement >= cfg.patience) {
        optimizer.scaleLr(1 / cfg.lrDropFactor);
        sinceImprovement = 0;
      }
    }

    const entry: EpochLog = {
      epoch,
      trainLoss: epochLoss / Math.max(nBatches, 1),
      valLoss,
      lr: optimizer.groups[1].lr,
    };
    log.push(entry);
    options.onEpoch?.(entry);
  }

  trainFeatures.dispose();
  if (nVal > 0) valFeatures.dispose();
  optimizer.dispose();
  return { model, log };
}

export function logToCsv(log: EpochLog[]): string {
  const lines = ["epoch,train_loss,val_loss,lr"];
  for (const e of log) {
    lines.push(`${e.epoch},${e.trainLoss.toFixed(6)},${e.valLoss.toFixed(6)},${e.lr.toExponential(3)}`);
  }
  return lines.join("\n") + "\n";
}
