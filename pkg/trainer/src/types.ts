/** Shared types for the tile dataset and training configuration. */

export type Bbox = [number, number, number, number]; // x, y, w, h in pixels

export interface TileImage {
  id: number;
  file: string;
  width: number;
  height: number;
}

export interface TileAnnotation {
  image_id: number;
  bbox: Bbox;
  category_id: number;
}

export interface AnnotationSet {
  images: TileImage[];
  annotations: TileAnnotation[];
  categories: { id: number; name: string }[];
}

/** One loaded training sample: normalized pixels plus its target boxes. */
export interface Sample {
  id: number;
  file: string;
  /** grayscale pixels in [0, 255], row-major height x width */
  pixels: Uint8Array;
  /** normalized cxcywh targets in [0, 1], one per annotation */
  boxes: Bbox[];
}

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  backboneLr: number;
  headLr: number;
  weightDecay: number;
  /** epochs without val-loss improvement before the LR drops */
  patience: number;
  lrDropFactor: number;
  valFraction: number;
  seed: number;
  /** weight of the no-object class in the classification loss */
  noObjectWeight: number;
  boxLossWeight: number;
  /** matching-cost weight on |query position - target cx|; breaks the
   * cold-start tie when every query still predicts the same box */
  positionPriorWeight: number;
}

export const DEFAULT_CONFIG: TrainConfig = {
  epochs: 50,
  batchSize: 192,
  backboneLr: 1e-6,
  headLr: 1e-5,
  weightDecay: 1e-4,
  patience: 10,
  lrDropFactor: 10,
  valFraction: 0.1,
  seed: 0,
  noObjectWeight: 0.1,
  boxLossWeight: 5.0,
  positionPriorWeight: 2.0,
};

export function validateConfig(cfg: TrainConfig): void {
  if (cfg.epochs < 1) throw new Error(`epochs must be >= 1, got ${cfg.epochs}`);
  if (cfg.batchSize < 1) throw new Error(`batchSize must be >= 1, got ${cfg.batchSize}`);
  for (const key of ["backboneLr", "headLr", "weightDecay"] as const) {
    if (cfg[key] < 0) throw new Error(`${key} must be >= 0, got ${cfg[key]}`);
  }
  if (cfg.backboneLr === 0 && cfg.headLr === 0) throw new Error("all learning rates are zero");
  if (cfg.patience < 1) throw new Error(`patience must be >= 1, got ${cfg.patience}`);
  if (cfg.lrDropFactor <= 1) throw new Error(`lrDropFactor must be > 1, got ${cfg.lrDropFactor}`);
  if (cfg.valFraction < 0 || cfg.valFraction >= 1) {
    throw new Error(`valFraction must be in [0, 1), got ${cfg.valFraction}`);
  }
}

/** Deterministic small PRNG so shuffles are reproducible across runs. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffled<T>(items: T[], rand: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}
