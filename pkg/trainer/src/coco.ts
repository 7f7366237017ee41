/** Tile dataset loading: annotation JSON + grayscale PNG tiles.
 *
 * The annotation file follows the engine's export format: `images`
 * (id/file/width/height), `annotations` (image_id, top-left `bbox`
 * [x, y, w, h] in pixels, category_id), `categories`. Boxes are converted
 * to normalized center format here because that is what the model
 * regresses.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import pngjs from "pngjs";
import * as tf from "@tensorflow/tfjs";

import type { AnnotationSet, Bbox, Sample } from "./types.js";

const { PNG } = pngjs;

export const IMAGE_HEIGHT = 128;
export const IMAGE_WIDTH = 355;
export const NORMALIZE_MEAN = [0.485, 0.456, 0.406];
export const NORMALIZE_STD = [0.229, 0.224, 0.225];

export function loadAnnotations(file: string): AnnotationSet {
  const doc = JSON.parse(fs.readFileSync(file, "utf-8")) as AnnotationSet;
  if (!Array.isArray(doc.images) || !Array.isArray(doc.annotations)) {
    throw new Error(`${file}: missing images/annotations arrays`);
  }
  for (const img of doc.images) {
    if (img.width !== IMAGE_WIDTH || img.height !== IMAGE_HEIGHT) {
      throw new Error(`${file}: image ${img.id} is ${img.width}x${img.height}, expected ${IMAGE_WIDTH}x${IMAGE_HEIGHT}`);
    }
  }
  const ids = new Set(doc.images.map((i) => i.id));
  for (const ann of doc.annotations) {
    if (!ids.has(ann.image_id)) throw new Error(`${file}: annotation references unknown image ${ann.image_id}`);
    const [x, y, w, h] = ann.bbox;
    if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > IMAGE_WIDTH || y + h > IMAGE_HEIGHT) {
      throw new Error(`${file}: bbox [${ann.bbox}] outside the image`);
    }
  }
  return doc;
}

export function decodeGrayPng(file: string): Uint8Array {
  const png = PNG.sync.read(fs.readFileSync(file));
  if (png.width !== IMAGE_WIDTH || png.height !== IMAGE_HEIGHT) {
    throw new Error(`${file}: ${png.width}x${png.height}, expected ${IMAGE_WIDTH}x${IMAGE_HEIGHT}`);
  }
  const pixels = new Uint8Array(png.width * png.height);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = png.data[i * 4]; // pngjs expands grayscale to RGBA
  }
  return pixels;
}

/** Top-left pixel bbox -> normalized (cx, cy, w, h). */
export function toCenterFormat(bbox: Bbox): Bbox {
  const [x, y, w, h] = bbox;
  return [(x + w / 2) / IMAGE_WIDTH, (y + h / 2) / IMAGE_HEIGHT, w / IMAGE_WIDTH, h / IMAGE_HEIGHT];
}

export function loadSamples(tilesDir: string, annotationsFile: string): Sample[] {
  const set = loadAnnotations(annotationsFile);
  const byImage = new Map<number, Bbox[]>();
  for (const ann of set.annotations) {
    const list = byImage.get(ann.image_id) ?? [];
    list.push(toCenterFormat(ann.bbox));
    byImage.set(ann.image_id, list);
  }
  return set.images.map((img) => ({
    id: img.id,
    file: img.file,
    pixels: decodeGrayPng(path.join(tilesDir, img.file)),
    boxes: byImage.get(img.id) ?? [],
  }));
}

/** 8-bit grayscale -> standardized NHWC float32 tensor (1, 128, 355, 3). */
export function normalizeImage(pixels: Uint8Array): tf.Tensor4D {
  return tf.tidy(() => {
    const gray = tf
      .tensor(pixels, [IMAGE_HEIGHT, IMAGE_WIDTH], "float32")
      .div(255);
    const channels = NORMALIZE_MEAN.map((m, c) => gray.sub(m).div(NORMALIZE_STD[c]));
    return tf.stack(channels, 2).expandDims(0) as tf.Tensor4D;
  });
}

export function batchImages(samples: Sample[]): tf.Tensor4D {
  return tf.tidy(() => {
    const tensors = samples.map((s) => normalizeImage(s.pixels));
    return tf.concat(tensors, 0) as tf.Tensor4D;
  });
}
