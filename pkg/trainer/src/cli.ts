/** CLI: train on exported tiles, export the interchange model. */

import * as fs from "node:fs";
import * as path from "node:path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { loadSamples } from "./coco.js";
import { evaluateRecovery } from "./loss.js";
import { batchImages } from "./coco.js";
import { exportModel, loadExportedWeights, writeParity } from "./exporter.js";
import { logToCsv, train } from "./train.js";
import { DEFAULT_CONFIG } from "./types.js";

async function runTrain(argv: any): Promise<void> {
  const samples = loadSamples(argv.tiles, argv.annotations);
  console.log(`loaded ${samples.length} tiles from ${argv.tiles}`);

  const cfg = {
    ...DEFAULT_CONFIG,
    epochs: argv.epochs,
    batchSize: argv.batchSize,
    backboneLr: argv.backboneLr,
    headLr: argv.headLr,
    weightDecay: argv.weightDecay,
    patience: argv.patience,
    valFraction: argv.valFraction,
    seed: argv.seed,
  };

  const initialWeights = argv.init ? loadExportedWeights(argv.init) : undefined;
  if (argv.init) console.log(`warm start from ${argv.init}`);

  const { model, log } = await train(samples, cfg, {
    initialWeights,
    onEpoch: (e) => {
      if (e.epoch % 10 === 0 || e.epoch === 1) {
        console.log(`epoch ${e.epoch}: train ${e.trainLoss.toFixed(4)} val ${e.valLoss.toFixed(4)} lr ${e.lr.toExponential(1)}`);
      }
    },
  });

  fs.mkdirSync(argv.out, { recursive: true });
  fs.writeFileSync(path.join(argv.out, "training_log.csv"), logToCsv(log));
  exportModel(model, argv.out);
  writeParity(model, samples, argv.out, argv.parityCount);

  const images = batchImages(samples);
  const recovery = evaluateRecovery(model, images, samples);
  images.dispose();
  const recovered = recovery.filter((r) => r.score > 0.9 && r.iou > 0.5).length;
  console.log(`recovered ${recovered}/${samples.length} boxes at score > 0.9, IoU > 0.5`);
  console.log(`exported model + sidecar + parity to ${argv.out}`);
}

export async function main(args: string[]): Promise<void> {
  await yargs(args)
    .command(
      "train",
      "fine-tune the detector on exported tiles and export the interchange model",
      (y) =>
        y
          .option("tiles", { type: "string", demandOption: true, describe: "tile PNG directory" })
          .option("annotations", { type: "string", demandOption: true, describe: "annotation JSON" })
          .option("out", { type: "string", demandOption: true, describe: "output model directory" })
          .option("epochs", { type: "number", default: DEFAULT_CONFIG.epochs })
          .option("batch-size", { type: "number", default: DEFAULT_CONFIG.batchSize })
          .option("backbone-lr", { type: "number", default: DEFAULT_CONFIG.backboneLr })
          .option("head-lr", { type: "number", default: DEFAULT_CONFIG.headLr })
          .option("weight-decay", { type: "number", default: DEFAULT_CONFIG.weightDecay })
          .option("patience", { type: "number", default: DEFAULT_CONFIG.patience })
          .option("val-fraction", { type: "number", default: DEFAULT_CONFIG.valFraction })
          .option("seed", { type: "number", default: DEFAULT_CONFIG.seed })
          .option("parity-count", { type: "number", default: 20 })
          .option("init", { type: "string", describe: "warm-start from an exported model directory" }),
      runTrain,
    )
    .command(
      "export",
      "re-export an existing model directory (refreshes manifest + sidecar)",
      (y) =>
        y
          .option("checkpoint", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true }),
      async (argv: any) => {
        const { createModel, setWeights } = await import("./model.js");
        const model = createModel(0);
        setWeights(model, loadExportedWeights(argv.checkpoint));
        exportModel(model, argv.out);
        console.log(`re-exported ${argv.checkpoint} -> ${argv.out}`);
      },
    )
    .demandCommand(1)
    .strict()
    .parseAsync();
}

const isDirectRun = process.argv[1] && path.resolve(process.argv[1]) === new URL(import.meta.url).pathname;
if (isDirectRun) {
  main(hideBin(process.argv)).catch((err) => {
    console.error(err.message ?? err);
    process.exit(1);
  });
}
