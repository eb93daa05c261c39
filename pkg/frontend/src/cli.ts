#!/usr/bin/env node
/** Command-line entry point for the export operations. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { exportBatch, exportModel, exportReferenceActivations } from "./exporter";

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .scriptName("qixai-export")
    .command(
      "model <checkpoint> <outdir>",
      "convert a checkpoint into model-spec + weights archive",
      (y) =>
        y
          .positional("checkpoint", { type: "string", demandOption: true })
          .positional("outdir", { type: "string", demandOption: true }),
      async (argv) => {
        const manifest = await exportModel(argv.checkpoint, argv.outdir);
        console.log(`wrote ${Object.keys(manifest.files).join(", ")} to ${argv.outdir}`);
      },
    )
    .command(
      "batch <imagedir> <out>",
      "pack a directory of .ppm/.pgm images into a batch archive",
      (y) =>
        y
          .positional("imagedir", { type: "string", demandOption: true })
          .positional("out", { type: "string", demandOption: true })
          .option("height", { type: "number", default: 32 })
          .option("width", { type: "number", default: 32 }),
      (argv) => {
        const manifest = exportBatch(
          argv.imagedir,
          { height: argv.height, width: argv.width },
          argv.out,
        );
        for (const warning of manifest.warnings) console.error(`warning: ${warning}`);
        console.log(`wrote ${argv.out}`);
      },
    )
    .command(
      "activations <checkpoint> <batch> <out>",
      "dump per-layer activations for the given framework layers",
      (y) =>
        y
          .positional("checkpoint", { type: "string", demandOption: true })
          .positional("batch", { type: "string", demandOption: true })
          .positional("out", { type: "string", demandOption: true })
          .option("layers", { type: "string", demandOption: true, describe: "comma-separated layer names" }),
      async (argv) => {
        await exportReferenceActivations(
          argv.checkpoint,
          argv.batch,
          argv.layers.split(","),
          argv.out,
        );
        console.log(`wrote ${argv.out}`);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(err ? err.message : msg);
      process.exit(err ? 2 : 1);
    })
    .parseAsync();
}

main();
