/**
 * Export operations: framework checkpoint -> model-spec + weights
 * archive, image directory -> batch archive, and per-layer reference
 * activations for cross-engine validation. Every operation returns a
 * manifest recording provenance, layer mapping, and file checksums.
 */

import * as crypto from "crypto";
import * as fs from "fs";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";

import { Tensor, writeArchive, readArchive } from "./archive";
import { loadCheckpoint } from "./checkpoint";
import { convertModel, formatModelSpec } from "./convert";
import { decodeNetpbm, resizeNearest } from "./ppm";

export interface ExportManifest {
  framework: string;
  frameworkVersion: string;
  operation: "export-model" | "export-batch" | "export-activations";
  /** framework layer name -> toolkit layer names it expanded into */
  layerMapping: Record<string, string[]>;
  kernelLayout: string;
  preprocessing: Record<string, unknown>;
  files: Record<string, { sha256: string; bytes: number }>;
  warnings: string[];
}

const KERNEL_LAYOUT =
  "no transposition applied: conv kernels [kh, kw, in, out], dense kernels " +
  "[in, out] on both sides; values widened float32 -> float64";

function sha256(filePath: string): { sha256: string; bytes: number } {
  const data = fs.readFileSync(filePath);
  return { sha256: crypto.createHash("sha256").update(data).digest("hex"), bytes: data.length };
}

/** JSON.stringify with recursively sorted keys, for byte-stable manifests. */
export function stableStringify(value: unknown): string {
  const sortKeys = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sortKeys);
    if (v !== null && typeof v === "object") {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as object).sort()) {
        out[key] = sortKeys((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sortKeys(value), null, 2) + "\n";
}

function baseManifest(operation: ExportManifest["operation"]): ExportManifest {
  return {
    framework: "tensorflow.js",
    frameworkVersion: tf.version["tfjs"] ?? "unknown",
    operation,
    layerMapping: {},
    kernelLayout: KERNEL_LAYOUT,
    preprocessing: {},
    files: {},
    warnings: [],
  };
}

export function verifyManifest(manifest: ExportManifest, dir: string): string[] {
  const problems: string[] = [];
  for (const [name, expected] of Object.entries(manifest.files)) {
    const filePath = path.join(dir, name);
    if (!fs.existsSync(filePath)) {
      problems.push(`${name}: missing`);
      continue;
    }
    const actual = sha256(filePath);
    if (actual.sha256 !== expected.sha256) problems.push(`${name}: checksum mismatch`);
  }
  return problems;
}

export async function exportModel(checkpointPath: string, outDir: string): Promise<ExportManifest> {
  const model = await loadCheckpoint(checkpointPath);
  const converted = convertModel(model);
  fs.mkdirSync(outDir, { recursive: true });

  const specPath = path.join(outDir, "model.spec");
  fs.writeFileSync(specPath, formatModelSpec(converted.layers, converted.inputShape));

  // Sort entries so re-export is byte-identical regardless of traversal order.
  const sorted = new Map([...converted.weights.entries()].sort(([a], [b]) => (a < b ? -1 : 1)));
  const weightsPath = path.join(outDir, "weights.qixt");
  writeArchive(sorted, weightsPath);

  const manifest = baseManifest("export-model");
  manifest.layerMapping = converted.layerMapping;
  manifest.files["model.spec"] = sha256(specPath);
  manifest.files["weights.qixt"] = sha256(weightsPath);
  fs.writeFileSync(path.join(outDir, "manifest.json"), stableStringify(manifest));
  model.dispose();
  return manifest;
}

export interface BatchOptions {
  height: number;
  width: number;
  entry?: string;
}

export function exportBatch(imageDir: string, options: BatchOptions, outPath: string): ExportManifest {
  const { height, width } = options;
  const names = fs
    .readdirSync(imageDir)
    .filter((n) => /\.(ppm|pgm)$/i.test(n))
    .sort();
  const manifest = baseManifest("export-batch");
  manifest.preprocessing = {
    resize: [height, width],
    scale: "pixel / 255 into [0, 1]",
    order: "lexicographic by filename",
    images: [] as string[],
  };

  const samples: Float64Array[] = [];
  for (const name of names) {
    let image;
    try {
      image = resizeNearest(decodeNetpbm(path.join(imageDir, name)), height, width);
    } catch (err) {
      manifest.warnings.push(`skipped ${name}: ${(err as Error).message}`);
      continue;
    }
    const sample = new Float64Array(height * width * 3);
    for (let i = 0; i < sample.length; i++) sample[i] = image.pixels[i] / 255;
    samples.push(sample);
    (manifest.preprocessing.images as string[]).push(name);
  }
  if (samples.length === 0) {
    throw new Error(`no images in ${imageDir} (supported: .ppm/.pgm)`);
  }

  const data = new Float64Array(samples.length * height * width * 3);
  samples.forEach((sample, i) => data.set(sample, i * sample.length));
  const tensor: Tensor = { shape: [samples.length, height, width, 3], data };
  writeArchive(new Map([[options.entry ?? "images", tensor]]), outPath);
  manifest.files[path.basename(outPath)] = sha256(outPath);
  fs.writeFileSync(outPath + ".manifest.json", stableStringify(manifest));
  return manifest;
}

export async function exportReferenceActivations(
  checkpointPath: string,
  batchPath: string,
  layerNames: string[],
  outPath: string,
  batchEntry = "images",
): Promise<ExportManifest> {
  const model = await loadCheckpoint(checkpointPath);
  const converted = convertModel(model);
  const batch = readArchive(batchPath).get(batchEntry);
  if (batch === undefined) {
    throw new Error(`batch archive has no entry ${JSON.stringify(batchEntry)}`);
  }

  const available = model.layers.map((l) => l.name);
  for (const name of layerNames) {
    if (!available.includes(name)) {
      throw new Error(
        `unknown layer ${JSON.stringify(name)}; available: ${available.join(", ")}`,
      );
    }
  }

  const input = tf.tensor(Array.from(batch.data), batch.shape, "float32");
  const entries = new Map<string, Tensor>();
  const manifest = baseManifest("export-activations");
  manifest.layerMapping = converted.layerMapping;
  try {
    for (const name of layerNames) {
      const layer = model.getLayer(name);
      const probe = tf.model({ inputs: model.inputs, outputs: layer.output as tf.SymbolicTensor });
      const out = probe.predict(input) as tf.Tensor;
      entries.set(name, { shape: out.shape.slice(), data: Float64Array.from(out.dataSync()) });
      out.dispose();
    }
  } finally {
    input.dispose();
    model.dispose();
  }
  writeArchive(entries, outPath);
  manifest.files[path.basename(outPath)] = sha256(outPath);
  fs.writeFileSync(outPath + ".manifest.json", stableStringify(manifest));
  return manifest;
}
