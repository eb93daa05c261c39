/**
 * Cross-engine agreement: a checkpoint exported from TensorFlow.js is
 * analyzed with the Python engine; layer activations captured by that
 * engine must match the framework's own forward pass on the identical
 * batch archive. Requires the `qixai` Python package to be installed.
 */

import { execFileSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { afterAll, describe, expect, it } from "vitest";

import { readArchive, Tensor } from "../src/archive";
import { saveCheckpoint } from "../src/checkpoint";
import { exportBatch, exportModel, exportReferenceActivations } from "../src/exporter";
import { buildFixtureModel, mulberry32 } from "../src/fixture";
import { encodePpm } from "../src/ppm";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "qixai-xeng-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

const TOLERANCE = 1e-4; // float32 source weights and framework forward

/** Per-channel spatial mean of an N x H x W x C reference activation. */
function gap(t: Tensor): number[][] {
  const [n, h, w, c] = t.shape;
  const out: number[][] = [];
  for (let s = 0; s < n; s++) {
    const row = new Array(c).fill(0);
    for (let i = 0; i < h * w; i++) {
      for (let k = 0; k < c; k++) row[k] += t.data[(s * h * w + i) * c + k];
    }
    out.push(row.map((v) => v / (h * w)));
  }
  return out;
}

function maxAbsDiff(a: number[], b: Float64Array | number[]): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}

describe("cross-engine agreement", () => {
  it("python forward matches the framework forward to 1e-4 on 5 samples per layer", async () => {
    // 1. Export the fixture checkpoint and a 5-image batch.
    const checkpoint = path.join(tmp, "fixture.ckpt.json");
    await saveCheckpoint(buildFixtureModel(), checkpoint);
    const modelDir = path.join(tmp, "model");
    await exportModel(checkpoint, modelDir);

    const imageDir = path.join(tmp, "images");
    fs.mkdirSync(imageDir);
    const next = mulberry32(1234);
    for (let s = 0; s < 5; s++) {
      const pixels = new Uint8Array(32 * 32 * 3);
      for (let i = 0; i < pixels.length; i++) pixels[i] = Math.floor(next() * 256);
      fs.writeFileSync(
        path.join(imageDir, `sample${s}.ppm`),
        encodePpm({ height: 32, width: 32, pixels }),
      );
    }
    const batchPath = path.join(tmp, "batch.qixt");
    exportBatch(imageDir, { height: 32, width: 32 }, batchPath);

    // 2. Framework-side reference activations on the very same archive.
    const refsPath = path.join(tmp, "refs.qixt");
    await exportReferenceActivations(checkpoint, batchPath, ["conv1", "conv2", "dense"], refsPath);
    const refs = readArchive(refsPath);

    // 3. Run the Python analysis engine on the exported files.
    const outDir = path.join(tmp, "analysis");
    const config = {
      model_spec: path.join(modelDir, "model.spec"),
      weights: path.join(modelDir, "weights.qixt"),
      batch: { archive: batchPath, entry: "images" },
      layers: { conv1: "conv1_act", conv2: "conv2_act", dense: "dense" },
      pca_components: 1,
      ig: { enabled: false },
      output_dir: outDir,
    };
    const configPath = path.join(tmp, "config.json");
    fs.writeFileSync(configPath, JSON.stringify(config));
    execFileSync("python3", ["-m", "qixai.cli", "analyze", "--config", configPath, "--audit"], {
      stdio: ["ignore", "pipe", "pipe"],
    });

    // 4. Compare: pooled conv activations and raw dense activations.
    const artifacts = readArchive(path.join(outDir, "artifacts.qixt"));
    for (const [frameworkLayer, entryName] of [
      ["conv1", "gap.conv1"],
      ["conv2", "gap.conv2"],
    ] as const) {
      const engine = artifacts.get(entryName)!;
      expect(engine).toBeDefined();
      const reference = gap(refs.get(frameworkLayer)!);
      const [n, c] = engine.shape;
      expect(n).toBe(5);
      for (let s = 0; s < n; s++) {
        const engineRow = Array.from(engine.data.subarray(s * c, (s + 1) * c));
        expect(maxAbsDiff(reference[s], engineRow)).toBeLessThan(TOLERANCE);
      }
    }
    const dense = artifacts.get("dense.activations")!;
    const denseRef = refs.get("dense")!;
    expect(dense.shape).toEqual(denseRef.shape);
    expect(maxAbsDiff(Array.from(denseRef.data), dense.data)).toBeLessThan(TOLERANCE);
  }, 120_000);
});
