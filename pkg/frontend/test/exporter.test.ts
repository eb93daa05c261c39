import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";
import { afterAll, describe, expect, it } from "vitest";

import { readArchive } from "../src/archive";
import { saveCheckpoint } from "../src/checkpoint";
import { UnsupportedLayerError } from "../src/convert";
import {
  exportBatch,
  exportModel,
  exportReferenceActivations,
  verifyManifest,
} from "../src/exporter";
import { buildFixtureModel } from "../src/fixture";
import { encodePpm } from "../src/ppm";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "qixai-export-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function denseModel(): tf.LayersModel {
  const model = tf.sequential();
  model.add(tf.layers.dense({ inputShape: [4], units: 2, name: "head" }));
  model.layers[0].setWeights([
    tf.tensor2d([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, -0.8]]),
    tf.tensor1d([0.05, -0.05]),
  ]);
  return model;
}

function writePpm(dir: string, name: string, h: number, w: number, value: (i: number) => number) {
  const pixels = new Uint8Array(h * w * 3);
  for (let i = 0; i < pixels.length; i++) pixels[i] = value(i);
  fs.writeFileSync(path.join(dir, name), encodePpm({ height: h, width: w, pixels }));
}

describe("exportModel", () => {
  it("converts a dense-only checkpoint with values equal to 1e-7", async () => {
    const checkpoint = path.join(tmp, "dense.ckpt.json");
    const model = denseModel();
    const source = model.layers[0].getWeights().map((w) => w.dataSync());
    await saveCheckpoint(model, checkpoint);

    const outDir = path.join(tmp, "dense-out");
    const manifest = await exportModel(checkpoint, outDir);

    const spec = fs.readFileSync(path.join(outDir, "model.spec"), "utf-8");
    expect(spec).toContain("version 1");
    expect(spec).toContain("input 4");
    expect(spec).toContain("layer head dense out_features=2");
    expect(spec.match(/^layer /gm)).toHaveLength(1);

    const weights = readArchive(path.join(outDir, "weights.qixt"));
    expect([...weights.keys()]).toEqual(["head.bias", "head.kernel"]);
    const kernel = weights.get("head.kernel")!;
    expect(kernel.shape).toEqual([4, 2]);
    kernel.data.forEach((v, i) => expect(Math.abs(v - source[0][i])).toBeLessThan(1e-7));
    weights.get("head.bias")!.data.forEach((v, i) =>
      expect(Math.abs(v - source[1][i])).toBeLessThan(1e-7),
    );

    expect(manifest.layerMapping["head"]).toEqual(["head"]);
    expect(verifyManifest(manifest, outDir)).toEqual([]);
  });

  it("splits fused activations into separate layers", async () => {
    const checkpoint = path.join(tmp, "cnn.ckpt.json");
    await saveCheckpoint(buildFixtureModel(), checkpoint);
    const manifest = await exportModel(checkpoint, path.join(tmp, "cnn-out"));
    expect(manifest.layerMapping["conv1"]).toEqual(["conv1", "conv1_act"]);
    expect(manifest.layerMapping["out"]).toEqual(["out"]);
    const spec = fs.readFileSync(path.join(tmp, "cnn-out", "model.spec"), "utf-8");
    expect(spec).toContain("layer conv1 conv2d kernel_h=3 kernel_w=3 out_channels=8 padding=same stride=1");
    expect(spec).toContain("layer conv1_act relu");
    expect(spec).toContain("layer out sigmoid");
  });

  it("rejects unsupported layer kinds by name", async () => {
    const model = tf.sequential();
    model.add(tf.layers.dense({ inputShape: [3], units: 3, name: "d" }));
    model.add(tf.layers.batchNormalization({ name: "norm" }));
    const checkpoint = path.join(tmp, "bn.ckpt.json");
    await saveCheckpoint(model, checkpoint);
    await expect(exportModel(checkpoint, path.join(tmp, "bn-out"))).rejects.toThrowError(
      UnsupportedLayerError,
    );
    await expect(exportModel(checkpoint, path.join(tmp, "bn-out"))).rejects.toThrowError(
      /BatchNormalization/,
    );
  });

  it("is idempotent: re-export is byte-identical", async () => {
    const checkpoint = path.join(tmp, "idem.ckpt.json");
    await saveCheckpoint(buildFixtureModel(7), checkpoint);
    const a = path.join(tmp, "idem-a");
    const b = path.join(tmp, "idem-b");
    await exportModel(checkpoint, a);
    await exportModel(checkpoint, b);
    for (const name of ["model.spec", "weights.qixt", "manifest.json"]) {
      expect(fs.readFileSync(path.join(a, name))).toEqual(fs.readFileSync(path.join(b, name)));
    }
  });
});

describe("exportBatch", () => {
  it("turns one white image into a tensor of ones", () => {
    const dir = path.join(tmp, "white");
    fs.mkdirSync(dir);
    writePpm(dir, "w.ppm", 2, 2, () => 255);
    const out = path.join(tmp, "white.qixt");
    exportBatch(dir, { height: 2, width: 2 }, out);
    const batch = readArchive(out).get("images")!;
    expect(batch.shape).toEqual([1, 2, 2, 3]);
    batch.data.forEach((v) => expect(v).toBe(1));
  });

  it("errors on an empty directory", () => {
    const dir = path.join(tmp, "empty");
    fs.mkdirSync(dir);
    expect(() => exportBatch(dir, { height: 2, width: 2 }, path.join(tmp, "e.qixt"))).toThrowError(
      /no images/,
    );
  });

  it("orders samples lexicographically and skips unreadable files", () => {
    const dir = path.join(tmp, "ordered");
    fs.mkdirSync(dir);
    writePpm(dir, "b.ppm", 2, 2, () => 128);
    writePpm(dir, "a.ppm", 2, 2, () => 0);
    writePpm(dir, "c.ppm", 2, 2, () => 255);
    fs.writeFileSync(path.join(dir, "broken.ppm"), "P6\n9 9\n255\n"); // truncated
    const out = path.join(tmp, "ordered.qixt");
    const manifest = exportBatch(dir, { height: 2, width: 2 }, out);
    const batch = readArchive(out).get("images")!;
    expect(batch.shape[0]).toBe(3);
    expect(batch.data[0]).toBe(0);
    expect(batch.data[1 * 12]).toBeCloseTo(128 / 255, 12);
    expect(batch.data[2 * 12]).toBe(1);
    expect(manifest.warnings).toHaveLength(1);
    expect(manifest.warnings[0]).toContain("broken.ppm");
  });

  it("resizes with nearest neighbor to the requested extent", () => {
    const dir = path.join(tmp, "resize");
    fs.mkdirSync(dir);
    writePpm(dir, "g.ppm", 4, 4, (i) => (Math.floor(i / 3 / 4) < 2 ? 0 : 255));
    const out = path.join(tmp, "resize.qixt");
    exportBatch(dir, { height: 2, width: 2 }, out);
    const batch = readArchive(out).get("images")!;
    expect(batch.shape).toEqual([1, 2, 2, 3]);
    expect(batch.data[0]).toBe(0); // top rows black
    expect(batch.data[batch.data.length - 1]).toBe(1); // bottom rows white
  });
});

describe("exportReferenceActivations", () => {
  it("matches w*x+b computed by hand for a dense model", async () => {
    const checkpoint = path.join(tmp, "ref-dense.ckpt.json");
    await saveCheckpoint(denseModel(), checkpoint);

    const x = [1, 2, 3, 4];
    const { writeArchive } = await import("../src/archive");
    const batchPath = path.join(tmp, "ref-batch.qixt");
    writeArchive(new Map([["images", { shape: [1, 4], data: Float64Array.from(x) }]]), batchPath);

    const outPath = path.join(tmp, "refs.qixt");
    await exportReferenceActivations(checkpoint, batchPath, ["head"], outPath);
    const ref = readArchive(outPath).get("head")!;
    const kernel = [
      [0.1, -0.2],
      [0.3, 0.4],
      [-0.5, 0.6],
      [0.7, -0.8],
    ];
    for (let j = 0; j < 2; j++) {
      let expected = j === 0 ? 0.05 : -0.05;
      for (let i = 0; i < 4; i++) expected += x[i] * kernel[i][j];
      expect(Math.abs(ref.data[j] - expected)).toBeLessThan(1e-6);
    }
  });

  it("rejects unknown layers naming the available ones", async () => {
    const checkpoint = path.join(tmp, "ref-unknown.ckpt.json");
    await saveCheckpoint(denseModel(), checkpoint);
    const batchPath = path.join(tmp, "ref-batch2.qixt");
    const { writeArchive } = await import("../src/archive");
    writeArchive(new Map([["images", { shape: [1, 4], data: Float64Array.from([0, 0, 0, 0]) }]]), batchPath);
    await expect(
      exportReferenceActivations(checkpoint, batchPath, ["nope"], path.join(tmp, "x.qixt")),
    ).rejects.toThrowError(/"nope".*head/);
  });
});
