/**
 * Single-file checkpoint container for TensorFlow.js layers models:
 * the model topology, weight specs, and base64-encoded weight data in
 * one JSON document, so a trained model travels as one artifact.
 */

import * as fs from "fs";
import * as tf from "@tensorflow/tfjs";

interface CheckpointFile {
  format: "layers-model";
  modelTopology: {};
  weightSpecs: tf.io.WeightsManifestEntry[];
  weightDataBase64: string;
}

function flattenWeightData(data: tf.io.WeightData | undefined): ArrayBuffer {
  if (data === undefined) return new ArrayBuffer(0);
  if (data instanceof ArrayBuffer) return data;
  const parts = data as ArrayBuffer[];
  const total = parts.reduce((a, b) => a + b.byteLength, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const part of parts) {
    out.set(new Uint8Array(part), at);
    at += part.byteLength;
  }
  return out.buffer;
}

export async function saveCheckpoint(model: tf.LayersModel, path: string): Promise<void> {
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const doc: CheckpointFile = {
        format: "layers-model",
        modelTopology: artifacts.modelTopology as {},
        weightSpecs: artifacts.weightSpecs ?? [],
        weightDataBase64: Buffer.from(flattenWeightData(artifacts.weightData)).toString("base64"),
      };
      fs.writeFileSync(path, JSON.stringify(doc));
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: "JSON" } };
    }),
  );
}

export async function loadCheckpoint(path: string): Promise<tf.LayersModel> {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8")) as CheckpointFile;
  if (doc.format !== "layers-model") {
    throw new Error(`${path}: not a layers-model checkpoint`);
  }
  const weightData = new Uint8Array(Buffer.from(doc.weightDataBase64, "base64")).buffer;
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: doc.modelTopology,
      weightSpecs: doc.weightSpecs,
      weightData,
    }),
  );
}
