/**
 * Deterministic small CNN used by the test suite: two relu conv blocks,
 * max pooling, global average pooling, and a sigmoid head. Weights come
 * from a seeded PRNG so checkpoints are reproducible across runs.
 */

import * as tf from "@tensorflow/tfjs";

/** mulberry32: tiny seedable PRNG, uniform in [0, 1). */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function fill(shape: number[], next: () => number, scale: number): tf.Tensor {
  const n = shape.reduce((a, b) => a * b, 1);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) data[i] = (next() - 0.5) * 2 * scale;
  return tf.tensor(data, shape);
}

export function buildFixtureModel(seed = 42): tf.LayersModel {
  const model = tf.sequential();
  model.add(
    tf.layers.conv2d({
      inputShape: [32, 32, 3],
      filters: 8,
      kernelSize: 3,
      padding: "same",
      activation: "relu",
      name: "conv1",
    }),
  );
  model.add(tf.layers.maxPooling2d({ poolSize: 2, strides: 2, name: "pool1" }));
  model.add(
    tf.layers.conv2d({
      filters: 16,
      kernelSize: 3,
      padding: "same",
      activation: "relu",
      name: "conv2",
    }),
  );
  model.add(tf.layers.globalAveragePooling2d({ name: "gap" }));
  model.add(tf.layers.dense({ units: 1, name: "dense" }));
  model.add(tf.layers.activation({ activation: "sigmoid", name: "out" }));

  const next = mulberry32(seed);
  for (const layer of model.layers) {
    const current = layer.getWeights();
    if (current.length === 0) continue;
    layer.setWeights(current.map((w) => fill(w.shape, next, 0.3)));
  }
  return model;
}
