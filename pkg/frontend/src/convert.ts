/**
 * Maps a TensorFlow.js layers model onto the analysis toolkit's closed
 * layer set (conv2d, relu, maxpool2d, global_avg_pool, flatten, dense,
 * sigmoid) and its weight naming scheme.
 *
 * Both sides use NHWC activations, HWIO conv kernels, and [in, out]
 * dense kernels, so no axis transposition is required; conversion is
 * restricted to 32→64-bit widening and fused-activation splitting.
 */

import * as tf from "@tensorflow/tfjs";

import { Tensor } from "./archive";

export interface ToolkitLayer {
  name: string;
  kind: string;
  params: Record<string, number | string>;
}

export interface ConvertedModel {
  inputShape: number[];
  layers: ToolkitLayer[];
  weights: Map<string, Tensor>;
  /** framework layer name -> toolkit layer names it expanded into */
  layerMapping: Record<string, string[]>;
}

export class UnsupportedLayerError extends Error {
  constructor(layerName: string, className: string) {
    super(`layer ${JSON.stringify(layerName)}: unsupported layer kind ${JSON.stringify(className)}`);
    this.name = "UnsupportedLayerError";
  }
}

function widen(t: tf.Tensor): Tensor {
  return { shape: t.shape.slice(), data: Float64Array.from(t.dataSync()) };
}

function sanitizeName(name: string): string {
  return name.replace(/[^\x21-\x7e]|[/\\]/g, "_");
}

function symmetric(value: unknown, what: string, layer: string): number {
  const pair = Array.isArray(value) ? value : [value, value];
  if (pair[0] !== pair[1]) {
    throw new Error(`layer ${JSON.stringify(layer)}: asymmetric ${what} [${pair}] not supported`);
  }
  return Number(pair[0]);
}

function splitActivation(
  layers: ToolkitLayer[],
  mapped: string[],
  name: string,
  activation: string,
): void {
  if (activation === "linear") return;
  if (activation === "relu") {
    layers.push({ name: `${name}_act`, kind: "relu", params: {} });
  } else if (activation === "sigmoid") {
    layers.push({ name: `${name}_act`, kind: "sigmoid", params: {} });
  } else {
    throw new Error(`layer ${JSON.stringify(name)}: unsupported activation ${JSON.stringify(activation)}`);
  }
  mapped.push(`${name}_act`);
}

export function convertModel(model: tf.LayersModel): ConvertedModel {
  const batchShape = model.layers[0].batchInputShape;
  const inputShape = (batchShape.slice(1) as number[]).map(Number);

  const layers: ToolkitLayer[] = [];
  const weights = new Map<string, Tensor>();
  const layerMapping: Record<string, string[]> = {};

  for (const layer of model.layers) {
    const className = layer.getClassName();
    const config = layer.getConfig() as Record<string, unknown>;
    const name = sanitizeName(layer.name);
    const mapped: string[] = [];
    layerMapping[layer.name] = mapped;

    switch (className) {
      case "InputLayer":
        break;
      case "Conv2D": {
        if (config["dataFormat"] !== "channelsLast") {
          throw new Error(`layer ${JSON.stringify(name)}: only channels-last conv supported`);
        }
        const [kernel, bias] = layer.getWeights();
        if (bias === undefined) {
          throw new Error(`layer ${JSON.stringify(name)}: conv without bias not supported`);
        }
        const kernelSize = config["kernelSize"] as number[];
        layers.push({
          name,
          kind: "conv2d",
          params: {
            out_channels: Number(config["filters"]),
            kernel_h: Number(Array.isArray(kernelSize) ? kernelSize[0] : kernelSize),
            kernel_w: Number(Array.isArray(kernelSize) ? kernelSize[1] : kernelSize),
            stride: symmetric(config["strides"], "strides", name),
            padding: String(config["padding"]),
          },
        });
        mapped.push(name);
        weights.set(`${name}.kernel`, widen(kernel));
        weights.set(`${name}.bias`, widen(bias));
        splitActivation(layers, mapped, name, String(config["activation"]));
        break;
      }
      case "MaxPooling2D": {
        if (config["padding"] !== "valid") {
          throw new Error(`layer ${JSON.stringify(name)}: only valid-padded max pooling supported`);
        }
        const pool = config["poolSize"] as number[];
        layers.push({
          name,
          kind: "maxpool2d",
          params: {
            pool_h: Number(pool[0]),
            pool_w: Number(pool[1]),
            stride: symmetric(config["strides"] ?? pool, "strides", name),
          },
        });
        mapped.push(name);
        break;
      }
      case "GlobalAveragePooling2D":
        layers.push({ name, kind: "global_avg_pool", params: {} });
        mapped.push(name);
        break;
      case "Flatten":
        layers.push({ name, kind: "flatten", params: {} });
        mapped.push(name);
        break;
      case "Dense": {
        const [kernel, bias] = layer.getWeights();
        if (bias === undefined) {
          throw new Error(`layer ${JSON.stringify(name)}: dense without bias not supported`);
        }
        layers.push({ name, kind: "dense", params: { out_features: Number(config["units"]) } });
        mapped.push(name);
        weights.set(`${name}.kernel`, widen(kernel));
        weights.set(`${name}.bias`, widen(bias));
        splitActivation(layers, mapped, name, String(config["activation"]));
        break;
      }
      case "ReLU":
        layers.push({ name, kind: "relu", params: {} });
        mapped.push(name);
        break;
      case "Activation": {
        const activation = String(config["activation"]);
        if (activation === "relu") {
          layers.push({ name, kind: "relu", params: {} });
        } else if (activation === "sigmoid") {
          layers.push({ name, kind: "sigmoid", params: {} });
        } else {
          throw new UnsupportedLayerError(layer.name, `Activation(${activation})`);
        }
        mapped.push(name);
        break;
      }
      default:
        throw new UnsupportedLayerError(layer.name, className);
    }
  }
  return { inputShape, layers, weights, layerMapping };
}

export function formatModelSpec(layers: ToolkitLayer[], inputShape: number[]): string {
  const lines = ["version 1", `input ${inputShape.join(" ")}`];
  for (const layer of layers) {
    const parts = [`layer ${layer.name} ${layer.kind}`];
    for (const key of Object.keys(layer.params).sort()) {
      parts.push(`${key}=${layer.params[key]}`);
    }
    lines.push(parts.join(" "));
  }
  return lines.join("\n") + "\n";
}
