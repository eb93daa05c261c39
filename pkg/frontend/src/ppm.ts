/**
 * Minimal decoder for binary netpbm images (P5 grayscale, P6 RGB,
 * 8-bit maxval). Kept dependency-free; batch export only needs a
 * format the fixtures can also write by hand.
 */

import * as fs from "fs";

export interface DecodedImage {
  height: number;
  width: number;
  /** H x W x 3, values in [0, 255] */
  pixels: Uint8Array;
}

export function decodeNetpbm(path: string): DecodedImage {
  const buf = fs.readFileSync(path);
  let at = 0;

  const token = (): string => {
    // Skip whitespace and '#' comment lines between header fields.
    for (;;) {
      while (at < buf.length && /\s/.test(String.fromCharCode(buf[at]))) at++;
      if (at < buf.length && buf[at] === 0x23) {
        while (at < buf.length && buf[at] !== 0x0a) at++;
      } else {
        break;
      }
    }
    const start = at;
    while (at < buf.length && !/\s/.test(String.fromCharCode(buf[at]))) at++;
    if (start === at) throw new Error(`${path}: truncated netpbm header`);
    return buf.subarray(start, at).toString("ascii");
  };

  const magic = token();
  if (magic !== "P5" && magic !== "P6") {
    throw new Error(`${path}: unsupported image format ${JSON.stringify(magic)} (need P5/P6)`);
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0)) throw new Error(`${path}: bad image dimensions`);
  if (maxval !== 255) throw new Error(`${path}: only 8-bit images supported (maxval ${maxval})`);
  at++; // single whitespace byte after maxval

  const channels = magic === "P6" ? 3 : 1;
  const expected = width * height * channels;
  if (buf.length - at < expected) throw new Error(`${path}: truncated pixel data`);
  const raw = buf.subarray(at, at + expected);

  const pixels = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      pixels[i * 3 + c] = channels === 3 ? raw[i * 3 + c] : raw[i];
    }
  }
  return { height, width, pixels };
}

/** Nearest-neighbor resize of an H x W x 3 byte image. */
export function resizeNearest(image: DecodedImage, height: number, width: number): DecodedImage {
  if (image.height === height && image.width === width) return image;
  const pixels = new Uint8Array(height * width * 3);
  for (let i = 0; i < height; i++) {
    const si = Math.min(image.height - 1, Math.floor((i * image.height) / height));
    for (let j = 0; j < width; j++) {
      const sj = Math.min(image.width - 1, Math.floor((j * image.width) / width));
      for (let c = 0; c < 3; c++) {
        pixels[(i * width + j) * 3 + c] = image.pixels[(si * image.width + sj) * 3 + c];
      }
    }
  }
  return { height, width, pixels };
}

export function encodePpm(image: DecodedImage): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}
