/**
 * Reader/writer for the toolkit's tensor-archive container (.qixt).
 *
 * Layout, all integers u64 little-endian, all data f64 little-endian:
 *   magic "QIXT" | version=1 | entry count |
 *   per entry: name length | ASCII name | rank | extents... | values...
 */

import * as fs from "fs";

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

const MAGIC = Buffer.from("QIXT", "ascii");
const VERSION = 1n;

export class ArchiveError extends Error {
  constructor(message: string, readonly offset?: number) {
    super(offset === undefined ? message : `${message} (offset ${offset})`);
    this.name = "ArchiveError";
  }
}

export function numElements(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function checkName(name: string): void {
  if (name.length === 0) throw new ArchiveError("entry name must be nonempty");
  for (const ch of name) {
    const code = ch.codePointAt(0)!;
    if (code > 0x7e || code < 0x20 || ch === "/" || ch === "\\") {
      throw new ArchiveError(`entry name ${JSON.stringify(name)} contains forbidden character`);
    }
  }
}

export function writeArchive(entries: Map<string, Tensor>, path: string): void {
  const chunks: Buffer[] = [];
  const u64 = (v: number | bigint) => {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v));
    return b;
  };
  chunks.push(MAGIC, u64(VERSION), u64(entries.size));
  for (const [name, tensor] of entries) {
    checkName(name);
    if (numElements(tensor.shape) !== tensor.data.length) {
      throw new ArchiveError(
        `entry ${JSON.stringify(name)}: shape [${tensor.shape}] does not match ` +
          `${tensor.data.length} values`,
      );
    }
    for (let i = 0; i < tensor.data.length; i++) {
      if (!Number.isFinite(tensor.data[i])) {
        throw new ArchiveError(
          `entry ${JSON.stringify(name)}: non-finite value at flat index ${i}`,
        );
      }
    }
    chunks.push(u64(name.length), Buffer.from(name, "ascii"), u64(tensor.shape.length));
    for (const extent of tensor.shape) chunks.push(u64(extent));
    const payload = Buffer.alloc(tensor.data.length * 8);
    for (let i = 0; i < tensor.data.length; i++) payload.writeDoubleLE(tensor.data[i], i * 8);
    chunks.push(payload);
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function readArchive(path: string): Map<string, Tensor> {
  const buf = fs.readFileSync(path);
  let offset = 0;
  const need = (n: number, what: string) => {
    if (offset + n > buf.length) {
      throw new ArchiveError(`archive truncated while reading ${what}`, offset);
    }
  };
  const readU64 = (what: string): number => {
    need(8, what);
    const value = buf.readBigUInt64LE(offset);
    offset += 8;
    if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new ArchiveError(`implausible ${what} ${value}`, offset - 8);
    }
    return Number(value);
  };

  need(4, "magic");
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new ArchiveError("bad magic", 0);
  offset = 4;
  const version = readU64("version");
  if (version !== 1) throw new ArchiveError(`unsupported archive version ${version}`, 4);
  const count = readU64("entry count");

  const entries = new Map<string, Tensor>();
  for (let e = 0; e < count; e++) {
    const nameLen = readU64("name length");
    need(nameLen, "name");
    const name = buf.subarray(offset, offset + nameLen).toString("ascii");
    offset += nameLen;
    const rank = readU64("rank");
    const shape: number[] = [];
    for (let a = 0; a < rank; a++) shape.push(readU64("extent"));
    const n = numElements(shape);
    need(n * 8, `data of ${JSON.stringify(name)}`);
    const data = new Float64Array(n);
    for (let i = 0; i < n; i++) data[i] = buf.readDoubleLE(offset + i * 8);
    offset += n * 8;
    entries.set(name, { shape, data });
  }
  if (offset !== buf.length) {
    throw new ArchiveError("trailing bytes after final entry", offset);
  }
  return entries;
}
