/**
 * SDW1 weight files: "SDW1" | u32 version=1 | u32 tensor count, then per
 * tensor u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims |
 * row-major little-endian float32 payload.
 */

import { readFileSync, writeFileSync } from "node:fs";

export interface NamedTensors {
  [name: string]: { shape: number[]; data: Float32Array };
}

export function writeSdw1(path: string, tensors: NamedTensors): void {
  const names = Object.keys(tensors).sort();
  const chunks: Buffer[] = [];
  const head = Buffer.alloc(12);
  head.write("SDW1", 0, "latin1");
  head.writeUInt32LE(1, 4);
  head.writeUInt32LE(names.length, 8);
  chunks.push(head);
  for (const name of names) {
    const { shape, data } = tensors[name];
    const nameBytes = Buffer.from(name, "utf-8");
    const rec = Buffer.alloc(2 + nameBytes.length + 1 + 4 * shape.length + 4 * data.length);
    let off = 0;
    rec.writeUInt16LE(nameBytes.length, off);
    off += 2;
    nameBytes.copy(rec, off);
    off += nameBytes.length;
    rec.writeUInt8(shape.length, off);
    off += 1;
    for (const dim of shape) {
      rec.writeUInt32LE(dim, off);
      off += 4;
    }
    for (let i = 0; i < data.length; i++) {
      rec.writeFloatLE(data[i], off + 4 * i);
    }
    chunks.push(rec);
  }
  writeFileSync(path, Buffer.concat(chunks));
}

export function readSdw1(path: string): NamedTensors {
  const buf = readFileSync(path);
  if (buf.length < 4 || buf.toString("latin1", 0, 4) !== "SDW1") {
    throw new Error(`${path}: not an SDW1 file`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new Error(`${path}: unsupported version ${version}`);
  const count = buf.readUInt32LE(8);
  let off = 12;
  const out: NamedTensors = {};
  for (let t = 0; t < count; t++) {
    const nameLen = buf.readUInt16LE(off);
    off += 2;
    const name = buf.toString("utf-8", off, off + nameLen);
    off += nameLen;
    const ndim = buf.readUInt8(off);
    off += 1;
    const shape: number[] = [];
    let n = 1;
    for (let i = 0; i < ndim; i++) {
      const dim = buf.readUInt32LE(off);
      off += 4;
      shape.push(dim);
      n *= dim;
    }
    const data = new Float32Array(n);
    for (let i = 0; i < n; i++) data[i] = buf.readFloatLE(off + 4 * i);
    off += 4 * n;
    out[name] = { shape, data };
  }
  return out;
}
