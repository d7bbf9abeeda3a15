/**
 * TNSR tensor files: the exchange format with the reconstruction engine.
 *
 * Layout: "TNSR" | u32 version=1 | u8 dtype (0=float64, 1=complex128)
 * | u8 ndim | ndim x u64 dims | row-major little-endian payload.
 * The trainer only needs real tensors (phantom stacks, test vectors).
 */

import { readFileSync, writeFileSync } from "node:fs";

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export function readTnsr(path: string): Tensor {
  const buf = readFileSync(path);
  if (buf.length < 4 || buf.toString("latin1", 0, 4) !== "TNSR") {
    throw new Error(`${path}: not a TNSR file`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const version = view.getUint32(4, true);
  if (version !== 1) throw new Error(`${path}: unsupported TNSR version ${version}`);
  const dtype = view.getUint8(8);
  if (dtype !== 0) throw new Error(`${path}: trainer only reads real64 tensors (dtype ${dtype})`);
  const ndim = view.getUint8(9);
  const shape: number[] = [];
  let offset = 10;
  let count = 1;
  for (let i = 0; i < ndim; i++) {
    const dim = view.getBigUint64(offset, true);
    offset += 8;
    shape.push(Number(dim));
    count *= Number(dim);
  }
  if (buf.length < offset + 8 * count) throw new Error(`${path}: payload truncated`);
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) data[i] = view.getFloat64(offset + 8 * i, true);
  return { shape, data };
}

export function writeTnsr(path: string, tensor: Tensor): void {
  const count = tensor.data.length;
  const header = 10 + 8 * tensor.shape.length;
  const buf = Buffer.alloc(header + 8 * count);
  buf.write("TNSR", 0, "latin1");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  view.setUint32(4, 1, true);
  view.setUint8(8, 0);
  view.setUint8(9, tensor.shape.length);
  let offset = 10;
  for (const dim of tensor.shape) {
    view.setBigUint64(offset, BigInt(dim), true);
    offset += 8;
  }
  for (let i = 0; i < count; i++) view.setFloat64(offset + 8 * i, tensor.data[i], true);
  writeFileSync(path, buf);
}
