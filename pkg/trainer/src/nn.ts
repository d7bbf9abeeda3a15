/**
 * Dense/conv/pool kernels on flat Float64Array buffers, layout (B, C, H, W)
 * row-major. Forward and backward passes are hand-written; gradients are
 * checked against finite differences in the test suite.
 */

export { conv3x3Forward, conv3x3Backward } from "./conv.js";

export interface Param {
  name: string;
  shape: number[];
  data: Float64Array;
  grad: Float64Array;
  trainable: boolean;
}

export function makeParam(name: string, shape: number[], trainable = true): Param {
  const n = shape.reduce((a, b) => a * b, 1);
  return { name, shape, data: new Float64Array(n), grad: new Float64Array(n), trainable };
}

export function silu(x: number): number {
  return x / (1 + Math.exp(-x));
}

export function siluGrad(x: number): number {
  const s = 1 / (1 + Math.exp(-x));
  return s * (1 + x * (1 - s));
}

/** 1x1 conv: out[b,k] = sum_c w[k,c] in[b,c] + bias[k]. */
export function conv1x1Forward(
  input: Float64Array, output: Float64Array,
  weight: Float64Array, bias: Float64Array,
  batch: number, cin: number, cout: number, plane: number,
): void {
  output.fill(0);
  for (let b = 0; b < batch; b++) {
    for (let k = 0; k < cout; k++) {
      const oBase = (b * cout + k) * plane;
      for (let c = 0; c < cin; c++) {
        const w = weight[k * cin + c];
        if (w === 0) continue;
        const iBase = (b * cin + c) * plane;
        for (let p = 0; p < plane; p++) output[oBase + p] += w * input[iBase + p];
      }
      const v = bias[k];
      if (v !== 0) for (let p = 0; p < plane; p++) output[oBase + p] += v;
    }
  }
}

export function conv1x1Backward(
  input: Float64Array, dOutput: Float64Array,
  weight: Float64Array, dWeight: Float64Array, dBias: Float64Array,
  dInput: Float64Array | null,
  batch: number, cin: number, cout: number, plane: number,
): void {
  for (let b = 0; b < batch; b++) {
    for (let k = 0; k < cout; k++) {
      const oBase = (b * cout + k) * plane;
      let acc = 0;
      for (let p = 0; p < plane; p++) acc += dOutput[oBase + p];
      dBias[k] += acc;
      for (let c = 0; c < cin; c++) {
        const iBase = (b * cin + c) * plane;
        const w = weight[k * cin + c];
        let wAcc = 0;
        for (let p = 0; p < plane; p++) {
          const g = dOutput[oBase + p];
          wAcc += g * input[iBase + p];
          if (dInput !== null) dInput[iBase + p] += w * g;
        }
        dWeight[k * cin + c] += wAcc;
      }
    }
  }
}

/** 2x2 mean pooling, stride 2. */
export function avgpool2Forward(
  input: Float64Array, output: Float64Array,
  channels: number, height: number, width: number,
): void {
  const oh = height >> 1;
  const ow = width >> 1;
  for (let c = 0; c < channels; c++) {
    const iBase = c * height * width;
    const oBase = c * oh * ow;
    for (let y = 0; y < oh; y++) {
      const r0 = iBase + 2 * y * width;
      const r1 = r0 + width;
      const oRow = oBase + y * ow;
      for (let x = 0; x < ow; x++) {
        const ix = 2 * x;
        output[oRow + x] = 0.25 * (input[r0 + ix] + input[r0 + ix + 1] + input[r1 + ix] + input[r1 + ix + 1]);
      }
    }
  }
}

export function avgpool2Backward(
  dOutput: Float64Array, dInput: Float64Array,
  channels: number, height: number, width: number,
): void {
  const oh = height >> 1;
  const ow = width >> 1;
  for (let c = 0; c < channels; c++) {
    const iBase = c * height * width;
    const oBase = c * oh * ow;
    for (let y = 0; y < oh; y++) {
      const r0 = iBase + 2 * y * width;
      const r1 = r0 + width;
      const oRow = oBase + y * ow;
      for (let x = 0; x < ow; x++) {
        const g = 0.25 * dOutput[oRow + x];
        const ix = 2 * x;
        dInput[r0 + ix] += g;
        dInput[r0 + ix + 1] += g;
        dInput[r1 + ix] += g;
        dInput[r1 + ix + 1] += g;
      }
    }
  }
}

/** Nearest-neighbor 2x upsampling. */
export function upsample2Forward(
  input: Float64Array, output: Float64Array,
  channels: number, height: number, width: number,
): void {
  const oh = height * 2;
  const ow = width * 2;
  for (let c = 0; c < channels; c++) {
    const iBase = c * height * width;
    const oBase = c * oh * ow;
    for (let y = 0; y < height; y++) {
      const iRow = iBase + y * width;
      const o0 = oBase + 2 * y * ow;
      const o1 = o0 + ow;
      for (let x = 0; x < width; x++) {
        const v = input[iRow + x];
        const ox = 2 * x;
        output[o0 + ox] = v;
        output[o0 + ox + 1] = v;
        output[o1 + ox] = v;
        output[o1 + ox + 1] = v;
      }
    }
  }
}

export function upsample2Backward(
  dOutput: Float64Array, dInput: Float64Array,
  channels: number, height: number, width: number,
): void {
  const oh = height * 2;
  const ow = width * 2;
  for (let c = 0; c < channels; c++) {
    const iBase = c * height * width;
    const oBase = c * oh * ow;
    for (let y = 0; y < height; y++) {
      const iRow = iBase + y * width;
      const o0 = oBase + 2 * y * ow;
      const o1 = o0 + ow;
      for (let x = 0; x < width; x++) {
        const ox = 2 * x;
        dInput[iRow + x] += dOutput[o0 + ox] + dOutput[o0 + ox + 1] + dOutput[o1 + ox] + dOutput[o1 + ox + 1];
      }
    }
  }
}

/** out = W x + b for a single vector. */
export function denseForward(
  x: Float64Array, out: Float64Array,
  weight: Float64Array, bias: Float64Array, nOut: number, nIn: number,
): void {
  for (let o = 0; o < nOut; o++) {
    let acc = bias[o];
    const row = o * nIn;
    for (let i = 0; i < nIn; i++) acc += weight[row + i] * x[i];
    out[o] = acc;
  }
}

export function denseBackward(
  x: Float64Array, dOut: Float64Array,
  weight: Float64Array, dWeight: Float64Array, dBias: Float64Array,
  dX: Float64Array | null, nOut: number, nIn: number,
): void {
  for (let o = 0; o < nOut; o++) {
    const g = dOut[o];
    dBias[o] += g;
    const row = o * nIn;
    for (let i = 0; i < nIn; i++) {
      dWeight[row + i] += g * x[i];
      if (dX !== null) dX[i] += weight[row + i] * g;
    }
  }
}
