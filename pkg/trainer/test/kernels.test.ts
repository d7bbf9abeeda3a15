import { describe, expect, it } from "vitest";

import {
  avgpool2Backward,
  avgpool2Forward,
  conv1x1Backward,
  conv1x1Forward,
  conv3x3Backward,
  conv3x3Forward,
  denseBackward,
  denseForward,
  upsample2Backward,
  upsample2Forward,
} from "../src/nn.js";
import { Rng } from "../src/rng.js";

/** Independent oracle: direct 9-tap convolution from the definition. */
function naiveConv3x3(
  input: Float64Array, weight: Float64Array, bias: Float64Array,
  batch: number, cin: number, cout: number, height: number, width: number,
): Float64Array {
  const out = new Float64Array(batch * cout * height * width);
  for (let b = 0; b < batch; b++)
    for (let k = 0; k < cout; k++)
      for (let y = 0; y < height; y++)
        for (let x = 0; x < width; x++) {
          let acc = bias[k];
          for (let c = 0; c < cin; c++)
            for (let dy = -1; dy <= 1; dy++)
              for (let dx = -1; dx <= 1; dx++) {
                const yy = y + dy;
                const xx = x + dx;
                if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                acc += weight[((k * cin + c) * 3 + (dy + 1)) * 3 + (dx + 1)]
                  * input[((b * cin + c) * height + yy) * width + xx];
              }
          out[((b * cout + k) * height + y) * width + x] = acc;
        }
  return out;
}

function fill(rng: Rng, n: number): Float64Array {
  const a = new Float64Array(n);
  rng.fillNormal(a);
  return a;
}

describe("conv3x3", () => {
  it("matches the naive definition", () => {
    const rng = new Rng(1);
    for (const [h, w] of [[5, 4], [1, 7], [6, 1], [8, 8]]) {
      const [batch, cin, cout] = [2, 3, 2];
      const input = fill(rng, batch * cin * h * w);
      const weight = fill(rng, cout * cin * 9);
      const bias = fill(rng, cout);
      const fast = new Float64Array(batch * cout * h * w);
      conv3x3Forward(input, fast, weight, bias, batch, cin, cout, h, w);
      const slow = naiveConv3x3(input, weight, bias, batch, cin, cout, h, w);
      for (let i = 0; i < fast.length; i++) expect(fast[i]).toBeCloseTo(slow[i], 10);
    }
  });

  it("backward matches finite differences", () => {
    const rng = new Rng(2);
    const [batch, cin, cout, h, w] = [1, 2, 2, 4, 5];
    const input = fill(rng, batch * cin * h * w);
    const weight = fill(rng, cout * cin * 9);
    const bias = fill(rng, cout);
    const dOut = fill(rng, batch * cout * h * w);

    const loss = (inp: Float64Array, wt: Float64Array, bs: Float64Array) => {
      const out = new Float64Array(batch * cout * h * w);
      conv3x3Forward(inp, out, wt, bs, batch, cin, cout, h, w);
      let s = 0;
      for (let i = 0; i < out.length; i++) s += out[i] * dOut[i];
      return s;
    };

    const dW = new Float64Array(weight.length);
    const dB = new Float64Array(bias.length);
    const dIn = new Float64Array(input.length);
    conv3x3Backward(input, dOut, weight, dW, dB, dIn, batch, cin, cout, h, w);

    const eps = 1e-6;
    for (const [arr, grad] of [[input, dIn], [weight, dW], [bias, dB]] as const) {
      for (let trial = 0; trial < 20; trial++) {
        const i = new Rng(trial + 10).int(arr.length);
        const keep = arr[i];
        arr[i] = keep + eps;
        const up = loss(input, weight, bias);
        arr[i] = keep - eps;
        const dn = loss(input, weight, bias);
        arr[i] = keep;
        expect((up - dn) / (2 * eps)).toBeCloseTo(grad[i], 5);
      }
    }
  });
});

describe("conv1x1 / dense / pool / upsample", () => {
  it("conv1x1 gradient check", () => {
    const rng = new Rng(3);
    const [batch, cin, cout, plane] = [2, 3, 2, 12];
    const input = fill(rng, batch * cin * plane);
    const weight = fill(rng, cout * cin);
    const bias = fill(rng, cout);
    const dOut = fill(rng, batch * cout * plane);

    const loss = () => {
      const out = new Float64Array(batch * cout * plane);
      conv1x1Forward(input, out, weight, bias, batch, cin, cout, plane);
      let s = 0;
      for (let i = 0; i < out.length; i++) s += out[i] * dOut[i];
      return s;
    };
    const dW = new Float64Array(weight.length);
    const dB = new Float64Array(bias.length);
    const dIn = new Float64Array(input.length);
    conv1x1Backward(input, dOut, weight, dW, dB, dIn, batch, cin, cout, plane);
    const eps = 1e-6;
    for (const [arr, grad] of [[input, dIn], [weight, dW], [bias, dB]] as const) {
      for (let trial = 0; trial < 10; trial++) {
        const i = new Rng(trial + 50).int(arr.length);
        const keep = arr[i];
        arr[i] = keep + eps;
        const up = loss();
        arr[i] = keep - eps;
        const dn = loss();
        arr[i] = keep;
        expect((up - dn) / (2 * eps)).toBeCloseTo(grad[i], 5);
      }
    }
  });

  it("dense gradient check", () => {
    const rng = new Rng(4);
    const [nIn, nOut] = [6, 5];
    const x = fill(rng, nIn);
    const weight = fill(rng, nOut * nIn);
    const bias = fill(rng, nOut);
    const dOut = fill(rng, nOut);
    const loss = () => {
      const out = new Float64Array(nOut);
      denseForward(x, out, weight, bias, nOut, nIn);
      let s = 0;
      for (let i = 0; i < nOut; i++) s += out[i] * dOut[i];
      return s;
    };
    const dW = new Float64Array(weight.length);
    const dB = new Float64Array(bias.length);
    const dX = new Float64Array(nIn);
    denseBackward(x, dOut, weight, dW, dB, dX, nOut, nIn);
    const eps = 1e-6;
    for (const [arr, grad] of [[x, dX], [weight, dW], [bias, dB]] as const) {
      for (let i = 0; i < arr.length; i++) {
        const keep = arr[i];
        arr[i] = keep + eps;
        const up = loss();
        arr[i] = keep - eps;
        const dn = loss();
        arr[i] = keep;
        expect((up - dn) / (2 * eps)).toBeCloseTo(grad[i], 5);
      }
    }
  });

  it("avgpool and upsample are exact adjoint-style pairs", () => {
    const rng = new Rng(5);
    const [c, h, w] = [2, 6, 4];
    const x = fill(rng, c * h * w);
    const pooled = new Float64Array(c * (h / 2) * (w / 2));
    avgpool2Forward(x, pooled, c, h, w);
    // mean of each 2x2 block
    expect(pooled[0]).toBeCloseTo((x[0] + x[1] + x[w] + x[w + 1]) / 4, 12);

    const up = new Float64Array(c * h * w);
    upsample2Forward(pooled, up, c, h / 2, w / 2);
    expect(up[0]).toBe(pooled[0]);
    expect(up[1]).toBe(pooled[0]);

    // <pool(x), y> = <x, poolT(y)>
    const y = fill(rng, pooled.length);
    let lhs = 0;
    for (let i = 0; i < y.length; i++) lhs += pooled[i] * y[i];
    const xT = new Float64Array(x.length);
    avgpool2Backward(y, xT, c, h, w);
    let rhs = 0;
    for (let i = 0; i < x.length; i++) rhs += x[i] * xT[i];
    expect(lhs).toBeCloseTo(rhs, 10);

    // <up(p), q> = <p, upT(q)>
    const q = fill(rng, up.length);
    let l2 = 0;
    for (let i = 0; i < q.length; i++) l2 += up[i] * q[i];
    const pT = new Float64Array(pooled.length);
    upsample2Backward(q, pT, c, h / 2, w / 2);
    let r2 = 0;
    for (let i = 0; i < pooled.length; i++) r2 += pooled[i] * pT[i];
    expect(l2).toBeCloseTo(r2, 10);
  });
});
