/**
 * DeskScoreNet-v1: the fixed architecture shared with the reconstruction
 * engine. The network's raw output predicts sigma * score; the engine
 * divides by sigma at inference time.
 *
 * Encoder widths 16/32/64 with 2x average pooling between levels, one
 * width-64 bottleneck block, mirrored decoder with nearest-neighbor
 * upsampling and additive skips through 1x1 channel-matching convolutions.
 * Each block: conv3x3 -> +embedding bias -> SiLU -> conv3x3 -> SiLU.
 * Time conditioning: Gaussian Fourier features of log(sigma), 64 fixed
 * frequencies, proj = 2*pi*log(sigma)*freqs, [sin, cos] -> two SiLU dense
 * layers 128 -> 128.
 */

import {
  Param,
  avgpool2Backward,
  avgpool2Forward,
  conv1x1Backward,
  conv1x1Forward,
  conv3x3Backward,
  conv3x3Forward,
  denseBackward,
  denseForward,
  makeParam,
  silu,
  siluGrad,
  upsample2Backward,
  upsample2Forward,
} from "./nn.js";
import { NamedTensors } from "./sdw1.js";
import { Rng } from "./rng.js";

export const EMBED_DIM = 128;
export const NUM_FREQS = 64;
export const WIDTHS = [16, 32, 64] as const;

interface BlockSpec {
  name: string;
  cin: number;
  cout: number;
}

const BLOCKS: BlockSpec[] = [
  { name: "enc1", cin: 1, cout: 16 },
  { name: "enc2", cin: 16, cout: 32 },
  { name: "enc3", cin: 32, cout: 64 },
  { name: "mid", cin: 64, cout: 64 },
  { name: "dec3", cin: 64, cout: 64 },
  { name: "dec2", cin: 64, cout: 32 },
  { name: "dec1", cin: 32, cout: 16 },
];

const SKIPS = [
  { name: "skip3", cin: 64, cout: 64 },
  { name: "skip2", cin: 32, cout: 64 },
  { name: "skip1", cin: 16, cout: 32 },
];

class BlockState {
  h2: Float64Array; // after embedding bias, before first SiLU
  a1: Float64Array;
  h3: Float64Array; // before second SiLU
  out: Float64Array;
  input: Float64Array | null = null;
  dIn: Float64Array;
  dTmp: Float64Array;
  dA1: Float64Array;

  constructor(public spec: BlockSpec, public batch: number,
              public height: number, public width: number) {
    const n = batch * spec.cout * height * width;
    this.h2 = new Float64Array(n);
    this.a1 = new Float64Array(n);
    this.h3 = new Float64Array(n);
    this.out = new Float64Array(n);
    this.dIn = new Float64Array(batch * spec.cin * height * width);
    this.dTmp = new Float64Array(n);
    this.dA1 = new Float64Array(n);
  }
}

export class DeskScoreNet {
  readonly params = new Map<string, Param>();
  private batch = -1;
  private height = -1;
  private width = -1;
  private blocks = new Map<string, BlockState>();
  private bufs = new Map<string, Float64Array>();
  // per-sample embedding caches
  private e0!: Float64Array;
  private h1e!: Float64Array;
  private e1!: Float64Array;
  private h2e!: Float64Array;
  private emb!: Float64Array;
  private dEmb!: Float64Array;
  private logSigmas!: Float64Array;

  constructor() {
    const add = (name: string, shape: number[], trainable = true) => {
      this.params.set(name, makeParam(name, shape, trainable));
    };
    add("time.freqs", [NUM_FREQS], false);
    add("time.fc1.weight", [EMBED_DIM, EMBED_DIM]);
    add("time.fc1.bias", [EMBED_DIM]);
    add("time.fc2.weight", [EMBED_DIM, EMBED_DIM]);
    add("time.fc2.bias", [EMBED_DIM]);
    for (const b of BLOCKS) {
      add(`${b.name}.conv1.weight`, [b.cout, b.cin, 3, 3]);
      add(`${b.name}.conv1.bias`, [b.cout]);
      add(`${b.name}.embed.weight`, [b.cout, EMBED_DIM]);
      add(`${b.name}.embed.bias`, [b.cout]);
      add(`${b.name}.conv2.weight`, [b.cout, b.cout, 3, 3]);
      add(`${b.name}.conv2.bias`, [b.cout]);
    }
    for (const s of SKIPS) {
      add(`${s.name}.weight`, [s.cout, s.cin, 1, 1]);
      add(`${s.name}.bias`, [s.cout]);
    }
    add("head.weight", [1, 16, 1, 1]);
    add("head.bias", [1]);
  }

  /** He-style init; the output head starts at zero so the net begins as s=0. */
  initialize(rng: Rng): void {
    for (const p of this.params.values()) {
      if (p.name === "time.freqs") {
        for (let i = 0; i < p.data.length; i++) p.data[i] = rng.normal();
      } else if (p.name.endsWith(".bias") || p.name.startsWith("head.")) {
        p.data.fill(0);
      } else {
        const fanIn = p.shape.length === 4 ? p.shape[1] * p.shape[2] * p.shape[3] : p.shape[1];
        const std = Math.sqrt(2 / fanIn);
        for (let i = 0; i < p.data.length; i++) p.data[i] = std * rng.normal();
      }
    }
  }

  paramList(): Param[] {
    return [...this.params.values()];
  }

  zeroGrads(): void {
    for (const p of this.params.values()) p.grad.fill(0);
  }

  private get(name: string): Param {
    const p = this.params.get(name);
    if (!p) throw new Error(`unknown parameter ${name}`);
    return p;
  }

  private buf(name: string, size: number): Float64Array {
    let b = this.bufs.get(name);
    if (!b || b.length !== size) {
      b = new Float64Array(size);
      this.bufs.set(name, b);
    }
    return b;
  }

  private ensureShapes(batch: number, height: number, width: number): void {
    if (batch === this.batch && height === this.height && width === this.width) return;
    if (height % 8 !== 0 || width % 8 !== 0) {
      throw new Error(`crop ${height}x${width} must be divisible by 8`);
    }
    this.batch = batch;
    this.height = height;
    this.width = width;
    this.blocks.clear();
    this.bufs.clear();
    const dims: Record<string, [number, number]> = {
      enc1: [height, width],
      enc2: [height / 2, width / 2],
      enc3: [height / 4, width / 4],
      mid: [height / 8, width / 8],
      dec3: [height / 4, width / 4],
      dec2: [height / 2, width / 2],
      dec1: [height, width],
    };
    for (const spec of BLOCKS) {
      const [h, w] = dims[spec.name];
      this.blocks.set(spec.name, new BlockState(spec, batch, h, w));
    }
    this.e0 = new Float64Array(batch * EMBED_DIM);
    this.h1e = new Float64Array(batch * EMBED_DIM);
    this.e1 = new Float64Array(batch * EMBED_DIM);
    this.h2e = new Float64Array(batch * EMBED_DIM);
    this.emb = new Float64Array(batch * EMBED_DIM);
    this.dEmb = new Float64Array(batch * EMBED_DIM);
    this.logSigmas = new Float64Array(batch);
  }

  private embedForward(sigmas: Float64Array): void {
    const freqs = this.get("time.freqs").data;
    const w1 = this.get("time.fc1.weight");
    const w2 = this.get("time.fc2.weight");
    const b1 = this.get("time.fc1.bias").data;
    const b2 = this.get("time.fc2.bias").data;
    for (let b = 0; b < this.batch; b++) {
      const ls = Math.log(sigmas[b]);
      this.logSigmas[b] = ls;
      const base = b * EMBED_DIM;
      for (let f = 0; f < NUM_FREQS; f++) {
        const proj = 2 * Math.PI * ls * freqs[f];
        this.e0[base + f] = Math.sin(proj);
        this.e0[base + NUM_FREQS + f] = Math.cos(proj);
      }
      const x0 = this.e0.subarray(base, base + EMBED_DIM);
      const h1 = this.h1e.subarray(base, base + EMBED_DIM);
      denseForward(x0, h1, w1.data, b1, EMBED_DIM, EMBED_DIM);
      const a1 = this.e1.subarray(base, base + EMBED_DIM);
      for (let i = 0; i < EMBED_DIM; i++) a1[i] = silu(h1[i]);
      const h2 = this.h2e.subarray(base, base + EMBED_DIM);
      denseForward(a1, h2, w2.data, b2, EMBED_DIM, EMBED_DIM);
      const e = this.emb.subarray(base, base + EMBED_DIM);
      for (let i = 0; i < EMBED_DIM; i++) e[i] = silu(h2[i]);
    }
  }

  private embedBackward(): void {
    const w1 = this.get("time.fc1.weight");
    const w2 = this.get("time.fc2.weight");
    const db1 = this.get("time.fc1.bias").grad;
    const db2 = this.get("time.fc2.bias").grad;
    const dH = new Float64Array(EMBED_DIM);
    const dA1 = new Float64Array(EMBED_DIM);
    for (let b = 0; b < this.batch; b++) {
      const base = b * EMBED_DIM;
      for (let i = 0; i < EMBED_DIM; i++) {
        dH[i] = this.dEmb[base + i] * siluGrad(this.h2e[base + i]);
      }
      dA1.fill(0);
      denseBackward(this.e1.subarray(base, base + EMBED_DIM), dH,
        w2.data, w2.grad, db2, dA1, EMBED_DIM, EMBED_DIM);
      for (let i = 0; i < EMBED_DIM; i++) dA1[i] *= siluGrad(this.h1e[base + i]);
      denseBackward(this.e0.subarray(base, base + EMBED_DIM), dA1,
        w1.data, w1.grad, db1, null, EMBED_DIM, EMBED_DIM);
    }
  }

  private blockForward(name: string, input: Float64Array): Float64Array {
    const st = this.blocks.get(name)!;
    const { cin, cout } = st.spec;
    const { batch } = this;
    const h = st.height;
    const w = st.width;
    const plane = h * w;
    st.input = input;
    conv3x3Forward(input, st.h2, this.get(`${name}.conv1.weight`).data,
      this.get(`${name}.conv1.bias`).data, batch, cin, cout, h, w);
    const we = this.get(`${name}.embed.weight`).data;
    const be = this.get(`${name}.embed.bias`).data;
    for (let b = 0; b < batch; b++) {
      const ebase = b * EMBED_DIM;
      for (let k = 0; k < cout; k++) {
        let acc = be[k];
        const row = k * EMBED_DIM;
        for (let i = 0; i < EMBED_DIM; i++) acc += we[row + i] * this.emb[ebase + i];
        const o = (b * cout + k) * plane;
        for (let p = 0; p < plane; p++) st.h2[o + p] += acc;
      }
    }
    for (let i = 0; i < st.a1.length; i++) st.a1[i] = silu(st.h2[i]);
    conv3x3Forward(st.a1, st.h3, this.get(`${name}.conv2.weight`).data,
      this.get(`${name}.conv2.bias`).data, batch, cout, cout, h, w);
    for (let i = 0; i < st.out.length; i++) st.out[i] = silu(st.h3[i]);
    return st.out;
  }

  private blockBackward(name: string, dOut: Float64Array): Float64Array {
    const st = this.blocks.get(name)!;
    const { cin, cout } = st.spec;
    const { batch } = this;
    const h = st.height;
    const w = st.width;
    const plane = h * w;
    // through second SiLU and conv2
    for (let i = 0; i < st.dTmp.length; i++) st.dTmp[i] = dOut[i] * siluGrad(st.h3[i]);
    const dA1 = st.dA1;
    dA1.fill(0);
    const w2 = this.get(`${name}.conv2.weight`);
    conv3x3Backward(st.a1, st.dTmp, w2.data, w2.grad,
      this.get(`${name}.conv2.bias`).grad, dA1, batch, cout, cout, h, w);
    // through first SiLU
    for (let i = 0; i < dA1.length; i++) dA1[i] *= siluGrad(st.h2[i]);
    // embedding bias path
    const we = this.get(`${name}.embed.weight`);
    const dbe = this.get(`${name}.embed.bias`).grad;
    for (let b = 0; b < batch; b++) {
      const ebase = b * EMBED_DIM;
      for (let k = 0; k < cout; k++) {
        const o = (b * cout + k) * plane;
        let s = 0;
        for (let p = 0; p < plane; p++) s += dA1[o + p];
        dbe[k] += s;
        const row = k * EMBED_DIM;
        for (let i = 0; i < EMBED_DIM; i++) {
          we.grad[row + i] += s * this.emb[ebase + i];
          this.dEmb[ebase + i] += s * we.data[row + i];
        }
      }
    }
    // conv1
    st.dIn.fill(0);
    const w1 = this.get(`${name}.conv1.weight`);
    conv3x3Backward(st.input!, dA1, w1.data, w1.grad,
      this.get(`${name}.conv1.bias`).grad, st.dIn, batch, cin, cout, h, w);
    return st.dIn;
  }

  /**
   * Forward pass; returns the RAW output (sigma * score estimate), one
   * plane per sample, flattened (B, H, W).
   */
  forward(x: Float64Array, sigmas: Float64Array, batch: number,
          height: number, width: number): Float64Array {
    this.ensureShapes(batch, height, width);
    this.embedForward(sigmas);
    const plane = height * width;
    const e1 = this.blockForward("enc1", x);
    const p1 = this.buf("p1", batch * 16 * (plane / 4));
    for (let b = 0; b < batch; b++) {
      avgpool2Forward(e1.subarray(b * 16 * plane, (b + 1) * 16 * plane),
        p1.subarray(b * 16 * (plane / 4), (b + 1) * 16 * (plane / 4)), 16, height, width);
    }
    const e2 = this.blockForward("enc2", p1);
    const p2 = this.buf("p2", batch * 32 * (plane / 16));
    for (let b = 0; b < batch; b++) {
      avgpool2Forward(e2.subarray(b * 32 * (plane / 4), (b + 1) * 32 * (plane / 4)),
        p2.subarray(b * 32 * (plane / 16), (b + 1) * 32 * (plane / 16)), 32, height / 2, width / 2);
    }
    const e3 = this.blockForward("enc3", p2);
    const p3 = this.buf("p3", batch * 64 * (plane / 64));
    for (let b = 0; b < batch; b++) {
      avgpool2Forward(e3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)),
        p3.subarray(b * 64 * (plane / 64), (b + 1) * 64 * (plane / 64)), 64, height / 4, width / 4);
    }
    const m = this.blockForward("mid", p3);

    const u3 = this.buf("u3", batch * 64 * (plane / 16));
    for (let b = 0; b < batch; b++) {
      upsample2Forward(m.subarray(b * 64 * (plane / 64), (b + 1) * 64 * (plane / 64)),
        u3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)), 64, height / 8, width / 8);
    }
    const s3 = this.buf("s3", batch * 64 * (plane / 16));
    conv1x1Forward(e3, s3, this.flat1x1("skip3"), this.get("skip3.bias").data,
      batch, 64, 64, plane / 16);
    const in3 = this.buf("in3", u3.length);
    for (let i = 0; i < u3.length; i++) in3[i] = u3[i] + s3[i];
    const d3 = this.blockForward("dec3", in3);

    const u2 = this.buf("u2", batch * 64 * (plane / 4));
    for (let b = 0; b < batch; b++) {
      upsample2Forward(d3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)),
        u2.subarray(b * 64 * (plane / 4), (b + 1) * 64 * (plane / 4)), 64, height / 4, width / 4);
    }
    const s2 = this.buf("s2", batch * 64 * (plane / 4));
    conv1x1Forward(e2, s2, this.flat1x1("skip2"), this.get("skip2.bias").data,
      batch, 32, 64, plane / 4);
    const in2 = this.buf("in2", u2.length);
    for (let i = 0; i < u2.length; i++) in2[i] = u2[i] + s2[i];
    const d2 = this.blockForward("dec2", in2);

    const u1 = this.buf("u1", batch * 32 * plane);
    for (let b = 0; b < batch; b++) {
      upsample2Forward(d2.subarray(b * 32 * (plane / 4), (b + 1) * 32 * (plane / 4)),
        u1.subarray(b * 32 * plane, (b + 1) * 32 * plane), 32, height / 2, width / 2);
    }
    const s1 = this.buf("s1", batch * 32 * plane);
    conv1x1Forward(e1, s1, this.flat1x1("skip1"), this.get("skip1.bias").data,
      batch, 16, 32, plane);
    const in1 = this.buf("in1", u1.length);
    for (let i = 0; i < u1.length; i++) in1[i] = u1[i] + s1[i];
    const d1 = this.blockForward("dec1", in1);

    const raw = this.buf("raw", batch * plane);
    conv1x1Forward(d1, raw, this.flat1x1("head"), this.get("head.bias").data,
      batch, 16, 1, plane);
    return raw;
  }

  private flat1x1(name: string): Float64Array {
    return this.get(`${name}.weight`).data; // (cout, cin, 1, 1) is flat (cout, cin)
  }

  /** Backward from dRaw (B, H, W); accumulates parameter gradients. */
  backward(dRaw: Float64Array): void {
    const { batch, height, width } = this;
    const plane = height * width;
    this.dEmb.fill(0);

    const d1 = this.blocks.get("dec1")!.out;
    const dD1 = this.buf("dD1", batch * 16 * plane);
    dD1.fill(0);
    const headW = this.get("head.weight");
    conv1x1Backward(d1, dRaw, headW.data, headW.grad, this.get("head.bias").grad,
      dD1, batch, 16, 1, plane);

    const dIn1 = this.blockBackward("dec1", dD1);
    const e1 = this.blocks.get("enc1")!.out;
    const dE1 = this.buf("dE1", batch * 16 * plane);
    dE1.fill(0);
    const skip1 = this.get("skip1.weight");
    conv1x1Backward(e1, dIn1, skip1.data, skip1.grad, this.get("skip1.bias").grad,
      dE1, batch, 16, 32, plane);
    const dD2 = this.buf("dD2", batch * 32 * (plane / 4));
    dD2.fill(0);
    for (let b = 0; b < batch; b++) {
      upsample2Backward(dIn1.subarray(b * 32 * plane, (b + 1) * 32 * plane),
        dD2.subarray(b * 32 * (plane / 4), (b + 1) * 32 * (plane / 4)), 32, height / 2, width / 2);
    }

    const dIn2 = this.blockBackward("dec2", dD2);
    const e2 = this.blocks.get("enc2")!.out;
    const dE2 = this.buf("dE2", batch * 32 * (plane / 4));
    dE2.fill(0);
    const skip2 = this.get("skip2.weight");
    conv1x1Backward(e2, dIn2, skip2.data, skip2.grad, this.get("skip2.bias").grad,
      dE2, batch, 32, 64, plane / 4);
    const dD3 = this.buf("dD3", batch * 64 * (plane / 16));
    dD3.fill(0);
    for (let b = 0; b < batch; b++) {
      upsample2Backward(dIn2.subarray(b * 64 * (plane / 4), (b + 1) * 64 * (plane / 4)),
        dD3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)), 64, height / 4, width / 4);
    }

    const dIn3 = this.blockBackward("dec3", dD3);
    const e3 = this.blocks.get("enc3")!.out;
    const dE3 = this.buf("dE3", batch * 64 * (plane / 16));
    dE3.fill(0);
    const skip3 = this.get("skip3.weight");
    conv1x1Backward(e3, dIn3, skip3.data, skip3.grad, this.get("skip3.bias").grad,
      dE3, batch, 64, 64, plane / 16);
    const dM = this.buf("dM", batch * 64 * (plane / 64));
    dM.fill(0);
    for (let b = 0; b < batch; b++) {
      upsample2Backward(dIn3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)),
        dM.subarray(b * 64 * (plane / 64), (b + 1) * 64 * (plane / 64)), 64, height / 8, width / 8);
    }

    const dP3 = this.blockBackward("mid", dM);
    for (let b = 0; b < batch; b++) {
      avgpool2Backward(dP3.subarray(b * 64 * (plane / 64), (b + 1) * 64 * (plane / 64)),
        dE3.subarray(b * 64 * (plane / 16), (b + 1) * 64 * (plane / 16)), 64, height / 4, width / 4);
    }
    const dP2 = this.blockBackward("enc3", dE3);
    for (let b = 0; b < batch; b++) {
      avgpool2Backward(dP2.subarray(b * 32 * (plane / 16), (b + 1) * 32 * (plane / 16)),
        dE2.subarray(b * 32 * (plane / 4), (b + 1) * 32 * (plane / 4)), 32, height / 2, width / 2);
    }
    const dP1 = this.blockBackward("enc2", dE2);
    for (let b = 0; b < batch; b++) {
      avgpool2Backward(dP1.subarray(b * 16 * (plane / 4), (b + 1) * 16 * (plane / 4)),
        dE1.subarray(b * 16 * plane, (b + 1) * 16 * plane), 16, height, width);
    }
    this.blockBackward("enc1", dE1);
    this.embedBackward();
  }

  exportTensors(): NamedTensors {
    const out: NamedTensors = {};
    for (const p of this.params.values()) {
      out[p.name] = { shape: p.shape, data: Float32Array.from(p.data) };
    }
    return out;
  }

  loadTensors(tensors: NamedTensors): void {
    for (const p of this.params.values()) {
      const t = tensors[p.name];
      if (!t) throw new Error(`missing tensor ${p.name}`);
      const expect = p.shape.join("x");
      const got = t.shape.join("x");
      if (expect !== got) throw new Error(`${p.name}: shape ${got}, expected ${expect}`);
      for (let i = 0; i < p.data.length; i++) p.data[i] = t.data[i];
    }
  }
}
