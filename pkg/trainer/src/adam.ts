/** Adam with bias correction, plus an exponential moving average of weights. */

import { Param } from "./nn.js";

export class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;

  constructor(
    private params: Param[],
    private lr: number,
    private beta1 = 0.9,
    private beta2 = 0.999,
    private eps = 1e-8,
  ) {
    this.m = params.map((p) => new Float64Array(p.data.length));
    this.v = params.map((p) => new Float64Array(p.data.length));
  }

  step(): void {
    this.t += 1;
    const c1 = 1 - Math.pow(this.beta1, this.t);
    const c2 = 1 - Math.pow(this.beta2, this.t);
    for (let j = 0; j < this.params.length; j++) {
      const p = this.params[j];
      if (!p.trainable) continue;
      const m = this.m[j];
      const v = this.v[j];
      for (let i = 0; i < p.data.length; i++) {
        const g = p.grad[i];
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
        p.data[i] -= this.lr * (m[i] / c1) / (Math.sqrt(v[i] / c2) + this.eps);
      }
    }
  }
}

export class Ema {
  shadow: Float64Array[];

  constructor(private params: Param[], private momentum: number) {
    if (!(momentum >= 0 && momentum < 1)) {
      throw new Error(`EMA momentum ${momentum} outside [0, 1)`);
    }
    this.shadow = params.map((p) => Float64Array.from(p.data));
  }

  update(): void {
    for (let j = 0; j < this.params.length; j++) {
      const p = this.params[j];
      const s = this.shadow[j];
      for (let i = 0; i < s.length; i++) {
        s[i] = this.momentum * s[i] + (1 - this.momentum) * p.data[i];
      }
    }
  }

  /** Copy the shadow values into a parameter list of identical layout. */
  copyTo(params: Param[]): void {
    for (let j = 0; j < params.length; j++) {
      params[j].data.set(this.shadow[j]);
    }
  }
}
