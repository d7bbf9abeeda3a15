/**
 * Denoising score-matching loss for the variance-exploding process.
 *
 * Per sample: t ~ U(0,1], sigma = sigma_min (sigma_max/sigma_min)^t,
 * x_t = x0 + sigma z. The target score is -(x_t - x0)/sigma^2 = -z/sigma;
 * with the sigma^2 weighting and the network predicting sigma * score, the
 * per-sample loss reduces to |raw + z|^2 / 2. A zero network therefore
 * scores exactly (pixel count)/2 in expectation.
 */

import { DeskScoreNet } from "./model.js";
import { Rng } from "./rng.js";

export interface Batch {
  noisy: Float64Array;   // (B, H, W) x0 + sigma z
  noise: Float64Array;   // (B, H, W) z
  sigmas: Float64Array;  // (B)
}

export function sampleSigma(rng: Rng, sigmaMin: number, sigmaMax: number): number {
  const t = 1 - rng.uniform(); // (0, 1]
  return sigmaMin * Math.pow(sigmaMax / sigmaMin, t);
}

export function makeBatch(
  images: Float64Array, imageCount: number, plane: number,
  batch: number, sigmaMin: number, sigmaMax: number, rng: Rng,
): Batch {
  const noisy = new Float64Array(batch * plane);
  const noise = new Float64Array(batch * plane);
  const sigmas = new Float64Array(batch);
  for (let b = 0; b < batch; b++) {
    const idx = rng.int(imageCount);
    const sigma = sampleSigma(rng, sigmaMin, sigmaMax);
    sigmas[b] = sigma;
    const src = idx * plane;
    const dst = b * plane;
    for (let p = 0; p < plane; p++) {
      const z = rng.normal();
      noise[dst + p] = z;
      noisy[dst + p] = images[src + p] + sigma * z;
    }
  }
  return { noisy, noise, sigmas };
}

/** Loss value for a raw network output (no gradient). */
export function dsmLossValue(raw: Float64Array, noise: Float64Array, batch: number): number {
  let total = 0;
  for (let i = 0; i < raw.length; i++) {
    const r = raw[i] + noise[i];
    total += r * r;
  }
  return total / (2 * batch);
}

/**
 * Forward + backward: returns the batch loss and leaves parameter
 * gradients accumulated on the network.
 */
export function dsmLossStep(
  net: DeskScoreNet, batch: Batch, batchSize: number, height: number, width: number,
): number {
  const raw = net.forward(batch.noisy, batch.sigmas, batchSize, height, width);
  const dRaw = new Float64Array(raw.length);
  let total = 0;
  for (let i = 0; i < raw.length; i++) {
    const r = raw[i] + batch.noise[i];
    total += r * r;
    dRaw[i] = r / batchSize;
  }
  net.backward(dRaw);
  return total / (2 * batchSize);
}
