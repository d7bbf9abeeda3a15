/**
 * Training entry point.
 *
 * Reads a crop-sized phantom stack (TNSR, shape (K, h, w)) produced by the
 * reconstruction engine's `simulate --train-stack`, trains DeskScoreNet-v1
 * with the denoising score-matching objective, and exports raw and
 * EMA-folded SDW1 weight files, a JSON training log, and a fixed
 * (input, sigma, output) test vector for the cross-implementation check.
 */

import { mkdirSync, writeFileSync, renameSync } from "node:fs";
import { join } from "node:path";

import { Adam, Ema } from "./adam.js";
import { dsmLossStep, makeBatch } from "./loss.js";
import { DeskScoreNet } from "./model.js";
import { Rng } from "./rng.js";
import { readSdw1, writeSdw1, NamedTensors } from "./sdw1.js";
import { readTnsr, writeTnsr } from "./tnsr.js";

export interface TrainConfig {
  data: string;
  out: string;
  steps: number;
  batch: number;
  lr: number;
  seed: number;
  sigmaMin: number;
  sigmaMax: number | "auto";
  emaMomentum: number;
  baselineSamples: number;
}

export const DESK_DEFAULTS = {
  steps: 2000,
  batch: 4,
  lr: 1e-3,
  seed: 7,
  sigmaMin: 0.01,
  sigmaMax: "auto" as const,
  emaMomentum: 0.999,
  baselineSamples: 4096,
};

/** Largest pairwise image distance over (a subset of) the dataset. */
export function maxPairwiseDistance(images: Float64Array, count: number, plane: number): number {
  const limit = Math.min(count, 128);
  let best = 0;
  for (let i = 0; i < limit; i++) {
    for (let j = i + 1; j < limit; j++) {
      let d2 = 0;
      const a = i * plane;
      const b = j * plane;
      for (let p = 0; p < plane; p++) {
        const d = images[a + p] - images[b + p];
        d2 += d * d;
      }
      best = Math.max(best, d2);
    }
  }
  return Math.sqrt(best);
}

/**
 * Monte Carlo measurement of the zero-network loss E|z|^2/2 per sample,
 * with its standard error; the analytic value is (pixel count)/2.
 */
export function zeroNetBaseline(plane: number, samples: number, rng: Rng) {
  let sum = 0;
  let sumSq = 0;
  for (let s = 0; s < samples; s++) {
    let half = 0;
    for (let p = 0; p < plane; p++) {
      const z = rng.normal();
      half += 0.5 * z * z;
    }
    sum += half;
    sumSq += half * half;
  }
  const mean = sum / samples;
  const variance = sumSq / samples - mean * mean;
  return { mean_loss: mean, standard_error: Math.sqrt(variance / samples), samples };
}

function atomicWrite(path: string, payload: Buffer | string): void {
  const tmp = path + ".tmp";
  writeFileSync(tmp, payload);
  renameSync(tmp, path);
}

export function train(cfg: TrainConfig) {
  const t0 = Date.now();
  const stack = readTnsr(cfg.data);
  if (stack.shape.length !== 3) {
    throw new Error(`expected a (K, h, w) phantom stack, got shape ${stack.shape}`);
  }
  const [count, height, width] = stack.shape;
  const plane = height * width;
  const sigmaMax = cfg.sigmaMax === "auto"
    ? maxPairwiseDistance(stack.data, count, plane)
    : cfg.sigmaMax;

  const rng = new Rng(cfg.seed);
  const net = new DeskScoreNet();
  net.initialize(rng);
  const params = net.paramList();
  const adam = new Adam(params, cfg.lr);
  const ema = new Ema(params, cfg.emaMomentum);

  const baseline = zeroNetBaseline(plane, cfg.baselineSamples, new Rng(cfg.seed + 1));

  mkdirSync(cfg.out, { recursive: true });
  const history: [number, number][] = [];
  const recent: number[] = [];
  let finalLoss = Number.NaN;
  for (let step = 1; step <= cfg.steps; step++) {
    const batch = makeBatch(stack.data, count, plane, cfg.batch, cfg.sigmaMin, sigmaMax, rng);
    net.zeroGrads();
    const loss = dsmLossStep(net, batch, cfg.batch, height, width);
    if (!Number.isFinite(loss)) {
      throw new Error(`training diverged: loss ${loss} at step ${step}`);
    }
    adam.step();
    ema.update();
    recent.push(loss);
    if (recent.length > 100) recent.shift();
    if (step % 25 === 0 || step === 1) {
      history.push([step, loss]);
    }
    if (step % 200 === 0) {
      const avg = recent.reduce((a, b) => a + b, 0) / recent.length;
      console.log(`step ${step}/${cfg.steps} loss(avg100) ${avg.toFixed(2)}`);
    }
  }
  finalLoss = recent.reduce((a, b) => a + b, 0) / recent.length;

  // raw and EMA-folded exports
  const rawPath = join(cfg.out, "desknet.sdw1");
  writeSdw1(rawPath, net.exportTensors());
  const emaNet = new DeskScoreNet();
  ema.copyTo(emaNet.paramList());
  // EMA never touches the fixed frequencies' semantics, but copy order is
  // positional, so re-assert the frozen tensor explicitly
  emaNet.params.get("time.freqs")!.data.set(net.params.get("time.freqs")!.data);
  const emaPath = join(cfg.out, "desknet_ema.sdw1");
  writeSdw1(emaPath, emaNet.exportTensors());

  // test vector computed from the exported (float32-truncated) EMA weights
  const vecDir = join(cfg.out, "testvec");
  mkdirSync(vecDir, { recursive: true });
  const reloaded = new DeskScoreNet();
  reloaded.loadTensors(readSdw1(emaPath));
  const vecRng = new Rng(cfg.seed + 2);
  const sigma = 0.5;
  const input = new Float64Array(plane);
  const src = vecRng.int(count) * plane;
  for (let p = 0; p < plane; p++) input[p] = stack.data[src + p] + sigma * vecRng.normal();
  const sigmas = new Float64Array([sigma]);
  const raw = reloaded.forward(input, sigmas, 1, height, width);
  const score = new Float64Array(plane);
  for (let p = 0; p < plane; p++) score[p] = raw[p] / sigma;
  writeTnsr(join(vecDir, "input.tnsr"), { shape: [height, width], data: input });
  writeTnsr(join(vecDir, "output.tnsr"), { shape: [height, width], data: score });
  atomicWrite(join(vecDir, "testvec.json"), JSON.stringify({
    weights: "desknet_ema.sdw1",
    input: "input.tnsr",
    output: "output.tnsr",
    sigma,
  }, null, 2) + "\n");

  const log = {
    crop_height: height,
    crop_width: width,
    dataset: cfg.data,
    dataset_size: count,
    batch: cfg.batch,
    lr: cfg.lr,
    seed: cfg.seed,
    sigma_min: cfg.sigmaMin,
    sigma_max: sigmaMax,
    ema_momentum: cfg.emaMomentum,
    steps_run: cfg.steps,
    zero_net_baseline: baseline,
    final_loss: finalLoss,
    loss_history: history,
    wall_time_s: (Date.now() - t0) / 1000,
  };
  atomicWrite(join(cfg.out, "training_log.json"), JSON.stringify(log, null, 2) + "\n");
  return log;
}

function parseArgs(argv: string[]): TrainConfig {
  const cfg: any = { ...DESK_DEFAULTS };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const val = argv[i + 1];
    switch (key) {
      case "--data": cfg.data = val; break;
      case "--out": cfg.out = val; break;
      case "--steps": cfg.steps = parseInt(val, 10); break;
      case "--batch": cfg.batch = parseInt(val, 10); break;
      case "--lr": cfg.lr = parseFloat(val); break;
      case "--seed": cfg.seed = parseInt(val, 10); break;
      case "--sigma-min": cfg.sigmaMin = parseFloat(val); break;
      case "--sigma-max": cfg.sigmaMax = val === "auto" ? "auto" : parseFloat(val); break;
      case "--ema": cfg.emaMomentum = parseFloat(val); break;
      case "--baseline-samples": cfg.baselineSamples = parseInt(val, 10); break;
      default: throw new Error(`unknown argument ${key}`);
    }
  }
  if (!cfg.data || !cfg.out) throw new Error("--data and --out are required");
  return cfg as TrainConfig;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("train.js") || entry.endsWith("train.ts")) {
  const log = train(parseArgs(process.argv.slice(2)));
  console.log(`done: final loss ${log.final_loss.toFixed(2)} `
    + `(baseline ${log.zero_net_baseline.mean_loss.toFixed(2)}), `
    + `${log.wall_time_s.toFixed(0)} s`);
}
