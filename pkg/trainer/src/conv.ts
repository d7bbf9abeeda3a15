/**
 * Row-fused 3x3 convolution kernels (zero padding 1, stride 1).
 *
 * One pass per (batch, out-channel, in-channel, kernel-row) applies all
 * three column taps, with the two edge columns handled outside the main
 * loop. Forward/backward agree with the naive definition to float64
 * rounding; the test suite checks both against finite differences.
 */

export function conv3x3Forward(
  input: Float64Array, output: Float64Array,
  weight: Float64Array, bias: Float64Array,
  batch: number, cin: number, cout: number, height: number, width: number,
): void {
  const plane = height * width;
  for (let b = 0; b < batch; b++) {
    for (let k = 0; k < cout; k++) {
      const oBase = (b * cout + k) * plane;
      output.fill(bias[k], oBase, oBase + plane);
      for (let c = 0; c < cin; c++) {
        const iBase = (b * cin + c) * plane;
        const wBase = (k * cin + c) * 9;
        for (let dy = -1; dy <= 1; dy++) {
          const wm = weight[wBase + (dy + 1) * 3];
          const w0 = weight[wBase + (dy + 1) * 3 + 1];
          const wp = weight[wBase + (dy + 1) * 3 + 2];
          const y0 = Math.max(0, -dy);
          const y1 = Math.min(height, height - dy);
          for (let y = y0; y < y1; y++) {
            const oRow = oBase + y * width;
            const iRow = iBase + (y + dy) * width;
            if (width === 1) {
              output[oRow] += w0 * input[iRow];
              continue;
            }
            output[oRow] += w0 * input[iRow] + wp * input[iRow + 1];
            for (let x = 1; x < width - 1; x++) {
              output[oRow + x] += wm * input[iRow + x - 1] + w0 * input[iRow + x] + wp * input[iRow + x + 1];
            }
            output[oRow + width - 1] += wm * input[iRow + width - 2] + w0 * input[iRow + width - 1];
          }
        }
      }
    }
  }
}

export function conv3x3Backward(
  input: Float64Array, dOutput: Float64Array,
  weight: Float64Array, dWeight: Float64Array, dBias: Float64Array,
  dInput: Float64Array | null,
  batch: number, cin: number, cout: number, height: number, width: number,
): void {
  const plane = height * width;
  for (let b = 0; b < batch; b++) {
    for (let k = 0; k < cout; k++) {
      const oBase = (b * cout + k) * plane;
      let acc = 0;
      for (let p = 0; p < plane; p++) acc += dOutput[oBase + p];
      dBias[k] += acc;
      for (let c = 0; c < cin; c++) {
        const iBase = (b * cin + c) * plane;
        const wBase = (k * cin + c) * 9;
        for (let dy = -1; dy <= 1; dy++) {
          const wIdx = wBase + (dy + 1) * 3;
          const wm = weight[wIdx];
          const w0 = weight[wIdx + 1];
          const wp = weight[wIdx + 2];
          let am = 0;
          let a0 = 0;
          let ap = 0;
          const y0 = Math.max(0, -dy);
          const y1 = Math.min(height, height - dy);
          if (dInput !== null) {
            for (let y = y0; y < y1; y++) {
              const oRow = oBase + y * width;
              const iRow = iBase + (y + dy) * width;
              if (width === 1) {
                const g = dOutput[oRow];
                a0 += g * input[iRow];
                dInput[iRow] += w0 * g;
                continue;
              }
              let g = dOutput[oRow];
              a0 += g * input[iRow];
              ap += g * input[iRow + 1];
              dInput[iRow] += w0 * g;
              dInput[iRow + 1] += wp * g;
              for (let x = 1; x < width - 1; x++) {
                g = dOutput[oRow + x];
                am += g * input[iRow + x - 1];
                a0 += g * input[iRow + x];
                ap += g * input[iRow + x + 1];
                dInput[iRow + x - 1] += wm * g;
                dInput[iRow + x] += w0 * g;
                dInput[iRow + x + 1] += wp * g;
              }
              g = dOutput[oRow + width - 1];
              am += g * input[iRow + width - 2];
              a0 += g * input[iRow + width - 1];
              dInput[iRow + width - 2] += wm * g;
              dInput[iRow + width - 1] += w0 * g;
            }
          } else {
            for (let y = y0; y < y1; y++) {
              const oRow = oBase + y * width;
              const iRow = iBase + (y + dy) * width;
              if (width === 1) {
                a0 += dOutput[oRow] * input[iRow];
                continue;
              }
              let g = dOutput[oRow];
              a0 += g * input[iRow];
              ap += g * input[iRow + 1];
              for (let x = 1; x < width - 1; x++) {
                g = dOutput[oRow + x];
                am += g * input[iRow + x - 1];
                a0 += g * input[iRow + x];
                ap += g * input[iRow + x + 1];
              }
              g = dOutput[oRow + width - 1];
              am += g * input[iRow + width - 2];
              a0 += g * input[iRow + width - 1];
            }
          }
          dWeight[wIdx] += am;
          dWeight[wIdx + 1] += a0;
          dWeight[wIdx + 2] += ap;
        }
      }
    }
  }
}
