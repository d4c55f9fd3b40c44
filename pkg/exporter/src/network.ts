/**
 * Reference forward pass in float64 with unfused batch norm.
 *
 * Deliberately plain nested loops over channels-first single images:
 * this code exists to produce independent expected values for other
 * implementations, so clarity and a distinct numerical route (no
 * weight folding, double precision throughout) beat speed.
 */

import {
  ConvUnit,
  networkLayout,
  NetworkLayout,
  weightShape,
} from "./blocks.js";

export interface Plane {
  channels: number;
  height: number;
  width: number;
  data: Float64Array;
}

export interface UnitParams {
  weight: Float64Array;
  gamma: Float64Array;
  beta: Float64Array;
  mean: Float64Array;
  variance: Float64Array;
}

export interface NetworkParams {
  units: Map<string, UnitParams>;
  classifierW: Float64Array;
  classifierB: Float64Array;
  numClasses: number;
  bnEps: number;
}

export const MIN_INPUT_SIZE = 32;

function numel(shape: number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}

/** Assemble float64 parameters from exported-name tensors. */
export function networkParams(
  tensors: Map<string, { shape: number[]; data: Float32Array }>,
  bnEps = 1e-5,
): NetworkParams {
  const layout = networkLayout();
  const units = new Map<string, UnitParams>();
  const pull = (name: string, shape: number[]): Float64Array => {
    const t = tensors.get(name);
    if (!t) throw new Error(`missing tensor ${name}`);
    if (t.shape.length !== shape.length || t.shape.some((d, i) => d !== shape[i])) {
      throw new Error(`tensor ${name} has shape [${t.shape}], expected [${shape}]`);
    }
    return Float64Array.from(t.data);
  };
  const allUnits = [layout.stem, ...layout.blocks.flatMap((b) => b.units), layout.head];
  for (const u of allUnits) {
    units.set(u.name, {
      weight: pull(`${u.name}.w`, weightShape(u)),
      gamma: pull(`${u.name}.bn_gamma`, [u.cout]),
      beta: pull(`${u.name}.bn_beta`, [u.cout]),
      mean: pull(`${u.name}.bn_mean`, [u.cout]),
      variance: pull(`${u.name}.bn_var`, [u.cout]),
    });
  }
  const cw = tensors.get("classifier.w");
  const cb = tensors.get("classifier.b");
  if (!cw || !cb) throw new Error("missing classifier tensors");
  const numClasses = cw.shape[0];
  return {
    units,
    classifierW: pull("classifier.w", [numClasses, layout.featureDim]),
    classifierB: pull("classifier.b", [numClasses]),
    numClasses,
    bnEps,
  };
}

export function conv2d(x: Plane, unit: ConvUnit, weight: Float64Array): Plane {
  const { kernel: k, stride, groups } = unit;
  if (x.channels !== unit.cin) {
    throw new Error(`${unit.name}: input has ${x.channels} channels, expected ${unit.cin}`);
  }
  const pad = Math.floor(k / 2);
  const outH = Math.floor((x.height + 2 * pad - k) / stride) + 1;
  const outW = Math.floor((x.width + 2 * pad - k) / stride) + 1;
  if (outH < 1 || outW < 1) throw new Error(`${unit.name}: input too small`);
  const cing = unit.cin / groups;
  const coutg = unit.cout / groups;
  if (weight.length !== numel(weightShape(unit))) {
    throw new Error(`${unit.name}: weight size mismatch`);
  }

  const out = new Float64Array(unit.cout * outH * outW);
  const inPlane = x.height * x.width;
  const outPlane = outH * outW;
  for (let g = 0; g < groups; g++) {
    for (let oc = g * coutg; oc < (g + 1) * coutg; oc++) {
      const wBase = oc * cing * k * k;
      for (let oy = 0; oy < outH; oy++) {
        for (let ox = 0; ox < outW; ox++) {
          let acc = 0;
          for (let ic = 0; ic < cing; ic++) {
            const cIn = g * cing + ic;
            const xBase = cIn * inPlane;
            const wc = wBase + ic * k * k;
            for (let ky = 0; ky < k; ky++) {
              const iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.height) continue;
              for (let kx = 0; kx < k; kx++) {
                const ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= x.width) continue;
                acc += x.data[xBase + iy * x.width + ix] * weight[wc + ky * k + kx];
              }
            }
          }
          out[oc * outPlane + oy * outW + ox] = acc;
        }
      }
    }
  }
  return { channels: unit.cout, height: outH, width: outW, data: out };
}

export function batchnorm(x: Plane, p: UnitParams, eps: number): Plane {
  const plane = x.height * x.width;
  const out = new Float64Array(x.data.length);
  for (let c = 0; c < x.channels; c++) {
    const scale = p.gamma[c] / Math.sqrt(p.variance[c] + eps);
    const shift = p.beta[c] - p.mean[c] * scale;
    const base = c * plane;
    for (let i = 0; i < plane; i++) {
      out[base + i] = x.data[base + i] * scale + shift;
    }
  }
  return { ...x, data: out };
}

export function relu6(x: Plane): Plane {
  const out = new Float64Array(x.data.length);
  for (let i = 0; i < x.data.length; i++) {
    const v = x.data[i];
    out[i] = v < 0 ? 0 : v > 6 ? 6 : v;
  }
  return { ...x, data: out };
}

function runUnit(x: Plane, unit: ConvUnit, params: NetworkParams): Plane {
  const p = params.units.get(unit.name);
  if (!p) throw new Error(`no parameters for ${unit.name}`);
  let y = conv2d(x, unit, p.weight);
  y = batchnorm(y, p, params.bnEps);
  return unit.relu ? relu6(y) : y;
}

/** Pooled 1280-dim feature vector for one normalised input image. */
export function extractFeatures(params: NetworkParams, input: Plane): Plane {
  if (input.channels !== 3) throw new Error("input must have 3 channels");
  if (input.height < MIN_INPUT_SIZE || input.width < MIN_INPUT_SIZE) {
    throw new Error(
      `input ${input.height}x${input.width} is below the ${MIN_INPUT_SIZE}px minimum`,
    );
  }
  const layout: NetworkLayout = networkLayout();
  let x = runUnit(input, layout.stem, params);
  for (const block of layout.blocks) {
    let y = x;
    for (const unit of block.units) y = runUnit(y, unit, params);
    if (block.useResidual) {
      const sum = new Float64Array(y.data.length);
      for (let i = 0; i < sum.length; i++) sum[i] = x.data[i] + y.data[i];
      y = { ...y, data: sum };
    }
    x = y;
  }
  x = runUnit(x, layout.head, params);

  const plane = x.height * x.width;
  const pooled = new Float64Array(x.channels);
  for (let c = 0; c < x.channels; c++) {
    let acc = 0;
    const base = c * plane;
    for (let i = 0; i < plane; i++) acc += x.data[base + i];
    pooled[c] = acc / plane;
  }
  return { channels: x.channels, height: 1, width: 1, data: pooled };
}

export function classifyFeatures(params: NetworkParams, features: Float64Array): Float64Array {
  const k = params.numClasses;
  const d = features.length;
  const out = new Float64Array(k);
  for (let c = 0; c < k; c++) {
    let acc = 0;
    const base = c * d;
    for (let i = 0; i < d; i++) acc += params.classifierW[base + i] * features[i];
    out[c] = acc + params.classifierB[c];
  }
  return out;
}
