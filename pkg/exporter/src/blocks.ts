/**
 * MobileNetV2 layer bookkeeping: the inverted-residual stage table,
 * the flat list of conv+batchnorm units with shapes, and the mapping
 * from torchvision state-dict names to archive tensor names.
 *
 * Archive naming: stem.conv, block0..block16 with .expand/.dw/.project
 * sub-units (block0 has no expand), head.conv, classifier.w/.b. Each
 * conv unit stores <name>.w plus bn_gamma/bn_beta/bn_mean/bn_var.
 */

export interface ConvUnit {
  name: string;
  cin: number;
  cout: number;
  kernel: number;
  stride: number;
  groups: number;
  relu: boolean;
}

export interface BlockSpec {
  index: number;
  useResidual: boolean;
  units: ConvUnit[];
}

export interface NetworkLayout {
  stem: ConvUnit;
  blocks: BlockSpec[];
  head: ConvUnit;
  featureDim: number;
}

// per stage: expansion factor t, output channels c, repeats n, first stride s
export const BLOCK_TABLE: ReadonlyArray<readonly [number, number, number, number]> = [
  [1, 16, 1, 1],
  [6, 24, 2, 2],
  [6, 32, 3, 2],
  [6, 64, 4, 2],
  [6, 96, 3, 1],
  [6, 160, 3, 2],
  [6, 320, 1, 1],
];

export const STEM_CHANNELS = 32;
export const FEATURE_DIM = 1280;

export function networkLayout(): NetworkLayout {
  const stem: ConvUnit = {
    name: "stem.conv",
    cin: 3,
    cout: STEM_CHANNELS,
    kernel: 3,
    stride: 2,
    groups: 1,
    relu: true,
  };
  const blocks: BlockSpec[] = [];
  let cin = STEM_CHANNELS;
  let index = 0;
  for (const [t, c, n, s] of BLOCK_TABLE) {
    for (let rep = 0; rep < n; rep++) {
      const stride = rep === 0 ? s : 1;
      const hidden = cin * t;
      const units: ConvUnit[] = [];
      if (t !== 1) {
        units.push({
          name: `block${index}.expand`,
          cin,
          cout: hidden,
          kernel: 1,
          stride: 1,
          groups: 1,
          relu: true,
        });
      }
      units.push({
        name: `block${index}.dw`,
        cin: hidden,
        cout: hidden,
        kernel: 3,
        stride,
        groups: hidden,
        relu: true,
      });
      units.push({
        name: `block${index}.project`,
        cin: hidden,
        cout: c,
        kernel: 1,
        stride: 1,
        groups: 1,
        relu: false,
      });
      blocks.push({ index, useResidual: stride === 1 && cin === c, units });
      cin = c;
      index++;
    }
  }
  const head: ConvUnit = {
    name: "head.conv",
    cin,
    cout: FEATURE_DIM,
    kernel: 1,
    stride: 1,
    groups: 1,
    relu: true,
  };
  return { stem, blocks, head, featureDim: FEATURE_DIM };
}

export function convUnits(layout = networkLayout()): ConvUnit[] {
  return [layout.stem, ...layout.blocks.flatMap((b) => b.units), layout.head];
}

export function weightShape(u: ConvUnit): number[] {
  return [u.cout, u.cin / u.groups, u.kernel, u.kernel];
}

/** Archive tensor names and shapes for a full model, without bn_eps. */
export function archivePlan(numClasses: number): Map<string, number[]> {
  const plan = new Map<string, number[]>();
  for (const u of convUnits()) {
    plan.set(`${u.name}.w`, weightShape(u));
    for (const stat of ["bn_gamma", "bn_beta", "bn_mean", "bn_var"]) {
      plan.set(`${u.name}.${stat}`, [u.cout]);
    }
  }
  plan.set("classifier.w", [numClasses, FEATURE_DIM]);
  plan.set("classifier.b", [numClasses]);
  return plan;
}

export interface MappedTensor {
  target: string;
  shape: number[];
}

const BN_SUFFIXES: ReadonlyArray<readonly [string, string]> = [
  ["weight", "bn_gamma"],
  ["bias", "bn_beta"],
  ["running_mean", "bn_mean"],
  ["running_var", "bn_var"],
];

/**
 * torchvision mobilenet_v2 state-dict name -> archive tensor.
 *
 * features.0 is the stem ConvBNReLU; features.1..17 are the inverted
 * residual blocks whose .conv submodule is [dw, project] for the first
 * block (expansion factor 1) and [expand, dw, project] for the rest;
 * features.18 is the head ConvBNReLU; classifier.1 is the Linear (the
 * dropout at classifier.0 has no parameters).
 */
export function torchvisionNameMap(numClasses: number): Map<string, MappedTensor> {
  const layout = networkLayout();
  const map = new Map<string, MappedTensor>();

  const addUnit = (torchConv: string, torchBn: string, u: ConvUnit) => {
    map.set(`${torchConv}.weight`, { target: `${u.name}.w`, shape: weightShape(u) });
    for (const [src, dst] of BN_SUFFIXES) {
      map.set(`${torchBn}.${src}`, { target: `${u.name}.${dst}`, shape: [u.cout] });
    }
  };

  addUnit("features.0.0", "features.0.1", layout.stem);
  for (const block of layout.blocks) {
    const f = `features.${block.index + 1}.conv`;
    if (block.units.length === 2) {
      const [dw, project] = block.units;
      addUnit(`${f}.0.0`, `${f}.0.1`, dw);
      addUnit(`${f}.1`, `${f}.2`, project);
    } else {
      const [expand, dw, project] = block.units;
      addUnit(`${f}.0.0`, `${f}.0.1`, expand);
      addUnit(`${f}.1.0`, `${f}.1.1`, dw);
      addUnit(`${f}.2`, `${f}.3`, project);
    }
  }
  addUnit("features.18.0", "features.18.1", layout.head);
  map.set("classifier.1.weight", {
    target: "classifier.w",
    shape: [numClasses, FEATURE_DIM],
  });
  map.set("classifier.1.bias", { target: "classifier.b", shape: [numClasses] });
  return map;
}
