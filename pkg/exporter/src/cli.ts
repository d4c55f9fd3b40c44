/**
 * Command line entry points.
 *
 *   mnv2-export export --checkpoint ckpt.safetensors --out model.mnv2 [--eps 1e-5]
 *   mnv2-export make-test-checkpoint --out ckpt.safetensors [--seed 0] [--classes 11]
 *   mnv2-export fixtures --checkpoint ckpt.safetensors --image photo.png \
 *       --out fixtures.mnv2 [--sizes 32,64,128,224,256]
 *
 * Exit status: 0 success, 1 runtime failure, 2 usage error.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { makeTestCheckpoint } from "./checkpoint.js";
import { exportCheckpoint } from "./exporter.js";
import { buildFixtures, DEFAULT_FIXTURE_SIZES } from "./fixtures.js";
import { writeMnv2 } from "./mnv2.js";
import { readSafetensors, writeSafetensors } from "./safetensors.js";

class UsageError extends Error {}

const USAGE = `usage: mnv2-export <command> [options]

commands:
  export                convert a safetensors checkpoint to a .mnv2 archive
    --checkpoint FILE   torchvision mobilenet_v2 state dict (safetensors)
    --out FILE          archive to write
    --eps NUMBER        batch-norm epsilon to embed (default 1e-5)

  make-test-checkpoint  write a deterministic synthetic checkpoint
    --out FILE          safetensors file to write
    --seed INT          PRNG seed (default 0)
    --classes INT       classifier width (default 11)

  fixtures              compute reference preprocessing and forward-pass values
    --checkpoint FILE   safetensors checkpoint
    --image FILE        PNG photo (8-bit RGB/RGBA, non-interlaced)
    --out FILE          fixture archive to write
    --sizes LIST        comma-separated input sizes (default ${DEFAULT_FIXTURE_SIZES.join(",")})
`;

function parsed(
  argv: string[],
  options: Record<string, { type: "string" | "boolean" }>,
): Record<string, string | boolean | undefined> {
  try {
    return parseArgs({ args: argv, options, strict: true, allowPositionals: false }).values;
  } catch (err) {
    throw new UsageError(err instanceof Error ? err.message : String(err));
  }
}

function requireStr(values: Record<string, unknown>, name: string): string {
  const v = values[name];
  if (typeof v !== "string" || v.length === 0) {
    throw new UsageError(`missing --${name}`);
  }
  return v;
}

function intOf(v: string, name: string): number {
  const n = Number(v);
  if (!Number.isInteger(n)) throw new UsageError(`--${name} must be an integer, got ${v}`);
  return n;
}

function cmdExport(argv: string[]): number {
  const values = parsed(argv, {
    checkpoint: { type: "string" },
    out: { type: "string" },
    eps: { type: "string" },
  });
  const ckptPath = requireStr(values, "checkpoint");
  const outPath = requireStr(values, "out");
  const eps = values.eps === undefined ? undefined : Number(values.eps);
  if (eps !== undefined && !(eps > 0)) throw new UsageError("--eps must be a positive number");

  const checkpoint = readSafetensors(new Uint8Array(readFileSync(ckptPath)));
  const result = exportCheckpoint(checkpoint, { eps });
  writeFileSync(outPath, writeMnv2(result.tensors));
  console.log(`classes: ${result.numClasses}`);
  console.log(`tensors: ${result.tensors.size}`);
  if (result.skipped.length > 0) console.log(`skipped counters: ${result.skipped.length}`);
  console.log(`wrote ${outPath}`);
  return 0;
}

function cmdMakeTestCheckpoint(argv: string[]): number {
  const values = parsed(argv, {
    out: { type: "string" },
    seed: { type: "string" },
    classes: { type: "string" },
  });
  const outPath = requireStr(values, "out");
  const seed = values.seed === undefined ? 0 : intOf(values.seed as string, "seed");
  const classes = values.classes === undefined ? 11 : intOf(values.classes as string, "classes");

  const checkpoint = makeTestCheckpoint(seed, classes);
  const bytes = writeSafetensors(checkpoint, {
    seed: String(seed),
    classes: String(classes),
  });
  writeFileSync(outPath, bytes);
  console.log(`tensors: ${checkpoint.size}`);
  console.log(`wrote ${outPath}`);
  return 0;
}

function cmdFixtures(argv: string[]): number {
  const values = parsed(argv, {
    checkpoint: { type: "string" },
    image: { type: "string" },
    out: { type: "string" },
    sizes: { type: "string" },
  });
  const ckptPath = requireStr(values, "checkpoint");
  const imagePath = requireStr(values, "image");
  const outPath = requireStr(values, "out");
  const sizes =
    values.sizes === undefined
      ? DEFAULT_FIXTURE_SIZES
      : (values.sizes as string)
          .split(",")
          .filter((s) => s.trim().length > 0)
          .map((s) => intOf(s.trim(), "sizes"));

  const checkpoint = readSafetensors(new Uint8Array(readFileSync(ckptPath)));
  const png = new Uint8Array(readFileSync(imagePath));
  const fixtures = buildFixtures(checkpoint, png, sizes, (line) => console.log(line));
  writeFileSync(outPath, writeMnv2(fixtures));
  console.log(`tensors: ${fixtures.size}`);
  console.log(`wrote ${outPath}`);
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "export":
        return cmdExport(rest);
      case "make-test-checkpoint":
        return cmdMakeTestCheckpoint(rest);
      case "fixtures":
        return cmdFixtures(rest);
      case undefined:
      case "--help":
      case "-h":
        console.log(USAGE);
        return command === undefined ? 2 : 0;
      default:
        console.error(`unknown command: ${command}`);
        console.log(USAGE);
        return 2;
    }
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`usage error: ${err.message}`);
      return 2;
    }
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

const isMain =
  typeof process.argv[1] === "string" &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (isMain) {
  process.exit(main(process.argv.slice(2)));
}
