#!/usr/bin/env node
// lpfs-export: encode an image folder into an LPFS feature store.
//
//   lpfs-export --images DIR --out FILE --role id_train|id_test|ood_test
//               [--crops M] [--scale-min F] [--scale-max F] [--seed N]
//               [--encoder patchstats|clip] [--model ID] [--dim D] [--grid G]
//               [--prompts-out FILE] [--template "a photo of a {class}"]

import { createEncoder, EncoderLoadError } from './encoder.js';
import {
  DEFAULT_SCALE_RANGE,
  DEFAULT_TEMPLATE,
  exportImages,
  SplitRole,
} from './export.js';

interface Flags {
  [key: string]: string;
}

function parseArgs(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${arg}`);
    if (arg === '--help') {
      flags['help'] = '1';
      continue;
    }
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for ${arg}`);
    flags[arg.slice(2)] = value;
    i++;
  }
  return flags;
}

const USAGE = `lpfs-export --images DIR --out FILE --role id_train|id_test|ood_test
  --crops M           crop candidates per training image (default 24)
  --scale-min/-max F  crop area fraction range (default 0.2..1.0)
  --seed N            crop seed (default 0)
  --encoder NAME      patchstats (offline, default) or clip (needs local weights)
  --model ID          clip model id or local path
  --dim D / --grid G  patchstats output dim (64) and patch grid (4 -> 16 tokens)
  --prompts-out FILE  also write the per-class prompt feature store
  --template STR      prompt template (default "${DEFAULT_TEMPLATE}")`;

export async function main(argv: string[]): Promise<number> {
  let flags: Flags;
  try {
    flags = parseArgs(argv);
  } catch (err) {
    console.error(`error: UsageError: ${(err as Error).message}`);
    return 2;
  }
  if (flags['help'] !== undefined) {
    console.log(USAGE);
    return 0;
  }
  for (const required of ['images', 'out', 'role']) {
    if (!(required in flags)) {
      console.error(`error: UsageError: --${required} is required`);
      return 2;
    }
  }
  const role = flags['role'] as SplitRole;
  if (!['id_train', 'id_test', 'ood_test'].includes(role)) {
    console.error(`error: UsageError: bad --role ${flags['role']}`);
    return 2;
  }
  try {
    const encoder = await createEncoder(flags['encoder'] ?? 'patchstats', {
      dim: flags['dim'] ? parseInt(flags['dim'], 10) : undefined,
      grid: flags['grid'] ? parseInt(flags['grid'], 10) : undefined,
      model: flags['model'],
    });
    const summary = await exportImages({
      imagesRoot: flags['images'],
      outPath: flags['out'],
      role,
      crops: flags['crops'] ? parseInt(flags['crops'], 10) : 24,
      scaleMin: flags['scale-min'] ? parseFloat(flags['scale-min']) : DEFAULT_SCALE_RANGE[0],
      scaleMax: flags['scale-max'] ? parseFloat(flags['scale-max']) : DEFAULT_SCALE_RANGE[1],
      seed: flags['seed'] ? parseInt(flags['seed'], 10) : 0,
      template: flags['template'] ?? DEFAULT_TEMPLATE,
      promptsOut: flags['prompts-out'],
      encoder,
    });
    console.log(
      `export: ${summary.records} records, ${summary.cropSets} crop sets, ` +
      `${summary.classNames.length} classes, d=${summary.d}, N=${summary.N} -> ${flags['out']}`);
    return 0;
  } catch (err) {
    const kind = err instanceof EncoderLoadError ? 'EncoderLoadError' : 'ExportError';
    console.error(`error: ${kind}: ${(err as Error).message}`);
    return 1;
  }
}

main(process.argv.slice(2)).then((code) => {
  process.exitCode = code;
});
