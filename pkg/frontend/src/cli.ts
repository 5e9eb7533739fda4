#!/usr/bin/env node
/**
 * toast-export: convert a safetensors ViT checkpoint into a TOAST archive
 * plus a model config JSON the engine can load directly.
 *
 * Usage:
 *   toast-export export --src <ckpt.safetensors> --map <spec.json> \
 *       --out <weights.toast> --config-out <model.json> \
 *       [--tokens-src <batches.safetensors> --tokens-out <tokens.toast>]
 */

import { readFileSync, writeFileSync } from 'node:fs';
import { pathToFileURL } from 'node:url';

import { exportCheckpoint, exportTokens } from './exporter.js';
import { parseMapSpec } from './mapspec.js';
import { readSafetensors } from './safetensors.js';

interface Args {
  src?: string;
  map?: string;
  out?: string;
  configOut?: string;
  tokensSrc?: string;
  tokensOut?: string;
  help?: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {};
  let rest = argv;
  if (rest[0] === 'export') {
    rest = rest.slice(1);
  }
  for (let i = 0; i < rest.length; i++) {
    switch (rest[i]) {
      case '--src':
        args.src = rest[++i];
        break;
      case '--map':
        args.map = rest[++i];
        break;
      case '--out':
        args.out = rest[++i];
        break;
      case '--config-out':
        args.configOut = rest[++i];
        break;
      case '--tokens-src':
        args.tokensSrc = rest[++i];
        break;
      case '--tokens-out':
        args.tokensOut = rest[++i];
        break;
      case '--help':
      case '-h':
        args.help = true;
        break;
      default:
        throw new Error(`unknown argument: ${rest[i]}`);
    }
  }
  return args;
}

export function run(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  if (args.help) {
    console.error(
      'usage: toast-export export --src <ckpt> --map <spec.json> --out <archive> --config-out <json> [--tokens-src <ckpt> --tokens-out <archive>]',
    );
    return 0;
  }
  if (!args.src || !args.map || !args.out || !args.configOut) {
    console.error('export requires --src, --map, --out, and --config-out');
    return 2;
  }
  try {
    const spec = parseMapSpec(readFileSync(args.map, 'utf-8'));
    const checkpoint = readSafetensors(readFileSync(args.src));
    const result = exportCheckpoint(checkpoint, spec);
    writeFileSync(args.out, result.archive);
    writeFileSync(args.configOut, result.configJson);
    const castCount = Object.keys(result.casts).length;
    console.error(`exported ${args.src} -> ${args.out} (${castCount} dtype cast(s))`);

    if (args.tokensSrc || args.tokensOut) {
      if (!args.tokensSrc || !args.tokensOut) {
        console.error('token packaging requires both --tokens-src and --tokens-out');
        return 2;
      }
      const tokens = readSafetensors(readFileSync(args.tokensSrc));
      writeFileSync(args.tokensOut, exportTokens(tokens, spec.config));
      console.error(`packaged ${tokens.size} token batch(es) -> ${args.tokensOut}`);
    }
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(run(process.argv.slice(2)));
}
