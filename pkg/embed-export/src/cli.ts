#!/usr/bin/env node
import { parseArgs } from "node:util";

import { EncoderError } from "./encoder";
import { ManifestError } from "./manifest";
import { exportFromFile } from "./export";
import { TableError } from "./table";

const USAGE = [
  "usage: embed-export <manifest.json>",
  "",
  "Embed the manifest phrases and write the table to the manifest's out path.",
  'Manifest JSON: {"phrases": [...], "model": "char-ngram-hash-<dim>", "out": path}',
].join("\n");

export function main(argv: string[]): number {
  let manifest: string;
  try {
    const { values, positionals } = parseArgs({
      args: argv,
      options: { help: { type: "boolean", short: "h", default: false } },
      allowPositionals: true,
    });
    if (values.help) {
      console.log(USAGE);
      return 0;
    }
    if (positionals.length !== 1) {
      throw new Error(
        positionals.length === 0
          ? "missing manifest path"
          : `expected one manifest path, got ${positionals.length}`
      );
    }
    manifest = positionals[0];
  } catch (e) {
    console.error(`embed-export: ${(e as Error).message}`);
    console.error(USAGE);
    return 2;
  }

  try {
    const res = exportFromFile(manifest);
    console.log(`wrote ${res.out} (${res.rows} rows, dim ${res.dim})`);
    return 0;
  } catch (e) {
    if (e instanceof ManifestError || e instanceof EncoderError || e instanceof TableError) {
      console.error(`embed-export: ${e.message}`);
      return 1;
    }
    throw e;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
