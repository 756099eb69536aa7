import * as fs from "fs";
import * as path from "path";

import { encode } from "./encoder";
import { Manifest, ManifestError, parseManifest } from "./manifest";
import { renderTable } from "./table";

export interface ExportResult {
  out: string;
  rows: number;
  dim: number;
}

/** Embed every manifest phrase and write the table to manifest.out. */
export function exportEmbeddings(manifest: Manifest): ExportResult {
  const rows: Array<[string, number[]]> = manifest.phrases.map((p) => [
    p,
    encode(p, manifest.dim),
  ]);
  const text = renderTable(rows, manifest.dim);
  fs.mkdirSync(path.dirname(path.resolve(manifest.out)), { recursive: true });
  fs.writeFileSync(manifest.out, text, "utf8");
  return { out: manifest.out, rows: rows.length, dim: manifest.dim };
}

/** Read a manifest JSON file, validate it and run the export. */
export function exportFromFile(manifestPath: string): ExportResult {
  let raw: unknown;
  try {
    raw = JSON.parse(fs.readFileSync(manifestPath, "utf8"));
  } catch (e) {
    throw new ManifestError(`cannot read manifest ${manifestPath}: ${(e as Error).message}`);
  }
  return exportEmbeddings(parseManifest(raw));
}
