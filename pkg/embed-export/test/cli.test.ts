import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { main } from "../src/cli";

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "embed-export-cli-"));
  vi.spyOn(console, "log").mockImplementation(() => {});
  vi.spyOn(console, "error").mockImplementation(() => {});
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
  vi.restoreAllMocks();
});

describe("main", () => {
  it("exports the manifest and reports what it wrote", () => {
    const out = path.join(dir, "t.tsv");
    const manifest = path.join(dir, "manifest.json");
    fs.writeFileSync(
      manifest,
      JSON.stringify({ phrases: ["win", "join"], model: "char-ngram-hash-32", out })
    );
    expect(main([manifest])).toBe(0);
    expect(fs.existsSync(out)).toBe(true);
    expect(console.log).toHaveBeenCalledWith(`wrote ${out} (2 rows, dim 32)`);
  });

  it("prints usage on --help", () => {
    expect(main(["--help"])).toBe(0);
  });

  it("treats a missing or extra argument as a usage error", () => {
    expect(main([])).toBe(2);
    expect(main(["a.json", "b.json"])).toBe(2);
  });

  it("rejects unknown flags", () => {
    expect(main(["--frobnicate", "a.json"])).toBe(2);
  });

  it("reports manifest problems without a stack trace", () => {
    const manifest = path.join(dir, "manifest.json");
    fs.writeFileSync(manifest, JSON.stringify({ phrases: [], model: "x", out: "t.tsv" }));
    expect(main([manifest])).toBe(1);
    expect(main([path.join(dir, "absent.json")])).toBe(1);
  });
});
