import { describe, expect, it } from "vitest";

import { EncoderError, cosine, encode, modelDim, normalizePhrase } from "../src/encoder";

describe("modelDim", () => {
  it("reads the dimension out of the identifier", () => {
    expect(modelDim("char-ngram-hash-256")).toBe(256);
    expect(modelDim("char-ngram-hash-64")).toBe(64);
  });

  it("rejects unknown model families", () => {
    expect(() => modelDim("sbert-base")).toThrow(EncoderError);
    expect(() => modelDim("char-ngram-hash-")).toThrow(EncoderError);
  });

  it("rejects out-of-range dimensions", () => {
    expect(() => modelDim("char-ngram-hash-4")).toThrow(/out of range/);
  });
});

describe("normalizePhrase", () => {
  it("collapses whitespace and lowercases", () => {
    expect(normalizePhrase("  In \t the\nYEAR ")).toBe("in the year");
  });
});

describe("encode", () => {
  it("is deterministic", () => {
    expect(encode("win", 128)).toEqual(encode("win", 128));
  });

  it("returns unit vectors", () => {
    for (const p of ["win", "in the year", "nominated_for"]) {
      const v = encode(p, 256);
      const norm = Math.sqrt(v.reduce((a, x) => a + x * x, 0));
      expect(Math.abs(norm - 1)).toBeLessThan(1e-12);
    }
  });

  it("embeds whitespace variants identically after normalization", () => {
    expect(encode(normalizePhrase("in  the   year"), 128)).toEqual(
      encode(normalizePhrase("in the year"), 128)
    );
  });

  it("puts lexically close phrases closer", () => {
    const won = encode("won", 256);
    expect(cosine(won, encode("win", 256))).toBeGreaterThan(cosine(won, encode("sibling", 256)));
  });

  it("rejects the empty phrase", () => {
    expect(() => encode("", 64)).toThrow(EncoderError);
  });
});

describe("cosine", () => {
  it("is 1 on identical vectors", () => {
    const v = encode("spouse", 128);
    expect(Math.abs(cosine(v, v) - 1)).toBeLessThan(1e-12);
  });

  it("rejects mismatched dimensions", () => {
    expect(() => cosine([1, 0], [1, 0, 0])).toThrow(EncoderError);
  });
});
