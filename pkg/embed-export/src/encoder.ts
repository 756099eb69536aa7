/**
 * Deterministic sentence encoder built on signed feature hashing.
 *
 * Each phrase decomposes into word, word-bigram and character n-gram
 * features; every feature hashes to a signed coordinate and the sum is
 * L2-normalized. No model files, no randomness: the same phrase always
 * embeds to the same unit vector, and lexically close phrases ("won",
 * "win") share features and therefore direction.
 */

export class EncoderError extends Error {}

const MODEL_PATTERN = /^char-ngram-hash-(\d+)$/;

/** Dimension encoded in a model identifier, e.g. char-ngram-hash-256. */
export function modelDim(model: string): number {
  const m = MODEL_PATTERN.exec(model);
  if (!m) {
    throw new EncoderError(`unknown encoder model: ${model}`);
  }
  const dim = Number(m[1]);
  if (dim < 8 || dim > 65536) {
    throw new EncoderError(`encoder dimension out of range: ${dim}`);
  }
  return dim;
}

/** Collapse whitespace runs and lowercase; the canonical phrase form. */
export function normalizePhrase(phrase: string): string {
  return phrase.replace(/\s+/g, " ").trim().toLowerCase();
}

function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function features(phrase: string): string[] {
  const words = phrase.split(" ");
  const out: string[] = [];
  for (let i = 0; i < words.length; i++) {
    const w = words[i];
    // whole-word identity twice so exact matches dominate the n-grams
    out.push("w:" + w, "w:" + w);
    if (i + 1 < words.length) {
      out.push("b:" + w + " " + words[i + 1]);
    }
    for (const ch of w) {
      out.push("c:" + ch);
    }
    const padded = "^" + w + "$";
    for (const n of [2, 3]) {
      for (let j = 0; j + n <= padded.length; j++) {
        out.push("g:" + padded.slice(j, j + n));
      }
    }
  }
  return out;
}

/** Embed a normalized phrase as a unit vector of the given dimension. */
export function encode(phrase: string, dim: number): number[] {
  if (phrase === "") {
    throw new EncoderError("cannot encode an empty phrase");
  }
  const v = new Array<number>(dim).fill(0);
  for (const feat of features(phrase)) {
    const h = fnv1a(feat);
    const sign = h & 1 ? 1 : -1;
    v[(h >>> 1) % dim] += sign;
  }
  let norm = 0;
  for (const x of v) {
    norm += x * x;
  }
  norm = Math.sqrt(norm);
  if (norm === 0) {
    throw new EncoderError(`all features of ${JSON.stringify(phrase)} cancelled`);
  }
  return v.map((x) => x / norm);
}

export function cosine(a: number[], b: number[]): number {
  if (a.length !== b.length) {
    throw new EncoderError("cosine over mismatched dimensions");
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}
