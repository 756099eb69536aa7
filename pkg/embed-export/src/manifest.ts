import { z } from "zod";

import { EncoderError, modelDim, normalizePhrase } from "./encoder";

export class ManifestError extends Error {}

const schema = z.strictObject({
  phrases: z.array(z.string()).min(1, "phrases must be nonempty"),
  model: z.string().min(1),
  out: z.string().min(1),
  dim: z.number().int().positive().optional(),
});

export interface Manifest {
  /** Normalized, order-preserving phrase list. */
  phrases: string[];
  model: string;
  dim: number;
  out: string;
}

/** Validate a parsed manifest JSON value. */
export function parseManifest(raw: unknown): Manifest {
  const parsed = schema.safeParse(raw);
  if (!parsed.success) {
    throw new ManifestError(parsed.error.issues.map((i) => i.message).join("; "));
  }
  const { phrases, model, out, dim } = parsed.data;

  let encoderDim: number;
  try {
    encoderDim = modelDim(model);
  } catch (e) {
    if (e instanceof EncoderError) {
      throw new ManifestError(e.message);
    }
    throw e;
  }
  if (dim !== undefined && dim !== encoderDim) {
    throw new ManifestError(`manifest dim ${dim} does not match encoder dim ${encoderDim}`);
  }

  const normalized: string[] = [];
  const seen = new Set<string>();
  for (const p of phrases) {
    const n = normalizePhrase(p);
    if (n === "") {
      throw new ManifestError(`phrase ${JSON.stringify(p)} is empty after normalization`);
    }
    if (seen.has(n)) {
      throw new ManifestError(`duplicate phrase after normalization: ${JSON.stringify(n)}`);
    }
    seen.add(n);
    normalized.push(n);
  }
  return { phrases: normalized, model, dim: encoderDim, out };
}
