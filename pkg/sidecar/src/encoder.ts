/**
 * Deterministic sentence encoder: lowercase alphanumeric tokens hashed into
 * signed bins (32-bit FNV-1a), then L2-normalized. The engine's built-in
 * featurizer implements the identical algorithm, and the shared contract
 * fixture pins both to the same vectors.
 */

export const EMBED_DIM = 384;

const FNV_OFFSET = 0x811c9dc5;
const FNV_PRIME = 16777619;

export function fnv1a32(token: string): number {
  let h = FNV_OFFSET;
  const bytes = Buffer.from(token, "utf-8");
  for (const b of bytes) {
    h = Math.imul(h ^ b, FNV_PRIME) >>> 0;
  }
  return h >>> 0;
}

export function tokenize(text: string): string[] {
  return text.toLowerCase().match(/[a-z0-9]+/g) ?? [];
}

export class NoTokensError extends Error {}

export function embed(text: string, dim: number = EMBED_DIM): number[] {
  const tokens = tokenize(text);
  if (tokens.length === 0) {
    throw new NoTokensError("text has no embeddable tokens");
  }
  const acc = new Float64Array(dim);
  for (const token of tokens) {
    const h = fnv1a32(token);
    const idx = (h & 0x7fffffff) % dim;
    acc[idx] += h >>> 31 ? -1 : 1;
  }
  let sumSquares = 0;
  for (const v of acc) sumSquares += v * v;
  const norm = Math.sqrt(sumSquares);
  if (norm === 0) {
    throw new NoTokensError("token hashes cancelled out; cannot embed");
  }
  return Array.from(acc, (v) => v / norm);
}
