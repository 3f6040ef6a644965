import { existsSync } from "fs";
import { resolve } from "path";

import { EMBED_DIM } from "./encoder";

export interface SidecarConfig {
  embedModelId: string;
  normalizeModelId: string;
  host: string;
  port: number;
  maxBatch: number;
  templatePath: string;
}

function defaultTemplatePath(): string {
  const candidates = [
    resolve(process.cwd(), "contracts/normalize_template_v1.txt"),
    resolve(process.cwd(), "../contracts/normalize_template_v1.txt"),
  ];
  // compiled layout: dist/config.js -> ../../contracts (repo root)
  if (typeof __dirname !== "undefined") {
    candidates.push(resolve(__dirname, "../../contracts/normalize_template_v1.txt"));
  }
  for (const candidate of candidates) {
    if (existsSync(candidate)) return candidate;
  }
  return candidates[candidates.length - 1];
}

export function loadConfig(env: NodeJS.ProcessEnv = process.env): SidecarConfig {
  const embedDim = env.SIDECAR_EMBED_DIM ? Number(env.SIDECAR_EMBED_DIM) : EMBED_DIM;
  if (embedDim !== EMBED_DIM) {
    throw new Error(`embed model output dim must be ${EMBED_DIM}, got ${embedDim}`);
  }
  return {
    embedModelId: env.SIDECAR_EMBED_MODEL ?? "token-hash-384-v1",
    normalizeModelId: env.SIDECAR_NORMALIZE_MODEL ?? "rule-rewrite-v1",
    host: env.SIDECAR_HOST ?? "127.0.0.1",
    port: env.SIDECAR_PORT ? Number(env.SIDECAR_PORT) : 8500,
    maxBatch: env.SIDECAR_MAX_BATCH ? Number(env.SIDECAR_MAX_BATCH) : 32,
    templatePath: env.SIDECAR_TEMPLATE_PATH ?? defaultTemplatePath(),
  };
}
