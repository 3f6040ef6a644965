/**
 * Rule-based canonical-query rewriter driven by the versioned template asset.
 * Keeps subject/action/count/viewpoint vocabulary, drops scene and style
 * terms; output is a single lowercase phrase. Deterministic by construction.
 */

import { createHash } from "crypto";
import { readFileSync } from "fs";

import { tokenize } from "./encoder";

// Dropped vocabulary: articles and fillers, media/style terms, scene terms.
const STOPWORDS = new Set([
  "a", "an", "the", "of", "in", "on", "at", "by", "with", "and", "or", "to",
  "for", "is", "are", "was", "were", "there", "this", "that", "its", "his",
  "her", "their",
  "photo", "photograph", "picture", "image", "portrait", "shot", "render",
  "rendering", "illustration", "artwork", "art", "style", "stylized",
  "aesthetic", "beautiful", "stunning", "gorgeous", "amazing", "epic",
  "masterpiece", "quality", "high", "ultra", "4k", "8k", "hd", "uhd",
  "detailed", "realistic", "photorealistic", "cinematic", "dramatic",
  "lighting", "light", "lit",
  "background", "backdrop", "scene", "scenery", "setting", "sunset",
  "sunrise", "evening", "morning", "night", "beach", "park", "studio",
  "city", "forest", "mountain", "mountains", "indoors", "outdoors", "sea",
  "ocean", "field", "street",
]);

export interface Template {
  text: string;
  hash: string;
}

export function loadTemplate(path: string): Template {
  const text = readFileSync(path, "utf-8");
  const hash = createHash("sha256").update(text, "utf-8").digest("hex");
  return { text, hash };
}

export function canonicalize(text: string): string {
  const kept = tokenize(text).filter((token) => !STOPWORDS.has(token));
  if (kept.length === 0) {
    // nothing pose-relevant survives: return the lowercased prompt unchanged
    return text.toLowerCase().trim();
  }
  return kept.join(" ");
}
