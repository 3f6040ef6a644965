/**
 * HTTP surface: POST /embed, POST /normalize, GET /health, matching the
 * engine's client wire protocol (JSON bodies, 400 on empty text, 503 when
 * the normalization template asset is unavailable).
 */

import express, { Express, Request, Response } from "express";
import { z } from "zod";

import { SidecarConfig } from "./config";
import { EMBED_DIM, NoTokensError, embed } from "./encoder";
import { Template, canonicalize, loadTemplate } from "./normalizer";

const textBody = z.object({ text: z.string() });
const batchBody = z.object({ texts: z.array(z.string()).min(1) });

export function createApp(config: SidecarConfig): Express {
  const app = express();
  app.use(express.json({ limit: "1mb" }));

  const template = (): Template | null => {
    try {
      return loadTemplate(config.templatePath);
    } catch {
      return null;
    }
  };

  app.get("/health", (_req: Request, res: Response) => {
    res.json({
      status: "ok",
      embed_model: config.embedModelId,
      normalize_model: config.normalizeModelId,
      embed_dim: EMBED_DIM,
      template_hash: template()?.hash ?? null,
    });
  });

  app.post("/embed", (req: Request, res: Response) => {
    const single = textBody.safeParse(req.body);
    if (single.success) {
      const text = single.data.text;
      if (!text.trim()) {
        res.status(400).json({ error: "text must be nonempty" });
        return;
      }
      try {
        res.json({ vector: embed(text) });
      } catch (err) {
        if (err instanceof NoTokensError) {
          res.status(400).json({ error: err.message });
          return;
        }
        throw err;
      }
      return;
    }
    const batch = batchBody.safeParse(req.body);
    if (batch.success) {
      const texts = batch.data.texts;
      if (texts.length > config.maxBatch) {
        res.status(400).json({ error: `batch exceeds limit of ${config.maxBatch}` });
        return;
      }
      if (texts.some((t) => !t.trim())) {
        res.status(400).json({ error: "texts must be nonempty" });
        return;
      }
      try {
        res.json({ vectors: texts.map((t) => embed(t)) });
      } catch (err) {
        if (err instanceof NoTokensError) {
          res.status(400).json({ error: err.message });
          return;
        }
        throw err;
      }
      return;
    }
    res.status(400).json({ error: "body must be {text} or {texts}" });
  });

  app.post("/normalize", (req: Request, res: Response) => {
    const parsed = textBody.safeParse(req.body);
    if (!parsed.success || !parsed.data.text.trim()) {
      res.status(400).json({ error: "text must be nonempty" });
      return;
    }
    const tpl = template();
    if (tpl === null) {
      res.status(503).json({ error: "normalization template unavailable" });
      return;
    }
    res.set("X-Template-Hash", tpl.hash);
    res.json({ canonical: canonicalize(parsed.data.text) });
  });

  return app;
}
