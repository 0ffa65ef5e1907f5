/**
 * HTTP inference shim implementing the pipeline's image-backend contract:
 *
 *   POST /generate {positive, negative, seed, steps?, cfg?, width?, height?,
 *                   lora_tag?, lora_weight?}
 *     -> 200 {image_base64, media_type, metadata}
 *     -> 400 {error} on malformed requests
 *   GET /healthz -> {status, model_tag}
 *
 * Stub mode renders seed-keyed noise whose brightness follows the stub model
 * file named by lora_tag; identical requests yield identical bytes. Real mode
 * proxies to a diffusion runtime at QZLORA_BRIDGE_SD_URL and reports
 * WeightsMissing when none is configured.
 */

import * as fs from "fs";
import * as http from "http";

import express from "express";
import { z } from "zod";

import { encodeGrayPng } from "./png";
import { deriveSeed, SplitMix64 } from "./rng";

export const SD_URL_ENV = "QZLORA_BRIDGE_SD_URL";

const STUB_SIZE = 64;
const STUB_BASE_BRIGHTNESS = 0.15;
const STUB_JITTER = 16;

const generateSchema = z.object({
  positive: z.string().min(1),
  negative: z.string(),
  // Seeds must be JSON-safe integers; 64-bit values would already have lost
  // precision in transit, so they are rejected rather than silently mangled.
  seed: z.number().int().nonnegative().max(Number.MAX_SAFE_INTEGER),
  steps: z.number().int().positive().optional(),
  cfg: z.number().positive().optional(),
  width: z.number().int().positive().optional(),
  height: z.number().int().positive().optional(),
  lora_tag: z.string().optional(),
  lora_weight: z.number().optional(),
});

export type GenerateRequest = z.infer<typeof generateSchema>;

function stubBrightness(loraTag: string | undefined): number {
  if (!loraTag) return STUB_BASE_BRIGHTNESS;
  try {
    const model = JSON.parse(fs.readFileSync(loraTag, "utf8"));
    const brightness = Number(model.brightness);
    return Number.isFinite(brightness) ? brightness : STUB_BASE_BRIGHTNESS;
  } catch {
    return STUB_BASE_BRIGHTNESS;
  }
}

export function renderStubImage(request: GenerateRequest): Buffer {
  const center = Math.round(stubBrightness(request.lora_tag) * 255);
  const rng = new SplitMix64(deriveSeed("stub-image", request.seed));
  const span = 2 * STUB_JITTER + 1;
  const pixels = new Uint8Array(STUB_SIZE * STUB_SIZE);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = Math.max(0, Math.min(255, center + rng.nextBelow(span) - STUB_JITTER));
  }
  return encodeGrayPng(STUB_SIZE, STUB_SIZE, pixels);
}

export interface ServerOptions {
  stub: boolean;
  modelTag: string;
}

export function createApp(opts: ServerOptions): express.Express {
  const app = express();
  app.use(express.json({ limit: "4mb" }));

  app.get("/healthz", (_req, res) => {
    res.json({ status: "ok", model_tag: opts.modelTag, mode: opts.stub ? "stub" : "real" });
  });

  app.post("/generate", async (req, res) => {
    const parsed = generateSchema.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json({ error: `malformed request: ${parsed.error.issues
        .map((issue) => `${issue.path.join(".")}: ${issue.message}`).join("; ")}` });
      return;
    }
    const request = parsed.data;
    const metadata: Record<string, unknown> = {
      seed: request.seed,
      model_tag: opts.modelTag,
      backend: opts.stub ? "stub" : "real",
    };
    if (request.lora_tag !== undefined) metadata.lora_tag = request.lora_tag;

    if (opts.stub) {
      const image = renderStubImage(request);
      res.json({
        image_base64: image.toString("base64"),
        media_type: "image/png",
        metadata,
      });
      return;
    }

    const upstream = process.env[SD_URL_ENV];
    if (!upstream) {
      res.status(503).json({ error: "WeightsMissing: no diffusion runtime configured" });
      return;
    }
    try {
      const forwarded = await fetch(`${upstream.replace(/\/$/, "")}/generate`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
      });
      const payload = await forwarded.json();
      res.status(forwarded.status).json(payload);
    } catch (err) {
      res.status(502).json({ error: `upstream failure: ${err}` });
    }
  });

  return app;
}

export function serve(port: number, opts: ServerOptions): Promise<http.Server> {
  const app = createApp(opts);
  return new Promise((resolve, reject) => {
    const server = app.listen(port, () => resolve(server));
    server.on("error", reject);
  });
}
