/** Typed client for the shape-inference HTTP API.
 *
 * Every response is validated against its schema before anything touches
 * application state, and each flow keeps a single request in flight:
 * a submission made while one is active replaces any queued one.
 */

import { z } from "zod";
import { decodeBase64, parseTgsv, VoxelModel } from "./tgsv";

const shapeEnvelope = z.object({
  seed: z.number().int(),
  voxels: z.string().min(1),
});

const generateResponse = z.object({
  shapes: z.array(shapeEnvelope),
});

const manipulateResponse = z.object({
  before: shapeEnvelope,
  after: shapeEnvelope,
});

const healthResponse = z.object({
  status: z.string(),
  config_hash: z.string(),
});

const errorResponse = z.object({
  error: z.string(),
  detail: z.string(),
});

export type ManipulateMode = "shape-edit" | "color-edit";

export interface Sample {
  seed: number;
  model: VoxelModel;
  /** Raw payload bytes, kept for download and replay comparisons. */
  payload: Uint8Array;
}

export class ApiError extends Error {
  override name = "ApiError";
  constructor(message: string, readonly status: number | null = null) {
    super(message);
  }
}

function decodeSample(env: z.infer<typeof shapeEnvelope>): Sample {
  const payload = decodeBase64(env.voxels);
  return { seed: env.seed, model: parseTgsv(payload), payload };
}

async function post(base: string, path: string, body: unknown): Promise<unknown> {
  let res: Response;
  try {
    res = await fetch(base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (err) {
    throw new ApiError(`service unreachable: ${String(err)}`);
  }
  const text = await res.text();
  if (!res.ok) {
    let detail = text.slice(0, 200);
    try {
      detail = errorResponse.parse(JSON.parse(text)).detail;
    } catch {
      // non-envelope error body, keep the raw text
    }
    throw new ApiError(detail, res.status);
  }
  try {
    return JSON.parse(text);
  } catch {
    throw new ApiError("response is not JSON", res.status);
  }
}

export class StudioClient {
  constructor(readonly base: string = "") {}

  async health(): Promise<{ status: string; configHash: string }> {
    let res: Response;
    try {
      res = await fetch(this.base + "/api/health");
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    const parsed = healthResponse.safeParse(await res.json());
    if (!res.ok || !parsed.success) {
      throw new ApiError("health check failed", res.status);
    }
    return { status: parsed.data.status, configHash: parsed.data.config_hash };
  }

  async generate(
    text: string, count: number, seed?: number, resolution?: number,
  ): Promise<Sample[]> {
    const raw = await post(this.base, "/api/generate",
      { text, count, seed, resolution });
    const parsed = generateResponse.safeParse(raw);
    if (!parsed.success) {
      throw new ApiError(`generate payload rejected: ${parsed.error.message}`);
    }
    return parsed.data.shapes.map(decodeSample);
  }

  async manipulate(
    originalText: string, editedText: string, mode: ManipulateMode,
    seed?: number, resolution?: number,
  ): Promise<{ before: Sample; after: Sample }> {
    const raw = await post(this.base, "/api/manipulate", {
      original_text: originalText,
      edited_text: editedText,
      mode,
      seed,
      resolution,
    });
    const parsed = manipulateResponse.safeParse(raw);
    if (!parsed.success) {
      throw new ApiError(`manipulate payload rejected: ${parsed.error.message}`);
    }
    return {
      before: decodeSample(parsed.data.before),
      after: decodeSample(parsed.data.after),
    };
  }

  async mesh(
    text: string, seed?: number, resolution?: number, iso?: number,
  ): Promise<string> {
    let res: Response;
    try {
      res = await fetch(this.base + "/api/mesh", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text, seed, resolution, iso }),
      });
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    if (!res.ok) {
      throw new ApiError(`mesh export failed (${res.status})`, res.status);
    }
    return res.text();
  }
}

type Task<T> = () => Promise<T>;

/** One in-flight request per key; a newer submission replaces a queued one. */
export class FlowGate {
  private active = new Map<string, Promise<void>>();
  private queued = new Map<string, { task: Task<unknown>; settle: (r: PromiseSettledResult<unknown>) => void }>();

  /** True when `key` has a request in flight. */
  busy(key: string): boolean {
    return this.active.has(key);
  }

  async run<T>(key: string, task: Task<T>): Promise<T> {
    if (this.active.has(key)) {
      return new Promise<T>((resolve, reject) => {
        const prev = this.queued.get(key);
        if (prev) {
          prev.settle({ status: "rejected", reason: new ApiError("superseded") });
        }
        this.queued.set(key, {
          task,
          settle: (r) => {
            if (r.status === "fulfilled") resolve(r.value as T);
            else reject(r.reason);
          },
        });
      });
    }
    const done = (async () => {
      try {
        // .then(task) defers the call a microtask, so a task that throws
        // synchronously cannot reach the cleanup before active is set
        return await Promise.resolve().then(task);
      } finally {
        this.active.delete(key);
        const next = this.queued.get(key);
        if (next) {
          this.queued.delete(key);
          this.run(key, next.task).then(
            (value) => next.settle({ status: "fulfilled", value }),
            (reason) => next.settle({ status: "rejected", reason }),
          );
        }
      }
    })();
    this.active.set(key, done.then(() => undefined, () => undefined));
    return done;
  }
}
