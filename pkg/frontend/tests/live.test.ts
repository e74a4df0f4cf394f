/** Round-trip checks against a running shape service.
 *
 * Skipped unless STUDIO_API_URL points at a live server, e.g.
 *   tgshape serve --run-dir <run> --port 8270 &
 *   STUDIO_API_URL=http://127.0.0.1:8270 npm run test:live
 */

import { describe, expect, it } from "vitest";
import { StudioClient } from "../src/api";
import { greedyMesh } from "../src/meshing";
import { occupiedCount } from "../src/tgsv";

const url = process.env.STUDIO_API_URL ?? "";
const caption = "a square table";
const LIVE_TIMEOUT = 180_000;

describe.skipIf(url === "")("live service", () => {
  const client = new StudioClient(url);

  it("reports health with a config fingerprint", async () => {
    const health = await client.health();
    expect(health.status).toBe("ok");
    expect(health.configHash.length).toBeGreaterThan(0);
  }, LIVE_TIMEOUT);

  it("fills a four-card gallery with renderable shapes", async () => {
    const samples = await client.generate(caption, 4, 11, 32);
    expect(samples.length).toBe(4);
    expect(new Set(samples.map((s) => s.seed)).size).toBe(4);
    for (const s of samples) {
      expect(s.model.resolution).toBe(32);
      greedyMesh(s.model); // must mesh without throwing
    }
  }, LIVE_TIMEOUT);

  it("replays a recorded request byte for byte", async () => {
    const first = await client.generate(caption, 2, 23, 32);
    const again = await client.generate(caption, 2, 23, 32);
    expect(again.map((s) => s.seed)).toEqual(first.map((s) => s.seed));
    for (let i = 0; i < first.length; i++) {
      expect(again[i]!.payload).toEqual(first[i]!.payload);
    }
  }, LIVE_TIMEOUT);

  it("replays one card from its recorded seed", async () => {
    const gallery = await client.generate(caption, 2, 37, 32);
    const card = gallery[1]!;
    const solo = await client.generate(caption, 1, card.seed, 32);
    expect(solo.length).toBe(1);
    expect(solo[0]!.payload).toEqual(card.payload);
  }, LIVE_TIMEOUT);

  it("returns identical before/after for an identical caption", async () => {
    const pair = await client.manipulate(caption, caption, "shape-edit", 51, 32);
    expect(pair.after.payload).toEqual(pair.before.payload);
  }, LIVE_TIMEOUT);

  it("starts an edit from the shape the gallery showed", async () => {
    const gallery = await client.generate(caption, 1, 67, 32);
    const pair = await client.manipulate(
      caption, "a round table", "shape-edit", 67, 32);
    expect(pair.before.payload).toEqual(gallery[0]!.payload);
  }, LIVE_TIMEOUT);

  it("exports a mesh as ascii ply", async () => {
    const ply = await client.mesh(caption, 11, 16);
    expect(ply.startsWith("ply")).toBe(true);
    expect(ply).toContain("end_header");
  }, LIVE_TIMEOUT);

  it("generates non-empty shapes at the default resolution", async () => {
    const samples = await client.generate(caption, 1, 5);
    expect(occupiedCount(samples[0]!.model)).toBeGreaterThan(0);
  }, LIVE_TIMEOUT);
});
