/** Binary colored-voxel payloads.
 *
 * Layout: "TGSV", one version byte, uint32 LE resolution, r^3 occupancy
 * bytes (0 or 1), then r^3 interleaved RGB byte triples. Both blocks use
 * x-fastest voxel order: flat index = x + y*r + z*r*r.
 */

export const TGSV_VERSION = 1;
const MAGIC = [0x54, 0x47, 0x53, 0x56]; // "TGSV"
const HEADER_BYTES = 9;

export class TgsvError extends Error {
  override name = "TgsvError";
}

export interface VoxelModel {
  resolution: number;
  /** r^3 bytes, 0 or 1, x-fastest. */
  occupancy: Uint8Array;
  /** 3*r^3 bytes, interleaved RGB per voxel, same order. */
  rgb: Uint8Array;
}

export function voxelIndex(r: number, x: number, y: number, z: number): number {
  return x + y * r + z * r * r;
}

export function parseTgsv(buf: Uint8Array): VoxelModel {
  if (buf.length < HEADER_BYTES) {
    throw new TgsvError(`payload of ${buf.length} bytes is shorter than the header`);
  }
  for (let i = 0; i < 4; i++) {
    if (buf[i] !== MAGIC[i]) {
      throw new TgsvError("magic bytes are not TGSV");
    }
  }
  if (buf[4] !== TGSV_VERSION) {
    throw new TgsvError(`unsupported version ${buf[4]}`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const r = view.getUint32(5, true);
  if (r < 1 || (r & (r - 1)) !== 0) {
    throw new TgsvError(`resolution ${r} is not a power of two`);
  }
  const n = r * r * r;
  if (buf.length !== HEADER_BYTES + 4 * n) {
    throw new TgsvError(
      `payload size ${buf.length} does not match resolution ${r}`);
  }
  const occupancy = buf.slice(HEADER_BYTES, HEADER_BYTES + n);
  for (let i = 0; i < n; i++) {
    const v = occupancy[i]!;
    if (v > 1) {
      throw new TgsvError(`occupancy byte ${v} at voxel ${i} is not 0/1`);
    }
  }
  const rgb = buf.slice(HEADER_BYTES + n);
  return { resolution: r, occupancy, rgb };
}

export function encodeTgsv(model: VoxelModel): Uint8Array {
  const r = model.resolution;
  const n = r * r * r;
  if (model.occupancy.length !== n || model.rgb.length !== 3 * n) {
    throw new TgsvError("occupancy/rgb lengths do not match the resolution");
  }
  const out = new Uint8Array(HEADER_BYTES + 4 * n);
  out.set(MAGIC, 0);
  out[4] = TGSV_VERSION;
  new DataView(out.buffer).setUint32(5, r, true);
  out.set(model.occupancy, HEADER_BYTES);
  out.set(model.rgb, HEADER_BYTES + n);
  return out;
}

export function decodeBase64(text: string): Uint8Array {
  const bin = globalThis.atob(text);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function occupiedCount(model: VoxelModel): number {
  let count = 0;
  for (let i = 0; i < model.occupancy.length; i++) {
    if (model.occupancy[i] === 1) count++;
  }
  return count;
}
