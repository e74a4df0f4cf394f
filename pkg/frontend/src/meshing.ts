/** Greedy meshing of a colored voxel grid into axis-aligned quads.
 *
 * Only faces between an occupied and an empty cell are emitted, and
 * coplanar faces with the same color merge into maximal rectangles, which
 * keeps a 32^3 shape far below the quad budget of a browser scene.
 */

import { VoxelModel, voxelIndex } from "./tgsv";

export interface Quad {
  /** Quad corners in cell units, counter-clockwise seen from outside. */
  corners: [number, number, number][];
  /** 0..255 RGB of the occupied cell behind the face. */
  color: [number, number, number];
  /** +x,-x,+y,-y,+z,-z as 0..5. */
  face: number;
}

const AXIS_OF_FACE = [0, 0, 1, 1, 2, 2];
const SIGN_OF_FACE = [1, -1, 1, -1, 1, -1];

function cellAt(model: VoxelModel, x: number, y: number, z: number): number {
  const r = model.resolution;
  if (x < 0 || y < 0 || z < 0 || x >= r || y >= r || z >= r) return 0;
  return model.occupancy[voxelIndex(r, x, y, z)]!;
}

function colorKey(model: VoxelModel, x: number, y: number, z: number): number {
  const i = 3 * voxelIndex(model.resolution, x, y, z);
  return (model.rgb[i]! << 16) | (model.rgb[i + 1]! << 8) | model.rgb[i + 2]!;
}

/** Merge a boolean/color mask of one slice into maximal rectangles. */
function greedyRectangles(
  mask: Int32Array, w: number, h: number,
  emit: (u: number, v: number, du: number, dv: number, key: number) => void,
): void {
  for (let v = 0; v < h; v++) {
    for (let u = 0; u < w; ) {
      const key = mask[v * w + u]!;
      if (key === 0) {
        u++;
        continue;
      }
      let du = 1;
      while (u + du < w && mask[v * w + u + du] === key) du++;
      let dv = 1;
      scan: while (v + dv < h) {
        for (let k = 0; k < du; k++) {
          if (mask[(v + dv) * w + u + k] !== key) break scan;
        }
        dv++;
      }
      for (let dy = 0; dy < dv; dy++) {
        mask.fill(0, (v + dy) * w + u, (v + dy) * w + u + du);
      }
      emit(u, v, du, dv, key);
      u += du;
    }
  }
}

export function greedyMesh(model: VoxelModel): Quad[] {
  const r = model.resolution;
  const quads: Quad[] = [];
  const mask = new Int32Array(r * r);

  for (let face = 0; face < 6; face++) {
    const axis = AXIS_OF_FACE[face]!;
    const sign = SIGN_OF_FACE[face]!;
    const ua = (axis + 1) % 3;
    const va = (axis + 2) % 3;
    const cell: [number, number, number] = [0, 0, 0];
    for (let slice = 0; slice < r; slice++) {
      mask.fill(0);
      let any = false;
      for (let v = 0; v < r; v++) {
        for (let u = 0; u < r; u++) {
          cell[axis] = slice;
          cell[ua] = u;
          cell[va] = v;
          if (cellAt(model, cell[0], cell[1], cell[2]) !== 1) continue;
          const nx = cell[0] + (axis === 0 ? sign : 0);
          const ny = cell[1] + (axis === 1 ? sign : 0);
          const nz = cell[2] + (axis === 2 ? sign : 0);
          if (cellAt(model, nx, ny, nz) === 1) continue;
          // +1 keeps color 0x000000 distinct from "no face"
          mask[v * r + u] = colorKey(model, cell[0], cell[1], cell[2]) + 1;
          any = true;
        }
      }
      if (!any) continue;
      greedyRectangles(mask, r, r, (u, v, du, dv, key) => {
        const plane = slice + (sign > 0 ? 1 : 0);
        const corner = (uu: number, vv: number): [number, number, number] => {
          const p: [number, number, number] = [0, 0, 0];
          p[axis] = plane;
          p[ua] = uu;
          p[va] = vv;
          return p;
        };
        const c = key - 1;
        const base: [number, number, number][] = [
          corner(u, v), corner(u + du, v),
          corner(u + du, v + dv), corner(u, v + dv),
        ];
        if (sign < 0) base.reverse();
        quads.push({
          corners: base,
          color: [(c >> 16) & 0xff, (c >> 8) & 0xff, c & 0xff],
          face,
        });
      });
    }
  }
  return quads;
}

/** Total exposed unit faces, the upper bound greedy merging starts from. */
export function exposedFaceCount(model: VoxelModel): number {
  const r = model.resolution;
  let faces = 0;
  for (let z = 0; z < r; z++) {
    for (let y = 0; y < r; y++) {
      for (let x = 0; x < r; x++) {
        if (cellAt(model, x, y, z) !== 1) continue;
        if (cellAt(model, x + 1, y, z) !== 1) faces++;
        if (cellAt(model, x - 1, y, z) !== 1) faces++;
        if (cellAt(model, x, y + 1, z) !== 1) faces++;
        if (cellAt(model, x, y - 1, z) !== 1) faces++;
        if (cellAt(model, x, y, z + 1) !== 1) faces++;
        if (cellAt(model, x, y, z - 1) !== 1) faces++;
      }
    }
  }
  return faces;
}

/** Area covered by quads of one face direction, for conservation checks. */
export function quadArea(quads: Quad[]): number {
  let area = 0;
  for (const q of quads) {
    const [a, b, , d] = q.corners;
    const e1 = [b![0] - a![0], b![1] - a![1], b![2] - a![2]];
    const e2 = [d![0] - a![0], d![1] - a![1], d![2] - a![2]];
    const cx = e1[1]! * e2[2]! - e1[2]! * e2[1]!;
    const cy = e1[2]! * e2[0]! - e1[0]! * e2[2]!;
    const cz = e1[0]! * e2[1]! - e1[1]! * e2[0]!;
    area += Math.sqrt(cx * cx + cy * cy + cz * cz);
  }
  return area;
}
