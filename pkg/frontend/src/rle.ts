/** Run-length mask decoding and pixel hit-testing.
 *
 * Masks arrive row-major as alternating run lengths starting with a
 * background run; they are authoritative for hit-testing (no client-side
 * re-segmentation), so decoding must be exact.
 */

import type { RleMask } from './api.js';

export function decodeRle(mask: RleMask): Uint8Array {
  const [height, width] = mask.size;
  const out = new Uint8Array(height * width);
  let pos = 0;
  let value = 0;
  for (const run of mask.counts) {
    if (run < 0 || pos + run > out.length) {
      throw new Error(`invalid RLE run ${run} at offset ${pos}`);
    }
    if (value === 1) {
      out.fill(1, pos, pos + run);
    }
    pos += run;
    value ^= 1;
  }
  if (pos !== out.length) {
    throw new Error(`RLE covers ${pos} of ${out.length} pixels`);
  }
  return out;
}

export function maskContains(
  mask: Uint8Array,
  width: number,
  x: number,
  y: number,
): boolean {
  return mask[y * width + x] === 1;
}

/** Boundary pixels of a decoded mask (4-neighbourhood), for outlining. */
export function maskOutline(mask: Uint8Array, height: number, width: number): Array<[number, number]> {
  const pts: Array<[number, number]> = [];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[y * width + x] !== 1) continue;
      const edge =
        x === 0 || x === width - 1 || y === 0 || y === height - 1 ||
        mask[y * width + x - 1] === 0 ||
        mask[y * width + x + 1] === 0 ||
        mask[(y - 1) * width + x] === 0 ||
        mask[(y + 1) * width + x] === 0;
      if (edge) pts.push([x, y]);
    }
  }
  return pts;
}
