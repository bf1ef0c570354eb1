import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';

import type { ScenePayload } from '../src/api.js';
import { decodeRle, maskContains, maskOutline } from '../src/rle.js';

interface Fixture {
  payload: ScenePayload;
  inst_map0: number[];
}

const fixture: Fixture = JSON.parse(
  readFileSync(new URL('./fixtures/scene.json', import.meta.url), 'utf-8'),
);

describe('decodeRle', () => {
  it('reconstructs every instance mask of the fixture exactly', () => {
    const { payload, inst_map0 } = fixture;
    for (const inst of payload.instances) {
      const mask = decodeRle(inst.mask);
      expect(mask.length).toBe(payload.height * payload.width);
      for (let i = 0; i < mask.length; i++) {
        expect(mask[i]).toBe(inst_map0[i] === inst.id ? 1 : 0);
      }
    }
  });

  it('handles a mask that starts with foreground', () => {
    const mask = decodeRle({ size: [2, 3], counts: [0, 2, 3, 1] });
    expect([...mask]).toEqual([1, 1, 0, 0, 0, 1]);
  });

  it('rejects runs that misstate the pixel count', () => {
    expect(() => decodeRle({ size: [2, 2], counts: [3] })).toThrow();
    expect(() => decodeRle({ size: [2, 2], counts: [5] })).toThrow();
  });
});

describe('maskContains', () => {
  it('agrees with direct indexing', () => {
    const mask = decodeRle({ size: [2, 3], counts: [1, 2, 3] });
    expect(maskContains(mask, 3, 1, 0)).toBe(true);
    expect(maskContains(mask, 3, 0, 0)).toBe(false);
  });
});

describe('maskOutline', () => {
  it('returns only boundary pixels', () => {
    // 3x3 solid block inside a 5x5 grid: all 9 pixels touch the outside
    const flat = new Uint8Array(25);
    for (let y = 1; y <= 3; y++)
      for (let x = 1; x <= 3; x++) flat[y * 5 + x] = 1;
    const outline = maskOutline(flat, 5, 5);
    expect(outline.length).toBe(8);
    expect(outline).not.toContainEqual([2, 2]);
  });
});
