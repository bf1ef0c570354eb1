/** Editor state: selection, displacement arrows, request/response plumbing.
 *
 * Pure logic, no DOM. The canvas layer renders whatever this class holds.
 */

import type {
  GenerateRequest,
  GenerateResponse,
  InstancePayload,
  MotionEntry,
  ScenePayload,
} from './api.js';
import { decodeRle, maskContains } from './rle.js';

export interface Arrow {
  instanceId: number;
  start: [number, number]; // barycenter
  end: [number, number];   // drop point (start + delta after clamping)
  dashed: boolean;         // dashed = inferred by the model, not user-drawn
}

export class EditorState {
  scene: ScenePayload | null = null;
  selected: number | null = null;
  /** one user arrow per instance at most, keyed by instance id */
  private deltas = new Map<number, [number, number]>();
  private masks = new Map<number, Uint8Array>();
  lastResponse: GenerateResponse | null = null;

  loadScene(payload: ScenePayload): void {
    this.scene = payload;
    this.selected = null;
    this.deltas.clear();
    this.lastResponse = null;
    this.masks.clear();
    for (const inst of payload.instances) {
      this.masks.set(inst.id, decodeRle(inst.mask));
    }
  }

  instance(id: number): InstancePayload {
    const inst = this.scene?.instances.find((i) => i.id === id);
    if (!inst) throw new Error(`unknown instance ${id}`);
    return inst;
  }

  /** Highest-id instance whose mask covers the pixel (masks are disjoint,
   *  but descending order also encodes the renderer's z-order). */
  hitTest(x: number, y: number): number | null {
    if (!this.scene) return null;
    const { width, height } = this.scene;
    if (x < 0 || y < 0 || x >= width || y >= height) return null;
    const ids = [...this.masks.keys()].sort((a, b) => b - a);
    for (const id of ids) {
      if (maskContains(this.masks.get(id)!, width, x, y)) return id;
    }
    return null;
  }

  /** Click selection: background clears the selection. */
  selectAt(x: number, y: number): number | null {
    this.selected = this.hitTest(Math.round(x), Math.round(y));
    return this.selected;
  }

  /** Set the displacement arrow of an instance from a drop point; the delta
   *  is clamped into the representable motion box. Returns the delta. */
  setArrow(instanceId: number, dropX: number, dropY: number): [number, number] {
    if (!this.scene) throw new Error('no scene loaded');
    const inst = this.instance(instanceId);
    const limit = this.scene.max_disp;
    const clamp = (v: number) => Math.max(-limit, Math.min(limit, v));
    const delta: [number, number] = [
      clamp(dropX - inst.barycenter[0]),
      clamp(dropY - inst.barycenter[1]),
    ];
    this.deltas.set(instanceId, delta);
    return delta;
  }

  removeArrow(instanceId: number): void {
    this.deltas.delete(instanceId);
  }

  delta(instanceId: number): [number, number] | undefined {
    return this.deltas.get(instanceId);
  }

  motions(): MotionEntry[] {
    return [...this.deltas.entries()]
      .sort((a, b) => a[0] - b[0])
      .map(([id, [dx, dy]]) => ({ instance_id: id, dx, dy }));
  }

  toRequest(seed: number, returnMetrics = true): GenerateRequest {
    return { motions: this.motions(), seed, return_metrics: returnMetrics };
  }

  applyResponse(resp: GenerateResponse): void {
    this.lastResponse = resp;
  }

  /** Arrows to draw: the user's (solid) plus inferred motions (dashed). */
  overlayArrows(): Arrow[] {
    if (!this.scene) return [];
    const arrows: Arrow[] = [];
    const predicted = new Map(
      (this.lastResponse?.predicted_displacements ?? []).map((p) => [p.id, p]),
    );
    for (const inst of this.scene.instances) {
      const start = inst.barycenter;
      const user = this.deltas.get(inst.id);
      if (user) {
        arrows.push({
          instanceId: inst.id,
          start,
          end: [start[0] + user[0], start[1] + user[1]],
          dashed: false,
        });
        continue;
      }
      const pred = predicted.get(inst.id);
      if (pred && !pred.known) {
        arrows.push({
          instanceId: inst.id,
          start,
          end: [start[0] + pred.dx, start[1] + pred.dy],
          dashed: true,
        });
      }
    }
    return arrows;
  }

  ndeFor(instanceId: number): number | null {
    const nde = this.lastResponse?.metrics?.nde;
    if (!nde) return null;
    const value = nde[String(instanceId)];
    return value ?? null;
  }
}
