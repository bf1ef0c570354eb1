/** Typed client for the scene/generation HTTP API. */

export interface RleMask {
  size: [number, number]; // [height, width]
  counts: number[];       // row-major runs, background first
}

export interface InstancePayload {
  id: number;
  class: number;
  barycenter: [number, number]; // (x, y)
  bbox: [number, number, number, number]; // x, y, w, h
  mask: RleMask;
}

export interface ScenePayload {
  scene_id: string;
  frame0: string; // base64 PNG
  height: number;
  width: number;
  T: number;
  max_disp: number;
  instances: InstancePayload[];
}

export interface MotionEntry {
  instance_id: number;
  dx: number;
  dy: number;
}

export interface GenerateRequest {
  motions: MotionEntry[];
  seed: number;
  return_metrics: boolean;
}

export interface PredictedDisplacement {
  id: number;
  dx: number;
  dy: number;
  known: boolean;
}

export interface GenerateResponse {
  frames: string[]; // base64 PNG per timestep
  predicted_displacements: PredictedDisplacement[];
  metrics?: { nde: Record<string, number | null> };
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(path, init);
  if (!res.ok) {
    const body = await res.json().catch(() => ({} as { detail?: string }));
    throw new Error((body as { detail?: string }).detail ?? `HTTP ${res.status}`);
  }
  return res.json() as Promise<T>;
}

export function createScene(params: {
  seed: number;
  n_objects: number;
  height: number;
  width: number;
  T: number;
}): Promise<ScenePayload> {
  return request<ScenePayload>('/api/scenes', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(params),
  });
}

export function generateVideo(
  sceneId: string,
  req: GenerateRequest,
): Promise<GenerateResponse> {
  return request<GenerateResponse>(`/api/scenes/${sceneId}/generate`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(req),
  });
}

export function health(): Promise<{ status: string; checkpoint_step: number | null }> {
  return request('/api/health');
}
