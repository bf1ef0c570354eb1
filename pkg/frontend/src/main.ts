/** Canvas editor: click an object, drag its displacement arrow, generate. */

import { createScene, generateVideo, health, type ScenePayload } from './api.js';
import { EditorState } from './editor.js';
import { Player } from './playback.js';
import { decodeRle, maskOutline } from './rle.js';

const SCALE = 6; // canvas pixels per scene pixel

const editor = new EditorState();
let player = new Player(0);
let frameImages: HTMLImageElement[] = [];
let frame0Image: HTMLImageElement | null = null;
let seed = 1;
let dragging: { instanceId: number } | null = null;
let dragPoint: [number, number] | null = null;

const canvas = document.getElementById('editor') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const statusEl = document.getElementById('status')!;
const infoEl = document.getElementById('info')!;

function setStatus(text: string): void {
  statusEl.textContent = text;
}

function loadImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = reject;
    img.src = `data:image/png;base64,${b64}`;
  });
}

function toScene(ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [
    Math.floor((ev.clientX - rect.left) / SCALE),
    Math.floor((ev.clientY - rect.top) / SCALE),
  ];
}

function drawArrow(
  from: [number, number],
  to: [number, number],
  color: string,
  dashed: boolean,
): void {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 2;
  if (dashed) ctx.setLineDash([6, 4]);
  const fx = (from[0] + 0.5) * SCALE;
  const fy = (from[1] + 0.5) * SCALE;
  const tx = (to[0] + 0.5) * SCALE;
  const ty = (to[1] + 0.5) * SCALE;
  ctx.beginPath();
  ctx.moveTo(fx, fy);
  ctx.lineTo(tx, ty);
  ctx.stroke();
  const angle = Math.atan2(ty - fy, tx - fx);
  ctx.setLineDash([]);
  ctx.beginPath();
  ctx.moveTo(tx, ty);
  ctx.lineTo(tx - 9 * Math.cos(angle - 0.4), ty - 9 * Math.sin(angle - 0.4));
  ctx.lineTo(tx - 9 * Math.cos(angle + 0.4), ty - 9 * Math.sin(angle + 0.4));
  ctx.closePath();
  ctx.fill();
  ctx.restore();
}

function render(nowMs: number): void {
  const scene = editor.scene;
  if (!scene) return;
  canvas.width = scene.width * SCALE;
  canvas.height = scene.height * SCALE;
  ctx.imageSmoothingEnabled = false;

  const frameIdx = player.frameAt(nowMs);
  const img =
    player.playing && frameImages.length > 0
      ? frameImages[frameIdx]
      : frame0Image;
  if (img) ctx.drawImage(img, 0, 0, canvas.width, canvas.height);

  if (!player.playing) {
    if (editor.selected !== null) {
      const inst = editor.instance(editor.selected);
      const mask = decodeRle(inst.mask);
      ctx.fillStyle = 'rgba(255, 255, 0, 0.85)';
      for (const [x, y] of maskOutline(mask, scene.height, scene.width)) {
        ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
      }
    }
    for (const arrow of editor.overlayArrows()) {
      drawArrow(arrow.start, arrow.end, arrow.dashed ? '#7fd4ff' : '#ff5252', arrow.dashed);
      const nde = editor.ndeFor(arrow.instanceId);
      if (nde !== null && !arrow.dashed) {
        ctx.fillStyle = '#fff';
        ctx.font = '12px monospace';
        ctx.fillText(
          `NDE ${nde.toFixed(2)}`,
          (arrow.end[0] + 1) * SCALE,
          arrow.end[1] * SCALE,
        );
      }
    }
    if (dragging && dragPoint) {
      const inst = editor.instance(dragging.instanceId);
      drawArrow(inst.barycenter, dragPoint, '#ffd24d', false);
    }
  }
  requestAnimationFrame(render);
}

async function newScene(): Promise<void> {
  setStatus('sampling scene…');
  const payload: ScenePayload = await createScene({
    seed: seed++,
    n_objects: 3,
    height: 64,
    width: 64,
    T: 5,
  });
  editor.loadScene(payload);
  frame0Image = await loadImage(payload.frame0);
  frameImages = [];
  player = new Player(0);
  setStatus(`scene ${payload.scene_id.slice(0, 8)} — click an object, drag an arrow`);
  updateInfo();
}

async function generate(genSeed: number): Promise<void> {
  const scene = editor.scene;
  if (!scene) return;
  setStatus('generating…');
  try {
    const resp = await generateVideo(scene.scene_id, editor.toRequest(genSeed));
    editor.applyResponse(resp);
    frameImages = await Promise.all(resp.frames.map(loadImage));
    player = new Player(frameImages.length, 5);
    player.play(performance.now());
    setStatus(
      `playing ${frameImages.length} frames (loop ${player.loopSeconds().toFixed(1)}s); ` +
      'dashed arrows = inferred motion',
    );
  } catch (err) {
    setStatus(`generation failed: ${(err as Error).message}`);
  }
  updateInfo();
}

function updateInfo(): void {
  const scene = editor.scene;
  if (!scene) return;
  const rows = scene.instances.map((inst) => {
    const delta = editor.delta(inst.id);
    const label = delta
      ? `arrow (${delta[0].toFixed(1)}, ${delta[1].toFixed(1)})`
      : 'no arrow';
    return `#${inst.id} ${label}`;
  });
  infoEl.textContent = rows.join('   ');
}

canvas.addEventListener('mousedown', (ev) => {
  if (player.playing) {
    player.pause();
    return;
  }
  const [x, y] = toScene(ev);
  const hit = editor.selectAt(x, y);
  if (hit !== null) dragging = { instanceId: hit };
  updateInfo();
});

canvas.addEventListener('mousemove', (ev) => {
  if (dragging) dragPoint = toScene(ev);
});

canvas.addEventListener('mouseup', (ev) => {
  if (!dragging) return;
  const [x, y] = toScene(ev);
  const inst = editor.instance(dragging.instanceId);
  const dist = Math.hypot(x - inst.barycenter[0], y - inst.barycenter[1]);
  if (dist < 1) {
    editor.removeArrow(dragging.instanceId); // a click on the barycenter clears
  } else {
    editor.setArrow(dragging.instanceId, x, y);
  }
  dragging = null;
  dragPoint = null;
  updateInfo();
});

document.getElementById('new-scene')!.addEventListener('click', () => void newScene());
document.getElementById('generate')!.addEventListener('click', () => void generate(seed));
document.getElementById('resample')!.addEventListener('click', () => void generate(++seed * 977));
document.getElementById('stop')!.addEventListener('click', () => player.pause());

void (async () => {
  try {
    const h = await health();
    if (h.checkpoint_step === null) {
      setStatus('server has no checkpoint loaded; generation will fail');
    }
  } catch {
    setStatus('server unreachable');
  }
  await newScene();
  requestAnimationFrame(render);
})();
