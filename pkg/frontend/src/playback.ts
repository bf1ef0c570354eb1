/** Frame-loop timing, kept free of DOM so it can be unit-tested. */

export class Player {
  private startMs = 0;
  playing = false;

  constructor(
    public frameCount: number,
    public fps: number = 5,
  ) {}

  play(nowMs: number): void {
    this.playing = true;
    this.startMs = nowMs;
  }

  pause(): void {
    this.playing = false;
  }

  /** Frame index to display at a wall-clock time; loops forever. */
  frameAt(nowMs: number): number {
    if (!this.playing || this.frameCount === 0) return 0;
    const elapsed = (nowMs - this.startMs) / 1000;
    return Math.floor(elapsed * this.fps) % this.frameCount;
  }

  /** Duration of one loop in seconds (T frames at the configured FPS). */
  loopSeconds(): number {
    return this.frameCount / this.fps;
  }
}
