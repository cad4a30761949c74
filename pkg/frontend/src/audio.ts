/** Audible alarm cue: one beep per CAME, de-duplicated over a 10 s burst
 * window so an alarm storm does not become a siren. */

export const BURST_WINDOW_MS = 10_000;

export class AlarmSound {
  private lastPlayed = -Infinity;
  played = 0;

  constructor(private play: () => void = defaultBeep,
              private now: () => number = () => Date.now()) {}

  onCame(): boolean {
    const t = this.now();
    if (t - this.lastPlayed < BURST_WINDOW_MS) return false;
    this.lastPlayed = t;
    this.played += 1;
    this.play();
    return true;
  }
}

function defaultBeep(): void {
  type AudioCtor = new () => AudioContext;
  const Ctor = (window as unknown as { AudioContext?: AudioCtor }).AudioContext;
  if (!Ctor) return;
  const ctx = new Ctor();
  const osc = ctx.createOscillator();
  const gain = ctx.createGain();
  osc.frequency.value = 880;
  gain.gain.value = 0.1;
  osc.connect(gain).connect(ctx.destination);
  osc.start();
  osc.stop(ctx.currentTime + 0.25);
  osc.onended = () => ctx.close();
}
