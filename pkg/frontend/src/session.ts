// Console session: one single-threaded state machine fed by wire messages
// and input events. STATE messages drive rendering and act as the frame
// clock for steering coalescing; ALERT messages render a banner and beep
// immediately and are never coalesced away.

import type {
  AckPayload,
  AlertPayload,
  Command,
  RegistrationPayload,
  StatePayload,
  WireMessage,
} from "./protocol.js";
import { renderState, type Surface } from "./renderer.js";

export interface SessionOptions {
  stepCm?: number; // steering sensitivity, cm per keypress
  stepDeg?: number; // rotation sensitivity, degrees per keypress
  bannerFrames?: number; // how many frames an alert banner stays up
}

export type SteerIntent = { dx: number; dy: number; dtheta: number };

export class ConsoleSession {
  readonly stepCm: number;
  readonly stepDeg: number;
  private readonly bannerFrames: number;

  private send: (cmd: Command) => void;
  private surface: Surface;

  lastSeq = 0;
  stale = false;
  connectionState = "connecting";
  state: StatePayload | null = null;

  banner: string | null = null;
  private bannerTtl = 0;

  // accumulated steering not yet sent (flushed once per frame interval)
  private pending: SteerIntent = { dx: 0, dy: 0, dtheta: 0 };
  // total steering acknowledged by the service
  commanded: SteerIntent = { dx: 0, dy: 0, dtheta: 0 };

  markedNeedles: [number, number][] = [];
  registration: { residual: number | null; finalized: boolean; tolerance: number | null } = {
    residual: null,
    finalized: false,
    tolerance: null,
  };
  lastError: string | null = null;

  constructor(send: (cmd: Command) => void, surface: Surface, opts: SessionOptions = {}) {
    this.send = send;
    this.surface = surface;
    this.stepCm = opts.stepCm ?? 0.05;
    this.stepDeg = opts.stepDeg ?? 1.0;
    this.bannerFrames = opts.bannerFrames ?? 30;
  }

  setConnectionState(text: string): void {
    this.connectionState = text;
    this.render();
  }

  handleMessage(msg: WireMessage): void {
    if (msg.seq <= this.lastSeq) {
      // server restarted the run (reconnect); start counting afresh
      this.stale = false;
      this.lastSeq = 0;
    }
    const gap = this.lastSeq > 0 && msg.seq > this.lastSeq + 1;
    this.lastSeq = msg.seq;
    switch (msg.type) {
      case "STATE": {
        this.state = msg.payload as StatePayload;
        this.stale = gap;
        if (this.bannerTtl > 0 && --this.bannerTtl === 0 && !this.state.violation) {
          this.banner = null;
        }
        this.flushSteer(); // one coalesced command per frame interval
        this.render();
        break;
      }
      case "ALERT": {
        const alert = msg.payload as AlertPayload;
        this.banner = `${alert.kind}${alert.message ? `: ${alert.message}` : ""}`;
        this.bannerTtl = this.bannerFrames;
        this.surface.beep();
        this.render(); // banner is visible within this render cycle
        break;
      }
      case "REGISTRATION": {
        const reg = msg.payload as RegistrationPayload;
        this.registration = {
          residual: reg.residual_cm,
          finalized: reg.finalized,
          tolerance: reg.tolerance_cm,
        };
        if (!reg.finalized) {
          this.markedNeedles = []; // retry from scratch
        }
        this.render();
        break;
      }
      case "COMMAND_ACK": {
        const ack = msg.payload as AckPayload;
        if (ack.error) {
          this.lastError = ack.error;
        } else if (ack.command === "steer" && ack.applied) {
          this.commanded = {
            dx: this.commanded.dx + (ack.applied.dx ?? 0),
            dy: this.commanded.dy + (ack.applied.dy ?? 0),
            dtheta: this.commanded.dtheta + (ack.applied.dtheta ?? 0),
          };
        }
        this.render();
        break;
      }
    }
  }

  // -- steering -------------------------------------------------------------

  keyInput(key: "left" | "right" | "up" | "down" | "rot+" | "rot-"): void {
    switch (key) {
      case "left":
        this.pending.dx -= this.stepCm;
        break;
      case "right":
        this.pending.dx += this.stepCm;
        break;
      case "up":
        this.pending.dy -= this.stepCm;
        break;
      case "down":
        this.pending.dy += this.stepCm;
        break;
      case "rot+":
        this.pending.dtheta += this.stepDeg;
        break;
      case "rot-":
        this.pending.dtheta -= this.stepDeg;
        break;
    }
  }

  private flushSteer(): void {
    const { dx, dy, dtheta } = this.pending;
    if (dx === 0 && dy === 0 && dtheta === 0) {
      return;
    }
    this.pending = { dx: 0, dy: 0, dtheta: 0 };
    this.send({ command: "steer", dx, dy, dtheta });
  }

  // -- registration ---------------------------------------------------------

  markNeedle(u: number, v: number): void {
    if (this.registration.finalized) {
      return;
    }
    this.markedNeedles.push([u, v]);
    this.send({ command: "mark_needle", u, v });
    if (this.markedNeedles.length === 3) {
      this.send({ command: "finalize_registration" });
    }
    this.render();
  }

  markNeedles(clicks: [number, number][]): void {
    for (const [u, v] of clicks) {
      this.markNeedle(u, v);
    }
  }

  registrationReadout(): string {
    const r = this.registration;
    if (r.residual === null) {
      return `registration: ${this.markedNeedles.length}/3 needles marked`;
    }
    const status = r.finalized ? "finalized" : "NOT finalized (re-mark needles)";
    return `registration: residual ${r.residual.toFixed(3)} cm, ${status}`;
  }

  // -- rendering ------------------------------------------------------------

  render(): void {
    renderState(this.surface, {
      state: this.state,
      seq: this.lastSeq,
      stale: this.stale,
      banner: this.banner,
      connection: this.connectionState,
      registration: this.registrationReadout(),
      commanded: this.commanded,
    });
  }
}
