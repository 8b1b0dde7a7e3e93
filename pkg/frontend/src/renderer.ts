// Rendering: the console draws ONLY from received overlay primitives and
// readout values; it computes no navigation geometry of its own. A Surface
// abstracts the output so tests can record draw calls and the terminal
// implementation can paint ANSI cells.

import type { OverlayPrimitive, StatePayload } from "./protocol.js";

export type DrawStyle = "corridor" | "drill" | "banner" | "text" | "frame" | "dim";

export interface Surface {
  begin(): void;
  drawPolyline(points: [number, number][], style: DrawStyle, dimmed: boolean): void;
  drawText(x: number, y: number, text: string, style: DrawStyle): void;
  drawBanner(text: string): void;
  beep(): void;
  end(): void;
}

export interface RenderInfo {
  state: StatePayload | null;
  seq: number;
  stale: boolean;
  banner: string | null;
  connection: string;
  registration: string;
  commanded: { dx: number; dy: number; dtheta: number };
}

const FRAME_W = 640;
const FRAME_H = 480;

// One render cycle: schematic frame bounds, then the received primitives,
// then the readout lines. The wire format carries no pixel data, so the
// video area is drawn as a placeholder box.
export function renderState(surface: Surface, info: RenderInfo): void {
  surface.begin();
  const dim = info.state?.track === "LOST" || info.state?.track === "UNREGISTERED";
  surface.drawPolyline(
    [
      [0, 0],
      [FRAME_W - 1, 0],
      [FRAME_W - 1, FRAME_H - 1],
      [0, FRAME_H - 1],
      [0, 0],
    ],
    "frame",
    false,
  );

  for (const prim of info.state?.overlay ?? []) {
    drawPrimitive(surface, prim, dim);
  }

  const s = info.state;
  const lines: string[] = [];
  lines.push(
    `seq ${info.seq}${info.stale ? "  [FRAMES DROPPED]" : ""}  ${info.connection}  track=${s?.track ?? "-"}`,
  );
  if (s?.match) {
    lines.push(
      `pose (${s.match.cx.toFixed(2)}, ${s.match.cy.toFixed(2)}) @ ${s.match.angle.toFixed(2)} deg` +
        `  score ${s.match.score.toFixed(1)}%  target ${s.match.target_score.toFixed(1)}%`,
    );
  }
  if (s && s.depth_cm !== null && s.radial_clearance_cm !== null) {
    lines.push(`depth ${s.depth_cm.toFixed(2)} cm  clearance ${s.radial_clearance_cm.toFixed(3)} cm`);
  }
  lines.push(info.registration);
  lines.push(
    `commanded d=(${info.commanded.dx.toFixed(2)}, ${info.commanded.dy.toFixed(2)}) cm, ` +
      `${info.commanded.dtheta.toFixed(1)} deg`,
  );
  lines.forEach((text, i) => surface.drawText(4, FRAME_H + 16 * (i + 1), text, "text"));

  if (info.banner) {
    surface.drawBanner(info.banner);
  }
  surface.end();
}

function drawPrimitive(surface: Surface, prim: OverlayPrimitive, dimmed: boolean): void {
  switch (prim.kind) {
    case "CYLINDER_OUTLINE":
      surface.drawPolyline(prim.points, "corridor", dimmed);
      break;
    case "DRILL_LINE":
      surface.drawPolyline(prim.points, "drill", dimmed);
      break;
    case "SCORE_TEXT":
      surface.drawText(prim.points[0][0], prim.points[0][1], prim.style, "text");
      break;
    case "ALERT_BANNER":
      surface.drawBanner(prim.style);
      break;
  }
}

// Terminal surface: scales the 640x480(+readout) scene onto a character
// grid, painting polylines with Bresenham steps and the banner inverted red.
export class TerminalSurface implements Surface {
  private cols: number;
  private rows: number;
  private grid: string[][] = [];
  private banner: string | null = null;
  private out: NodeJS.WriteStream;

  constructor(out: NodeJS.WriteStream = process.stdout, cols = 96, rows = 36) {
    this.out = out;
    this.cols = cols;
    this.rows = rows;
  }

  private sx(x: number): number {
    return Math.max(0, Math.min(this.cols - 1, Math.round((x / FRAME_W) * (this.cols - 1))));
  }

  private sy(y: number): number {
    return Math.max(0, Math.min(this.rows - 1, Math.round((y / (FRAME_H + 96)) * (this.rows - 1))));
  }

  begin(): void {
    this.grid = Array.from({ length: this.rows }, () => Array(this.cols).fill(" "));
    this.banner = null;
  }

  drawPolyline(points: [number, number][], style: DrawStyle, dimmed: boolean): void {
    const glyph = { corridor: "#", drill: "*", frame: ".", banner: "!", text: "+", dim: ":" }[style];
    const ch = dimmed ? ":" : glyph;
    for (let i = 0; i + 1 < points.length; i++) {
      const [x0, y0] = [this.sx(points[i][0]), this.sy(points[i][1])];
      const [x1, y1] = [this.sx(points[i + 1][0]), this.sy(points[i + 1][1])];
      const n = Math.max(Math.abs(x1 - x0), Math.abs(y1 - y0), 1);
      for (let k = 0; k <= n; k++) {
        const x = Math.round(x0 + ((x1 - x0) * k) / n);
        const y = Math.round(y0 + ((y1 - y0) * k) / n);
        this.grid[y][x] = ch;
      }
    }
  }

  drawText(x: number, y: number, text: string, _style: DrawStyle): void {
    const gy = this.sy(y);
    let gx = this.sx(x);
    for (const ch of text.slice(0, this.cols - gx - 1)) {
      this.grid[gy][gx++] = ch;
    }
  }

  drawBanner(text: string): void {
    this.banner = text;
  }

  beep(): void {
    this.out.write("");
  }

  end(): void {
    const lines = this.grid.map((row) => row.join(""));
    if (this.banner) {
      const label = ` ${this.banner} `;
      lines[0] = `[41;97m${label.padEnd(this.cols).slice(0, this.cols)}[0m`;
    }
    this.out.write("[H[2J" + lines.join("\n") + "\n");
  }
}
