// Wire protocol spoken by the navigation service: line-delimited JSON, one
// message per line, with a per-connection sequence counter. Mirrors the
// service's schema verbatim.

export type WireType = "STATE" | "ALERT" | "REGISTRATION" | "COMMAND_ACK";

export interface MatchPayload {
  cx: number;
  cy: number;
  angle: number;
  score: number;
  target_score: number;
  fit_error: number | null;
  model_coverage: number;
  target_coverage: number;
  n_common: number;
}

export interface OverlayPrimitive {
  kind: "CYLINDER_OUTLINE" | "DRILL_LINE" | "ALERT_BANNER" | "SCORE_TEXT";
  points: [number, number][];
  style: string;
}

export interface StatePayload {
  frame_index: number;
  track: "TRACKING" | "LOST" | "UNREGISTERED";
  violation: boolean;
  depth_cm: number | null;
  radial_clearance_cm: number | null;
  search_ms: number;
  match: MatchPayload | null;
  drill_line: { point: number[]; direction: number[] } | null;
  overlay: OverlayPrimitive[];
}

export interface AlertPayload {
  frame_index: number;
  kind: string;
  message?: string;
}

export interface RegistrationPayload {
  residual_cm: number;
  finalized: boolean;
  tolerance_cm: number;
  needles: [number, number][];
}

export interface AckPayload {
  command: string | null;
  applied?: Record<string, number>;
  error?: string;
}

export interface WireMessage {
  type: WireType;
  seq: number;
  payload: StatePayload | AlertPayload | RegistrationPayload | AckPayload;
}

export function parseMessage(line: string): WireMessage {
  const obj = JSON.parse(line);
  if (
    typeof obj !== "object" ||
    obj === null ||
    typeof obj.seq !== "number" ||
    !["STATE", "ALERT", "REGISTRATION", "COMMAND_ACK"].includes(obj.type)
  ) {
    throw new Error(`malformed wire message: ${line.slice(0, 120)}`);
  }
  return obj as WireMessage;
}

export interface SteerCommand {
  command: "steer";
  dx: number;
  dy: number;
  dtheta: number;
}

export interface MarkNeedleCommand {
  command: "mark_needle";
  u: number;
  v: number;
}

export type Command =
  | SteerCommand
  | MarkNeedleCommand
  | { command: "finalize_registration" }
  | { command: "pause" }
  | { command: "resume" };

export function encodeCommand(cmd: Command): string {
  return JSON.stringify(cmd) + "\n";
}
