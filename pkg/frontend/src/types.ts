// Wire types for the steering service (snapshot schema v1).

export interface Snapshot {
  v: number;
  t: number; // simulation time, seconds
  robot: { x: number; y: number; heading: number };
  beam: { x: number | null; y: number | null };
  irradiance: number; // mW/cm^2 delivered at the tag
  rx: string; // last symbol the robot decoded
  snrDb: number | null;
  tx: string; // symbol currently on the laser
  capMj: number;
  collision: boolean;
  slot: number;
}

export interface SlotRef {
  cmd: string;
  slot: number;
}

export type ServerMessage =
  | { kind: "snapshot"; snap: Snapshot }
  | { kind: "queued"; ref: SlotRef }
  | { kind: "ack"; ref: SlotRef }
  | { kind: "error"; message: string };

export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: any;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (msg === null || typeof msg !== "object") return null;
  if ("t" in msg && "robot" in msg) return { kind: "snapshot", snap: msg };
  if ("queued" in msg) return { kind: "queued", ref: msg.queued };
  if ("ack" in msg) return { kind: "ack", ref: msg.ack };
  if ("error" in msg) return { kind: "error", message: String(msg.error) };
  return null;
}

// GET /scenario payload; `scene` is everything the view needs to draw the
// testbed, so the console never hardcodes geometry of its own.
export interface ScenePayload {
  testbedSize: number;
  robotRadius: number;
  capCapacityMj: number;
  obstacles: [number, number, number][]; // (x, y, radius) cylinders
  path: { center: [number, number]; radius: number } | null;
}

export interface ScenarioStatus {
  running: boolean;
  scenario: string;
  pace: string;
  scene: ScenePayload | null;
}

export type Command = "L" | "R" | "F";

export const COMMANDS: readonly Command[] = ["L", "R", "F"];

export function isCommand(s: string): s is Command {
  return (COMMANDS as readonly string[]).includes(s);
}
