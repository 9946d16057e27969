// Console state and command flow. The console never simulates: everything
// rendered comes from server snapshots, and commands are only decorated with
// the slot the server assigns them.

import { ConnStatus } from "./net";
import { Command, ScenarioStatus, ServerMessage, Snapshot } from "./types";

export interface CommandEntry {
  cmd: Command;
  sentAt: number; // wall clock ms at dispatch
  slot: number | null; // symbol slot, assigned by the server on queue
  acked: boolean; // true once that slot latched
}

export interface ConsoleState {
  conn: ConnStatus;
  snapshot: Snapshot | null;
  scenario: ScenarioStatus | null;
  trail: { x: number; y: number }[];
  inFlight: CommandEntry | null;
  queue: Command[];
  history: CommandEntry[];
  toast: string | null;
  toastAt: number;
  lastError: string | null;
}

export interface CommandSink {
  send(obj: unknown): boolean;
}

const TRAIL_MAX = 2400; // two minutes of 20 Hz snapshots
const HISTORY_MAX = 50;

export function initialState(): ConsoleState {
  return {
    conn: "disconnected",
    snapshot: null,
    scenario: null,
    trail: [],
    inFlight: null,
    queue: [],
    history: [],
    toast: null,
    toastAt: 0,
    lastError: null,
  };
}

export class SteeringConsole {
  state: ConsoleState = initialState();

  constructor(private sink: CommandSink) {}

  // One command on the wire at a time: repeat presses wait locally until the
  // in-flight one gets its slot-boundary ack, then go out in order.
  press(cmd: Command): void {
    if (this.state.conn !== "connected") {
      this.toast("not connected");
      return;
    }
    if (this.state.inFlight !== null) {
      this.state.queue.push(cmd);
      return;
    }
    this.dispatch(cmd);
  }

  setConn(conn: ConnStatus): void {
    const was = this.state.conn;
    this.state.conn = conn;
    if (conn === "disconnected" && was === "connected") {
      // anything un-acked went down with the socket
      this.state.inFlight = null;
      this.state.queue = [];
      this.toast("connection lost");
    }
  }

  setScenario(status: ScenarioStatus): void {
    const prev = this.state.scenario;
    this.state.scenario = status;
    if (prev === null || prev.scenario !== status.scenario) {
      this.state.trail = [];
    }
  }

  handle(msg: ServerMessage): void {
    switch (msg.kind) {
      case "snapshot": {
        this.state.snapshot = msg.snap;
        this.state.trail.push({ x: msg.snap.robot.x, y: msg.snap.robot.y });
        if (this.state.trail.length > TRAIL_MAX) this.state.trail.shift();
        break;
      }
      case "queued": {
        const entry = this.state.inFlight;
        if (entry !== null && entry.cmd === msg.ref.cmd) {
          entry.slot = msg.ref.slot;
        }
        break;
      }
      case "ack": {
        // acks are broadcast to every client; ours is the one whose slot we
        // were told at queue time
        const entry = this.state.inFlight;
        if (entry !== null && entry.slot === msg.ref.slot) {
          entry.acked = true;
          this.state.inFlight = null;
          this.pump();
        }
        break;
      }
      case "error": {
        this.state.lastError = msg.message;
        this.toast(msg.message);
        if (this.state.inFlight !== null && this.state.inFlight.slot === null) {
          // the command was refused before it got a slot
          this.state.inFlight = null;
          this.pump();
        }
        break;
      }
    }
  }

  private pump(): void {
    const next = this.state.queue.shift();
    if (next !== undefined) this.dispatch(next);
  }

  private dispatch(cmd: Command): void {
    if (!this.sink.send({ cmd })) {
      this.toast("not connected");
      return;
    }
    const entry: CommandEntry = {
      cmd,
      sentAt: Date.now(),
      slot: null,
      acked: false,
    };
    this.state.inFlight = entry;
    this.state.history.push(entry);
    if (this.state.history.length > HISTORY_MAX) this.state.history.shift();
  }

  private toast(text: string): void {
    this.state.toast = text;
    this.state.toastAt = Date.now();
  }
}
