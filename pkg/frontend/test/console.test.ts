import { describe, expect, it } from "vitest";

import { SteeringConsole } from "../src/console";
import { parseServerMessage, Snapshot } from "../src/types";

class FakeSink {
  sent: unknown[] = [];
  up = true;
  send(obj: unknown): boolean {
    if (!this.up) return false;
    this.sent.push(obj);
    return true;
  }
}

function connected(): { con: SteeringConsole; sink: FakeSink } {
  const sink = new FakeSink();
  const con = new SteeringConsole(sink);
  con.setConn("connected");
  return { con, sink };
}

function snap(over: Partial<Snapshot> = {}): Snapshot {
  return {
    v: 1,
    t: 1.0,
    robot: { x: 0, y: 0, heading: 0 },
    beam: { x: 0, y: 0 },
    irradiance: 100,
    rx: "F",
    snrDb: 12,
    tx: "F",
    capMj: 3,
    collision: false,
    slot: 6,
    ...over,
  };
}

describe("command flow", () => {
  it("sends the first press immediately", () => {
    const { con, sink } = connected();
    con.press("L");
    expect(sink.sent).toEqual([{ cmd: "L" }]);
    expect(con.state.inFlight?.cmd).toBe("L");
    expect(con.state.history).toHaveLength(1);
  });

  it("holds repeat presses until the slot ack, then sends them in order", () => {
    const { con, sink } = connected();
    con.press("L");
    con.press("R"); // within the in-flight window: queued, not dropped
    con.press("F");
    expect(sink.sent).toEqual([{ cmd: "L" }]);
    expect(con.state.queue).toEqual(["R", "F"]);

    con.handle({ kind: "queued", ref: { cmd: "L", slot: 9 } });
    expect(sink.sent).toHaveLength(1); // queue reply is not the ack
    con.handle({ kind: "ack", ref: { cmd: "L", slot: 9 } });
    expect(sink.sent).toEqual([{ cmd: "L" }, { cmd: "R" }]);
    con.handle({ kind: "queued", ref: { cmd: "R", slot: 10 } });
    con.handle({ kind: "ack", ref: { cmd: "R", slot: 10 } });
    expect(sink.sent).toEqual([{ cmd: "L" }, { cmd: "R" }, { cmd: "F" }]);
    expect(con.state.queue).toEqual([]);
  });

  it("records the server-assigned slot in the history", () => {
    const { con } = connected();
    con.press("L");
    con.handle({ kind: "queued", ref: { cmd: "L", slot: 42 } });
    expect(con.state.history[0].slot).toBe(42);
    expect(con.state.history[0].acked).toBe(false);
    con.handle({ kind: "ack", ref: { cmd: "L", slot: 42 } });
    expect(con.state.history[0].acked).toBe(true);
    expect(con.state.inFlight).toBeNull();
  });

  it("ignores acks for other clients' slots", () => {
    const { con } = connected();
    con.press("L");
    con.handle({ kind: "queued", ref: { cmd: "L", slot: 7 } });
    con.handle({ kind: "ack", ref: { cmd: "L", slot: 5 } }); // someone else
    expect(con.state.inFlight).not.toBeNull();
    con.handle({ kind: "ack", ref: { cmd: "L", slot: 7 } });
    expect(con.state.inFlight).toBeNull();
  });

  it("toasts instead of sending while disconnected", () => {
    const sink = new FakeSink();
    const con = new SteeringConsole(sink);
    con.press("L");
    expect(sink.sent).toEqual([]);
    expect(con.state.toast).toBe("not connected");
  });

  it("clears the in-flight command when the server refuses it", () => {
    const { con, sink } = connected();
    con.press("L");
    con.press("R");
    con.handle({ kind: "error", message: "no running scenario" });
    expect(con.state.lastError).toBe("no running scenario");
    // the refused command is gone and the queued one went out for its own
    // verdict rather than waiting forever
    expect(sink.sent).toEqual([{ cmd: "L" }, { cmd: "R" }]);
  });

  it("drops in-flight and queued commands on disconnect", () => {
    const { con } = connected();
    con.press("L");
    con.press("R");
    con.setConn("disconnected");
    expect(con.state.inFlight).toBeNull();
    expect(con.state.queue).toEqual([]);
    expect(con.state.toast).toBe("connection lost");
  });
});

describe("state ingest", () => {
  it("keeps the latest snapshot and appends positions to the trail verbatim", () => {
    const { con } = connected();
    con.handle({ kind: "snapshot", snap: snap({ robot: { x: 0.1, y: 0.2, heading: 0 } }) });
    con.handle({ kind: "snapshot", snap: snap({ robot: { x: 0.3, y: 0.4, heading: 1 } }) });
    expect(con.state.snapshot?.robot.x).toBe(0.3);
    expect(con.state.trail).toEqual([
      { x: 0.1, y: 0.2 },
      { x: 0.3, y: 0.4 },
    ]);
  });

  it("caps the trail", () => {
    const { con } = connected();
    for (let i = 0; i < 2600; i++) {
      con.handle({ kind: "snapshot", snap: snap({ robot: { x: i, y: 0, heading: 0 } }) });
    }
    expect(con.state.trail.length).toBe(2400);
    expect(con.state.trail[con.state.trail.length - 1].x).toBe(2599);
  });

  it("resets the trail when the scenario changes", () => {
    const { con } = connected();
    const status = {
      running: true,
      scenario: "free",
      pace: "wall",
      scene: null,
    };
    con.setScenario(status);
    con.handle({ kind: "snapshot", snap: snap() });
    expect(con.state.trail).toHaveLength(1);
    con.setScenario({ ...status, scenario: "path" });
    expect(con.state.trail).toHaveLength(0);
    con.setScenario({ ...status, scenario: "path" }); // same run: keep it
    con.handle({ kind: "snapshot", snap: snap() });
    expect(con.state.trail).toHaveLength(1);
  });
});

describe("wire parsing", () => {
  it("classifies the four message shapes", () => {
    expect(parseServerMessage(JSON.stringify(snap()))?.kind).toBe("snapshot");
    expect(parseServerMessage('{"queued":{"cmd":"L","slot":3}}')).toEqual({
      kind: "queued",
      ref: { cmd: "L", slot: 3 },
    });
    expect(parseServerMessage('{"ack":{"cmd":"L","slot":3}}')?.kind).toBe("ack");
    expect(parseServerMessage('{"error":"bad json"}')).toEqual({
      kind: "error",
      message: "bad json",
    });
  });

  it("returns null for junk", () => {
    expect(parseServerMessage("{nope")).toBeNull();
    expect(parseServerMessage('"hi"')).toBeNull();
    expect(parseServerMessage('{"other":1}')).toBeNull();
  });
});
