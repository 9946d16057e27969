// DOM wiring: one ConsoleLink, one SteeringConsole, one render loop.

import { SteeringConsole } from "./console";
import { ConsoleLink, fetchScenario, postScenario } from "./net";
import { drawScene } from "./render";
import { Command, isCommand, parseServerMessage } from "./types";

const TOAST_MS = 1800;
const STATUS_POLL_MS = 2000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function wsUrl(): string {
  const scheme = location.protocol === "https:" ? "wss:" : "ws:";
  return `${scheme}//${location.host}/ws`;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const statusEl = el<HTMLSpanElement>("status");
const toastEl = el<HTMLDivElement>("toast");
const histEl = el<HTMLUListElement>("history");
const capEl = el<HTMLProgressElement>("cap");
const fields = {
  t: el<HTMLSpanElement>("t"),
  slot: el<HTMLSpanElement>("slot"),
  snr: el<HTMLSpanElement>("snr"),
  irr: el<HTMLSpanElement>("irr"),
  rx: el<HTMLSpanElement>("rx"),
  tx: el<HTMLSpanElement>("tx"),
  cap: el<HTMLSpanElement>("capLabel"),
  scenario: el<HTMLSpanElement>("scenarioName"),
};
const cmdButtons: Record<Command, HTMLButtonElement> = {
  L: el<HTMLButtonElement>("btnL"),
  R: el<HTMLButtonElement>("btnR"),
  F: el<HTMLButtonElement>("btnF"),
};

const link = new ConsoleLink(wsUrl(), {
  onStatus: (s) => con.setConn(s),
  onMessage: (raw) => {
    const msg = parseServerMessage(raw);
    if (msg) con.handle(msg);
  },
});
const con = new SteeringConsole(link);

for (const [cmd, btn] of Object.entries(cmdButtons)) {
  btn.addEventListener("click", () => con.press(cmd as Command));
}

document.addEventListener("keydown", (ev: KeyboardEvent) => {
  const byKey: Record<string, Command> = {
    ArrowLeft: "L",
    ArrowRight: "R",
    ArrowUp: "F",
  };
  const cmd = byKey[ev.key] ?? (isCommand(ev.key.toUpperCase()) ? (ev.key.toUpperCase() as Command) : null);
  if (cmd) {
    ev.preventDefault();
    con.press(cmd);
  }
});

async function pollScenario(): Promise<void> {
  try {
    const status = await fetchScenario("");
    con.setScenario(status);
    link.expectTraffic(status.running);
  } catch {
    // HTTP side down; the socket watchdog owns connection state
  }
}

async function scenarioAction(body: Record<string, unknown>): Promise<void> {
  try {
    await postScenario("", body);
  } finally {
    await pollScenario();
  }
}

const scenarioSel = el<HTMLSelectElement>("scenarioSel");
el<HTMLButtonElement>("btnStart").addEventListener("click", () =>
  scenarioAction({ action: "start", name: scenarioSel.value }),
);
el<HTMLButtonElement>("btnStop").addEventListener("click", () =>
  scenarioAction({ action: "stop" }),
);
el<HTMLButtonElement>("btnReset").addEventListener("click", () =>
  scenarioAction({ action: "reset" }),
);

function fmt(v: number | null | undefined, digits: number): string {
  return v === null || v === undefined ? "--" : v.toFixed(digits);
}

function refreshReadouts(): void {
  const s = con.state;
  statusEl.textContent = s.conn;
  statusEl.className = `badge ${s.conn}`;

  const snap = s.snapshot;
  fields.t.textContent = fmt(snap?.t, 2);
  fields.slot.textContent = snap ? String(snap.slot) : "--";
  fields.snr.textContent = snap ? `${fmt(snap.snrDb, 1)} dB` : "--";
  fields.irr.textContent = snap ? `${fmt(snap.irradiance, 1)} mW/cm2` : "--";
  fields.rx.textContent = snap?.rx ?? "--";
  fields.tx.textContent = snap?.tx ?? "--";
  const capFull = s.scenario?.scene?.capCapacityMj ?? 0;
  capEl.max = capFull || 1;
  capEl.value = snap?.capMj ?? 0;
  fields.cap.textContent = snap ? `${fmt(snap.capMj, 2)} / ${fmt(capFull, 1)} mJ` : "--";
  fields.scenario.textContent = s.scenario?.running
    ? `${s.scenario.scenario} (${s.scenario.pace})`
    : "stopped";

  for (const [cmd, btn] of Object.entries(cmdButtons)) {
    btn.classList.toggle("pending", s.inFlight?.cmd === cmd);
  }

  if (s.toast && Date.now() - s.toastAt < TOAST_MS) {
    toastEl.textContent = s.toast;
    toastEl.classList.add("show");
  } else {
    toastEl.classList.remove("show");
  }

  histEl.innerHTML = "";
  for (const entry of s.history.slice(-8).reverse()) {
    const li = document.createElement("li");
    const slot = entry.slot === null ? "..." : `slot ${entry.slot}`;
    li.textContent = `${entry.cmd}  ${slot}  ${entry.acked ? "ok" : "pending"}`;
    histEl.appendChild(li);
  }
}

function frame(): void {
  drawScene(ctx, canvas.width, canvas.height, con.state);
  refreshReadouts();
  requestAnimationFrame(frame);
}

link.connect();
pollScenario();
setInterval(pollScenario, STATUS_POLL_MS);
requestAnimationFrame(frame);
