// WebSocket lifecycle: auto-reconnect with backoff, plus a staleness
// watchdog so a silently dead server is noticed between close frames.

import { ScenarioStatus } from "./types";

export type ConnStatus = "connecting" | "connected" | "disconnected";

// Minimal socket surface; satisfied by the browser WebSocket and by the
// `ws` package, and easy to fake in tests.
export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface LinkHooks {
  onStatus(status: ConnStatus): void;
  onMessage(raw: string): void;
}

// Snapshots arrive at 20 Hz while a scenario runs, so 1.5 s of silence is
// ~30 missed frames; with the 250 ms sweep that detects a dead stream well
// inside the 2 s budget.
const STALE_MS = 1500;
const SWEEP_MS = 250;
const BACKOFF_MS = [500, 1000, 2000, 4000];

export class ConsoleLink {
  status: ConnStatus = "disconnected";

  private sock: SocketLike | null = null;
  private open = false;
  private lastHeard = 0;
  private retries = 0;
  private expectStream = false;
  private watchdog: ReturnType<typeof setInterval> | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = true;

  constructor(
    private url: string,
    private hooks: LinkHooks,
    private makeSocket: SocketFactory = (u) =>
      new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    this.stopped = false;
    this.dial();
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.retryTimer = null;
    this.stopWatchdog();
    const sock = this.sock;
    this.sock = null;
    this.open = false;
    if (sock) sock.close();
    this.setStatus("disconnected");
  }

  // The broadcast stream is silent when no scenario is running, so staleness
  // only counts as death while the caller says frames should be flowing.
  expectTraffic(expect: boolean): void {
    this.expectStream = expect;
    this.lastHeard = Date.now();
  }

  send(obj: unknown): boolean {
    if (!this.open || this.sock === null) return false;
    this.sock.send(JSON.stringify(obj));
    return true;
  }

  private dial(): void {
    this.setStatus("connecting");
    const sock = this.makeSocket(this.url);
    this.sock = sock;
    sock.onopen = () => {
      if (this.sock !== sock) return;
      this.open = true;
      this.retries = 0;
      this.lastHeard = Date.now();
      this.startWatchdog();
      this.setStatus("connected");
    };
    sock.onmessage = (ev) => {
      if (this.sock !== sock) return;
      this.lastHeard = Date.now();
      this.hooks.onMessage(String(ev.data));
    };
    sock.onclose = () => {
      if (this.sock !== sock) return;
      this.dropped();
    };
    sock.onerror = () => {
      // some stacks report a refused dial as error without close
      if (this.sock !== sock || this.open) return;
      this.dropped();
    };
  }

  private dropped(): void {
    this.stopWatchdog();
    this.sock = null;
    this.open = false;
    this.setStatus("disconnected");
    if (this.stopped) return;
    const wait = BACKOFF_MS[Math.min(this.retries, BACKOFF_MS.length - 1)];
    this.retries += 1;
    this.retryTimer = setTimeout(() => this.dial(), wait);
  }

  private startWatchdog(): void {
    this.stopWatchdog();
    this.watchdog = setInterval(() => {
      if (!this.expectStream) return;
      if (Date.now() - this.lastHeard <= STALE_MS) return;
      const sock = this.sock;
      this.sock = null; // detach first so the close frame is ignored
      try {
        sock?.close();
      } catch {
        // already dead
      }
      this.dropped();
    }, SWEEP_MS);
  }

  private stopWatchdog(): void {
    if (this.watchdog !== null) clearInterval(this.watchdog);
    this.watchdog = null;
  }

  private setStatus(status: ConnStatus): void {
    if (status === this.status) return;
    this.status = status;
    this.hooks.onStatus(status);
  }
}

export async function fetchScenario(baseUrl: string): Promise<ScenarioStatus> {
  const r = await fetch(`${baseUrl}/scenario`);
  if (!r.ok) throw new Error(`scenario status: HTTP ${r.status}`);
  return (await r.json()) as ScenarioStatus;
}

export async function postScenario(
  baseUrl: string,
  body: Record<string, unknown>,
): Promise<Record<string, unknown>> {
  const r = await fetch(`${baseUrl}/scenario`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  return (await r.json()) as Record<string, unknown>;
}
