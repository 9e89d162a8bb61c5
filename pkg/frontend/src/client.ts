/**
 * WebSocket client for one episode stream.
 *
 * Wraps a socket factory (injectable for tests), parses and dispatches
 * server frames, reconnects with exponential backoff while the episode is
 * still live, and tracks tick staleness so the UI can show a degraded
 * badge when the stream stalls.
 */

import {
  ControlFrame,
  ProtocolError,
  ServerFrame,
  TickFrame,
  controlFrame,
  parseServerFrame,
} from "./protocol.js";

/** Minimal socket surface; browser WebSocket satisfies it. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ClientOptions {
  /** e.g. ws://host:port */
  baseUrl: string;
  episodeId: string;
  role: "driver" | "spectator";
  socketFactory?: (url: string) => SocketLike;
  /** Millisecond clock; injectable for tests. */
  now?: () => number;
  setTimeoutFn?: (fn: () => void, ms: number) => unknown;
  /** Initial reconnect delay (doubles per attempt). */
  backoffInitialMs?: number;
  backoffMaxMs?: number;
  /** Ticks older than this mark the stream degraded. */
  staleAfterMs?: number;
}

export interface ClientEvents {
  frame?: (f: ServerFrame) => void;
  tick?: (f: TickFrame) => void;
  finished?: (status: string, outcome: string | null) => void;
  error?: (reason: string) => void;
  connectionChange?: (connected: boolean) => void;
}

export class EpisodeClient {
  private readonly opts: Required<
    Pick<ClientOptions, "backoffInitialMs" | "backoffMaxMs" | "staleAfterMs">
  > &
    ClientOptions;
  private socket: SocketLike | null = null;
  private handlers: ClientEvents = {};
  private attempts = 0;
  private finished = false;
  private closedByUser = false;
  private lastTickAt: number | null = null;
  connected = false;
  lastTick: TickFrame | null = null;

  constructor(options: ClientOptions) {
    this.opts = {
      backoffInitialMs: 250,
      backoffMaxMs: 8000,
      staleAfterMs: 500,
      ...options,
    };
  }

  on(handlers: ClientEvents): this {
    this.handlers = { ...this.handlers, ...handlers };
    return this;
  }

  url(): string {
    return `${this.opts.baseUrl}/episodes/${this.opts.episodeId}/ws?role=${this.opts.role}`;
  }

  private now(): number {
    return this.opts.now ? this.opts.now() : Date.now();
  }

  connect(): void {
    const factory =
      this.opts.socketFactory ??
      ((url: string) => new WebSocket(url) as unknown as SocketLike);
    const sock = factory(this.url());
    this.socket = sock;
    sock.onopen = () => {
      this.attempts = 0;
      this.connected = true;
      this.handlers.connectionChange?.(true);
    };
    sock.onmessage = (ev) => this.handleMessage(ev.data);
    sock.onerror = () => {
      /* onclose follows; backoff handled there */
    };
    sock.onclose = () => {
      this.connected = false;
      this.handlers.connectionChange?.(false);
      if (!this.finished && !this.closedByUser) this.scheduleReconnect();
    };
  }

  /** Current backoff delay for the next reconnect attempt. */
  nextBackoffMs(): number {
    return Math.min(
      this.opts.backoffInitialMs * 2 ** this.attempts,
      this.opts.backoffMaxMs,
    );
  }

  private scheduleReconnect(): void {
    const delay = this.nextBackoffMs();
    this.attempts += 1;
    const setT = this.opts.setTimeoutFn ?? ((fn: () => void, ms: number) => setTimeout(fn, ms));
    setT(() => {
      if (!this.finished && !this.closedByUser) this.connect();
    }, delay);
  }

  private handleMessage(raw: string): void {
    let frame: ServerFrame;
    try {
      frame = parseServerFrame(raw);
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.handlers.error?.(`bad server frame: ${e.message}`);
        return;
      }
      throw e;
    }
    this.handlers.frame?.(frame);
    switch (frame.type) {
      case "tick":
        this.lastTick = frame;
        this.lastTickAt = this.now();
        this.handlers.tick?.(frame);
        break;
      case "status":
        this.finished = true;
        this.handlers.finished?.(frame.status, frame.outcome);
        break;
      case "error":
        this.handlers.error?.(frame.reason);
        break;
    }
  }

  /** True when no tick arrived within the staleness window. */
  isStale(): boolean {
    if (this.lastTickAt === null) return false;
    return this.now() - this.lastTickAt > this.opts.staleAfterMs;
  }

  /** Drivers stream controls; spectators must not call this. */
  sendControl(throttle: number, steer: number): ControlFrame {
    if (this.opts.role !== "driver") {
      throw new Error("spectators cannot send controls");
    }
    const frame = controlFrame(throttle, steer, this.now() / 1000);
    if (this.socket && this.connected) {
      this.socket.send(JSON.stringify(frame));
    }
    return frame;
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
  }
}
