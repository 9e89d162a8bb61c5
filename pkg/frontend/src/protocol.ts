/**
 * Wire protocol (v1) of the trafficweave sim service.
 *
 * All frames are UTF-8 JSON carrying a `v` version field. The server
 * streams `hello`, then 10 Hz `tick` frames while the episode runs, then a
 * final `status` frame; `error` frames report rejected input without
 * closing the connection. Drivers send `control` frames.
 */

export const PROTOCOL_VERSION = 1;

export interface AgentState {
  s: number;
  tau: number;
  s_dot: number;
  tau_dot: number;
}

export interface RobotAgentState extends AgentState {
  tau_ddot: number;
}

export interface JointStateFrame {
  human: AgentState;
  robot: RobotAgentState;
}

/** 10/50/90 % quantile rows over the planner's sampled human futures. */
export interface QuantileBands {
  best?: {
    plan_code?: number;
    human_s_q?: number[][];
    human_tau_q?: number[][];
  } | null;
  [key: string]: unknown;
}

export interface HelloFrame {
  v: number;
  type: "hello";
  role: "driver" | "spectator";
  episode: string;
  status: string;
}

export interface TickFrame {
  v: number;
  type: "tick";
  t: number;
  state: JointStateFrame;
  plan: { best_plan_code: number | null; committed_next: number[][] | null };
  bands: QuantileBands | null;
  alerts: string[];
  near_collision: boolean;
  status: string;
}

export interface StatusFrame {
  v: number;
  type: "status";
  status: string;
  outcome: string | null;
  error: string | null;
}

export interface ErrorFrame {
  v: number;
  type: "error";
  reason: string;
}

export type ServerFrame = HelloFrame | TickFrame | StatusFrame | ErrorFrame;

export interface ControlFrame {
  v: number;
  type: "control";
  throttle: number;
  steer: number;
  ts: number;
}

export class ProtocolError extends Error {}

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function requireNumber(obj: Record<string, unknown>, key: string): number {
  const v = obj[key];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new ProtocolError(`field ${key} must be a finite number`);
  }
  return v;
}

function parseAgent(x: unknown, who: string): AgentState {
  if (!isRecord(x)) throw new ProtocolError(`${who} state must be an object`);
  return {
    s: requireNumber(x, "s"),
    tau: requireNumber(x, "tau"),
    s_dot: requireNumber(x, "s_dot"),
    tau_dot: requireNumber(x, "tau_dot"),
  };
}

/** Parse and validate one server frame; throws ProtocolError on junk. */
export function parseServerFrame(raw: string): ServerFrame {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not valid JSON");
  }
  if (!isRecord(data)) throw new ProtocolError("frame must be a JSON object");
  if (data.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${String(data.v)}`);
  }
  switch (data.type) {
    case "hello": {
      if (data.role !== "driver" && data.role !== "spectator") {
        throw new ProtocolError(`unknown role ${String(data.role)}`);
      }
      return {
        v: PROTOCOL_VERSION,
        type: "hello",
        role: data.role,
        episode: String(data.episode),
        status: String(data.status),
      };
    }
    case "tick": {
      const state = data.state;
      if (!isRecord(state)) throw new ProtocolError("tick frame missing state");
      const robotRaw = state.robot;
      if (!isRecord(robotRaw)) throw new ProtocolError("tick state missing robot");
      const plan = isRecord(data.plan) ? data.plan : {};
      return {
        v: PROTOCOL_VERSION,
        type: "tick",
        t: requireNumber(data, "t"),
        state: {
          human: parseAgent(state.human, "human"),
          robot: { ...parseAgent(robotRaw, "robot"), tau_ddot: requireNumber(robotRaw, "tau_ddot") },
        },
        plan: {
          best_plan_code: typeof plan.best_plan_code === "number" ? plan.best_plan_code : null,
          committed_next: Array.isArray(plan.committed_next)
            ? (plan.committed_next as number[][])
            : null,
        },
        bands: isRecord(data.bands) ? (data.bands as QuantileBands) : null,
        alerts: Array.isArray(data.alerts) ? data.alerts.map(String) : [],
        near_collision: data.near_collision === true,
        status: String(data.status),
      };
    }
    case "status":
      return {
        v: PROTOCOL_VERSION,
        type: "status",
        status: String(data.status),
        outcome: data.outcome == null ? null : String(data.outcome),
        error: data.error == null ? null : String(data.error),
      };
    case "error":
      return { v: PROTOCOL_VERSION, type: "error", reason: String(data.reason) };
    default:
      throw new ProtocolError(`unknown frame type ${String(data.type)}`);
  }
}

export function controlFrame(throttle: number, steer: number, ts: number): ControlFrame {
  return { v: PROTOCOL_VERSION, type: "control", throttle, steer, ts };
}
