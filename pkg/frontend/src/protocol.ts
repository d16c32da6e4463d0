// Message schema of the gateway's /ops websocket (mirrored at GET /schema).

export type Gait = "idle" | "walk" | "run" | "stairs";

export interface UiCommand {
    gait: Gait;
    vx: number;
    vy: number;
    yaw_rate: number;
    duration_ms: number;
    client_ts: number;
}

// command caps enforced server-side; the pad clamps before sending
export const CAPS = { vx: 1.5, vy: 0.8, yawRate: 2.0, durationMs: 5000 };

export function clampCommand(cmd: UiCommand): UiCommand {
    const clip = (v: number, cap: number) => Math.max(-cap, Math.min(cap, v));
    return {
        ...cmd,
        vx: clip(cmd.vx, CAPS.vx),
        vy: clip(cmd.vy, CAPS.vy),
        yaw_rate: clip(cmd.yaw_rate, CAPS.yawRate),
        duration_ms: Math.max(0, Math.min(CAPS.durationMs, Math.round(cmd.duration_ms))),
    };
}

export interface AuthOkMsg {
    type: "auth_ok";
    session_id: number;
    expires_at_us: number;
    server_now_us: number;
    principal: string;
}

export interface AuthFailMsg {
    type: "auth_fail";
    reason: string;
}

export interface MetricMsg {
    type: "metric";
    cmd_id: number;
    status: "applied" | "rejected";
    rtt_ms: number;
}

export interface TelemetryMsg {
    type: "telemetry";
    x: number;
    y: number;
    heading: number;
    gait: Gait;
    battery: number;
    mode: string;
    t_us: number;
}

export interface AlarmMsg {
    type: "alarm";
    rule_id: string;
    source: string;
    observed: number;
    t_us: number;
}

export interface ErrorMsg {
    type: "error";
    reason: string;
    cmd_id?: number;
}

export type ServerMessage =
    | AuthOkMsg
    | AuthFailMsg
    | MetricMsg
    | TelemetryMsg
    | AlarmMsg
    | ErrorMsg;

const KNOWN_TYPES = new Set(["auth_ok", "auth_fail", "metric", "telemetry", "alarm", "error"]);

export function parseServerMessage(data: string): ServerMessage | null {
    let doc: unknown;
    try {
        doc = JSON.parse(data);
    } catch {
        return null;
    }
    const msg = doc as { type?: string };
    if (!msg || typeof msg.type !== "string" || !KNOWN_TYPES.has(msg.type)) {
        return null;
    }
    return doc as ServerMessage;
}
