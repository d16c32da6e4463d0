// Single store serializing every state update of the control room page.
//
// The latency gauge never computes anything client-side: it holds the last
// 50 rtt_ms values exactly as the server echoed them per confirmed command.

import {
    AlarmMsg,
    AuthFailMsg,
    AuthOkMsg,
    ErrorMsg,
    MetricMsg,
    ServerMessage,
    TelemetryMsg,
} from "./protocol.js";

export type ConnectionState =
    | "disconnected"
    | "connecting"
    | "unreachable"
    | "connected"     // socket open, not authenticated yet
    | "auth_failed"
    | "ready"         // authenticated, command pad enabled
    | "expired";      // session ran out, re-auth required

export const GAUGE_SIZE = 50;
export const MAX_ALARMS = 20;

export interface SessionInfo {
    id: number;
    principal: string;
    expiresAtUs: number;
    // local wall-clock deadline derived from the server's now at auth time
    localDeadlineMs: number;
}

export interface SentCommand {
    cmdId: number;
    sentAtMs: number;
    status: "pending" | "applied" | "rejected";
}

export class ControlRoomStore {
    state: ConnectionState = "disconnected";
    lastError = "";
    session: SessionInfo | null = null;
    telemetry: TelemetryMsg | null = null;
    alarms: AlarmMsg[] = [];
    gauge: number[] = [];
    commands = new Map<number, SentCommand>();
    counters = { sent: 0, applied: 0, rejected: 0 };
    serverPerPdr: { per: number | null; pdr: number | null } = { per: null, pdr: null };

    private listeners = new Set<() => void>();

    subscribe(fn: () => void): () => void {
        this.listeners.add(fn);
        return () => this.listeners.delete(fn);
    }

    private notify(): void {
        for (const fn of this.listeners) fn();
    }

    get canSend(): boolean {
        return this.state === "ready";
    }

    setConnection(state: ConnectionState, error = ""): void {
        this.state = state;
        this.lastError = error;
        if (state !== "ready") this.session = this.state === "expired" ? this.session : null;
        this.notify();
    }

    markSent(cmdId: number, nowMs: number): void {
        this.commands.set(cmdId, { cmdId, sentAtMs: nowMs, status: "pending" });
        this.counters.sent += 1;
        this.notify();
    }

    // expiry is checked against the local deadline computed at auth time
    tick(nowMs: number): void {
        if (this.state === "ready" && this.session && nowMs >= this.session.localDeadlineMs) {
            this.state = "expired";
            this.notify();
        }
    }

    applyServer(msg: ServerMessage, nowMs: number): void {
        switch (msg.type) {
            case "auth_ok":
                this.onAuthOk(msg, nowMs);
                break;
            case "auth_fail":
                this.onAuthFail(msg);
                break;
            case "metric":
                this.onMetric(msg);
                break;
            case "telemetry":
                this.telemetry = msg;
                break;
            case "alarm":
                this.alarms.unshift(msg);
                if (this.alarms.length > MAX_ALARMS) this.alarms.pop();
                break;
            case "error":
                this.lastError = msg.reason;
                break;
        }
        this.notify();
    }

    private onAuthOk(msg: AuthOkMsg, nowMs: number): void {
        const remainingMs = (msg.expires_at_us - msg.server_now_us) / 1000;
        this.session = {
            id: msg.session_id,
            principal: msg.principal,
            expiresAtUs: msg.expires_at_us,
            localDeadlineMs: nowMs + remainingMs,
        };
        this.state = "ready";
        this.lastError = "";
    }

    private onAuthFail(msg: AuthFailMsg): void {
        this.session = null;
        this.state = "auth_failed";
        this.lastError = msg.reason;
    }

    private onMetric(msg: MetricMsg): void {
        const entry = this.commands.get(msg.cmd_id);
        if (entry) entry.status = msg.status;
        if (msg.status === "applied") {
            this.counters.applied += 1;
            // server-computed round trip, echoed verbatim into the gauge
            this.gauge.push(msg.rtt_ms);
            if (this.gauge.length > GAUGE_SIZE) this.gauge.shift();
        } else {
            this.counters.rejected += 1;
        }
    }

    setServerPerPdr(per: number | null, pdr: number | null): void {
        this.serverPerPdr = { per, pdr };
        this.notify();
    }
}
