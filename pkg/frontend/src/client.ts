// Gateway websocket client with reconnect; the socket construction is
// injected so tests can run under node while the page uses the browser's
// WebSocket.

import { clampCommand, parseServerMessage, UiCommand } from "./protocol.js";
import { ControlRoomStore } from "./store.js";

// adapter over both the browser WebSocket and node's `ws` client
export interface SocketLike {
    send(data: string): void;
    close(): void;
    // eslint-style note: handlers take `any` so DOM and node event shapes both fit
    onopen: ((ev?: any) => void) | null;
    onmessage: ((ev: any) => void) | null;
    onclose: ((ev?: any) => void) | null;
    onerror: ((ev?: any) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
    reconnectMs?: number;  // 0 disables automatic reconnect
    now?: () => number;
}

export class GatewayClient {
    private socket: SocketLike | null = null;
    private token = "";
    private nextCmdId = 1;
    private closedByUser = false;
    private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
    private readonly reconnectMs: number;
    private readonly now: () => number;

    constructor(
        private readonly url: string,
        private readonly store: ControlRoomStore,
        private readonly factory: SocketFactory,
        opts: ClientOptions = {},
    ) {
        this.reconnectMs = opts.reconnectMs ?? 2000;
        this.now = opts.now ?? (() => Date.now());
    }

    connect(token: string): void {
        this.token = token;
        this.closedByUser = false;
        this.open();
    }

    private open(): void {
        this.store.setConnection("connecting");
        let socket: SocketLike;
        try {
            socket = this.factory(this.url);
        } catch (err) {
            this.store.setConnection("unreachable", String(err));
            this.scheduleReconnect();
            return;
        }
        this.socket = socket;
        socket.onopen = () => {
            this.store.setConnection("connected");
            socket.send(JSON.stringify({ type: "auth", token: this.token }));
        };
        socket.onmessage = (ev) => {
            const msg = parseServerMessage(String(ev.data));
            if (msg) this.store.applyServer(msg, this.now());
        };
        socket.onerror = () => {
            if (this.store.state === "connecting") {
                this.store.setConnection("unreachable", "gateway unreachable");
            }
        };
        socket.onclose = () => {
            this.socket = null;
            if (this.closedByUser || this.store.state === "auth_failed") return;
            this.store.setConnection("unreachable", "connection lost");
            this.scheduleReconnect();
        };
    }

    private scheduleReconnect(): void {
        if (this.reconnectMs <= 0 || this.closedByUser) return;
        if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
        this.reconnectTimer = setTimeout(() => this.open(), this.reconnectMs);
    }

    // Returns the cmd_id, or null when the pad is disabled (not authenticated,
    // session expired, or socket gone) -- nothing is ever sent in that case.
    sendCommand(cmd: UiCommand): number | null {
        if (!this.store.canSend || this.socket === null) return null;
        const cmdId = this.nextCmdId++;
        const clamped = clampCommand(cmd);
        this.socket.send(JSON.stringify({ type: "cmd", cmd_id: cmdId, ...clamped }));
        this.store.markSent(cmdId, this.now());
        return cmdId;
    }

    close(): void {
        this.closedByUser = true;
        if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
        this.socket?.close();
        this.socket = null;
        this.store.setConnection("disconnected");
    }
}
