// Live integration against a real gateway: spawns `ptxlink serve`, connects
// over a genuine websocket, drives the robot for 10 seconds, and checks the
// latency gauge against the server's metrics report sample by sample.

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GatewayClient, SocketLike } from "../src/client.js";
import { COMMAND_PERIOD_MS, SteerLoop, applyKey } from "../src/input.js";
import { ControlRoomStore } from "../src/store.js";

const PORT = 18300 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const OPS = `ws://127.0.0.1:${PORT}/ops`;
const VALID_TOKEN = "demo-operator-token";

let server: ChildProcess;

function nodeSocket(url: string): SocketLike {
    return new WebSocket(url) as unknown as SocketLike;
}

async function waitForGateway(timeoutMs = 20000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
        try {
            const res = await fetch(`${BASE}/schema`);
            if (res.ok) return;
        } catch {
            // not up yet
        }
        await sleep(250);
    }
    throw new Error("gateway did not come up");
}

function sleep(ms: number): Promise<void> {
    return new Promise((resolve) => setTimeout(resolve, ms));
}

async function until(cond: () => boolean, timeoutMs: number, what: string): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
        if (cond()) return;
        await sleep(25);
    }
    throw new Error(`timed out waiting for ${what}`);
}

beforeAll(async () => {
    server = spawn("ptxlink", ["serve", "--port", String(PORT)], {
        stdio: ["ignore", "pipe", "pipe"],
    });
    await waitForGateway();
}, 30000);

afterAll(() => {
    server?.kill();
});

describe("control room against a live gateway", () => {
    it("rejects an invalid token and never enables the command pad", async () => {
        const store = new ControlRoomStore();
        const client = new GatewayClient(OPS, store, nodeSocket, { reconnectMs: 0 });
        client.connect("not-a-real-token");
        await until(() => store.state === "auth_failed", 10000, "auth_fail");
        expect(store.canSend).toBe(false);
        expect(client.sendCommand({
            gait: "walk", vx: 0.5, vy: 0, yaw_rate: 0, duration_ms: 100, client_ts: Date.now(),
        })).toBeNull();
        expect(store.counters.sent).toBe(0);
        client.close();
    }, 20000);

    it("drives for 10 s and the gauge matches the server report within 5 ms", async () => {
        const store = new ControlRoomStore();
        const client = new GatewayClient(OPS, store, nodeSocket, { reconnectMs: 0 });
        client.connect(VALID_TOKEN);
        await until(() => store.state === "ready", 10000, "auth_ok");

        // hold "forward" for 10 seconds of 10 Hz steering
        const loop = new SteerLoop((cmd) => client.sendCommand(cmd), COMMAND_PERIOD_MS);
        applyKey(loop.state, "w", true);
        loop.start();
        await sleep(10_000);
        applyKey(loop.state, "w", false);
        loop.stop();

        // let the last acks arrive
        await until(
            () => store.counters.applied + store.counters.rejected >= store.counters.sent,
            5000,
            "all command echoes",
        );
        expect(store.counters.sent).toBeGreaterThanOrEqual(80);
        expect(store.counters.applied).toBe(store.counters.sent);
        expect(store.gauge.length).toBe(50);

        // telemetry kept flowing while driving
        expect(store.telemetry).not.toBeNull();
        expect(store.telemetry!.x).toBeGreaterThan(0);

        const report = await (await fetch(`${BASE}/report`)).json();
        // every command shown as sent is audited at the jump host exactly once
        expect(report.audit_cmd_forwarded).toBe(store.counters.sent);
        // the gauge is the tail of the server's rtt_ms samples, within 5 ms
        const serverTail: number[] = report.rtt_ms.slice(-store.gauge.length);
        expect(serverTail.length).toBe(store.gauge.length);
        for (let i = 0; i < serverTail.length; i++) {
            expect(Math.abs(store.gauge[i] - serverTail[i])).toBeLessThanOrEqual(5.0);
        }
        client.close();
    }, 40000);
});
