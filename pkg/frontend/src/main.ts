// Control-room page wiring: connect form, telemetry panel, alarms, latency
// gauge and the command pad. All state lives in the store; this file only
// renders it and forwards input.

import { GatewayClient } from "./client.js";
import { SteerLoop, applyKey } from "./input.js";
import { ControlRoomStore } from "./store.js";

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
}

const store = new ControlRoomStore();
let client: GatewayClient | null = null;

const statusBanner = el<HTMLDivElement>("status");
const poseDiv = el<HTMLDivElement>("pose");
const batteryBar = el<HTMLProgressElement>("battery");
const gaugeCanvas = el<HTMLCanvasElement>("gauge");
const gaugeLabel = el<HTMLDivElement>("gauge-label");
const alarmsList = el<HTMLUListElement>("alarms");
const qualityDiv = el<HTMLDivElement>("quality");
const padDiv = el<HTMLDivElement>("pad");

function render(): void {
    const labels: Record<string, string> = {
        disconnected: "disconnected",
        connecting: "connecting…",
        unreachable: "gateway unreachable — retrying",
        connected: "authenticating…",
        auth_failed: `authentication rejected: ${store.lastError}`,
        ready: `connected as ${store.session?.principal ?? "?"} (session ${store.session?.id})`,
        expired: "session expired — re-authenticate to continue",
    };
    statusBanner.textContent = labels[store.state];
    statusBanner.className = store.state;

    padDiv.classList.toggle("disabled", !store.canSend);

    const t = store.telemetry;
    if (t) {
        poseDiv.textContent =
            `x ${t.x.toFixed(2)} m   y ${t.y.toFixed(2)} m   heading ${t.heading.toFixed(2)} rad   ` +
            `gait ${t.gait}   mode ${t.mode}`;
        batteryBar.value = Math.round(t.battery * 100);
    }

    alarmsList.innerHTML = "";
    for (const alarm of store.alarms) {
        const item = document.createElement("li");
        item.textContent = `${alarm.rule_id} @ ${alarm.source}: ${alarm.observed}`;
        alarmsList.appendChild(item);
    }

    const g = store.gauge;
    if (g.length > 0) {
        const mean = g.reduce((a, b) => a + b, 0) / g.length;
        gaugeLabel.textContent =
            `rtt ${g[g.length - 1].toFixed(1)} ms (mean of last ${g.length}: ${mean.toFixed(1)} ms)`;
        drawGauge(g);
    }

    const { per, pdr } = store.serverPerPdr;
    qualityDiv.textContent =
        `sent ${store.counters.sent}   applied ${store.counters.applied}   ` +
        `rejected ${store.counters.rejected}` +
        (per !== null && pdr !== null ? `   PER ${per.toFixed(3)}   PDR ${pdr.toFixed(3)}` : "");
}

function drawGauge(values: number[]): void {
    const ctx = gaugeCanvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = gaugeCanvas;
    ctx.clearRect(0, 0, width, height);
    const max = Math.max(...values, 1);
    const barW = width / 50;
    ctx.fillStyle = "#3a86ff";
    values.forEach((v, i) => {
        const h = (v / max) * (height - 4);
        ctx.fillRect(i * barW, height - h, barW - 1, h);
    });
}

store.subscribe(render);
setInterval(() => store.tick(Date.now()), 1000);

// server-side session quality, never computed in the page
async function pollReport(): Promise<void> {
    try {
        const base = (el<HTMLInputElement>("endpoint").value || location.origin)
            .replace(/^ws/, "http").replace(/\/ops$/, "");
        const res = await fetch(`${base}/report`);
        if (res.ok) {
            const doc = await res.json();
            store.setServerPerPdr(doc.per, doc.pdr);
        }
    } catch {
        // gateway away; the banner already says so
    }
}
setInterval(pollReport, 2000);

el<HTMLButtonElement>("connect").addEventListener("click", () => {
    const endpoint = el<HTMLInputElement>("endpoint").value;
    const token = el<HTMLInputElement>("token").value;
    client?.close();
    client = new GatewayClient(endpoint, store, (url) => new WebSocket(url));
    client.connect(token);
});

const loop = new SteerLoop((cmd) => client?.sendCommand(cmd));
loop.start();

document.addEventListener("keydown", (ev) => {
    if (applyKey(loop.state, ev.key, true)) ev.preventDefault();
});
document.addEventListener("keyup", (ev) => {
    if (applyKey(loop.state, ev.key, false)) ev.preventDefault();
});

// virtual joystick buttons mirror the keyboard fields
for (const button of Array.from(padDiv.querySelectorAll("button[data-key]"))) {
    const key = (button as HTMLButtonElement).dataset.key!;
    button.addEventListener("pointerdown", () => applyKey(loop.state, key, true));
    button.addEventListener("pointerup", () => applyKey(loop.state, key, false));
    button.addEventListener("pointerleave", () => applyKey(loop.state, key, false));
}

render();
