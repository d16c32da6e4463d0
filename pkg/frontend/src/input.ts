// Keyboard / virtual-joystick state turned into a fixed-rate command stream.
//
// While any steering input is held, one command goes out every period (10 Hz
// by default); releasing everything stops the stream.

import { Gait, UiCommand } from "./protocol.js";

export const COMMAND_PERIOD_MS = 100;

export interface SteerState {
    forward: boolean;
    back: boolean;
    left: boolean;
    right: boolean;
    strafeLeft: boolean;
    strafeRight: boolean;
    run: boolean;
    stairs: boolean;
}

export function emptySteerState(): SteerState {
    return {
        forward: false, back: false, left: false, right: false,
        strafeLeft: false, strafeRight: false, run: false, stairs: false,
    };
}

export function steerActive(s: SteerState): boolean {
    return s.forward || s.back || s.left || s.right || s.strafeLeft || s.strafeRight;
}

export function steerToCommand(s: SteerState, now: number): UiCommand {
    const gait: Gait = s.stairs ? "stairs" : s.run ? "run" : "walk";
    const speed = gait === "run" ? 1.2 : gait === "stairs" ? 0.25 : 0.6;
    return {
        gait,
        vx: (s.forward ? speed : 0) - (s.back ? speed * 0.6 : 0),
        vy: (s.strafeLeft ? 0.3 : 0) - (s.strafeRight ? 0.3 : 0),
        yaw_rate: (s.left ? 0.8 : 0) - (s.right ? 0.8 : 0),
        duration_ms: 2 * COMMAND_PERIOD_MS,  // bridges until the next command
        client_ts: now,
    };
}

const KEYMAP: Record<string, keyof SteerState> = {
    w: "forward", ArrowUp: "forward",
    s: "back", ArrowDown: "back",
    a: "left", ArrowLeft: "left",
    d: "right", ArrowRight: "right",
    q: "strafeLeft",
    e: "strafeRight",
    Shift: "run",
    c: "stairs",
};

export function applyKey(state: SteerState, key: string, pressed: boolean): boolean {
    const field = KEYMAP[key];
    if (!field) return false;
    state[field] = pressed;
    return true;
}

export class SteerLoop {
    private timer: ReturnType<typeof setInterval> | null = null;
    readonly state = emptySteerState();

    constructor(
        private readonly send: (cmd: UiCommand) => void,
        private readonly periodMs: number = COMMAND_PERIOD_MS,
        private readonly now: () => number = () => Date.now(),
    ) {}

    start(): void {
        if (this.timer) return;
        this.timer = setInterval(() => {
            if (steerActive(this.state)) {
                this.send(steerToCommand(this.state, this.now()));
            }
        }, this.periodMs);
    }

    stop(): void {
        if (this.timer) clearInterval(this.timer);
        this.timer = null;
    }
}
