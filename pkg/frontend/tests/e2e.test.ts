/**
 * End-to-end round trip against the real session server.
 *
 * A headless scripted client presses `S` at chain-scheduled delays over
 * at least a thousand human control loops; the session's estimated lag
 * chain must recover the schedule's chain, and the server's verdict
 * report must match the CLI pipeline run on the emitted log.
 */
import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ScriptedOperator } from "../src/automation";
import {
  StateTick,
  VerdictReport,
  control,
  parseServerMessage,
} from "../src/protocol";
import { applyMessage, initialViewModel } from "../src/viewmodel";

const PORT = 8473;
const ML = {
  states: [3, 7],
  matrix: [
    [0.1, 0.9],
    [0.9, 0.1],
  ],
  seed: 20240921,
};

function strongLink() {
  return {
    antenna_gain: 1.0,
    carrier_freq_mhz: 915.0,
    distance_m: 1.0,
    pathloss_exp: 0.0,
    tx_power_dbm: 120.0,
    noise_power_dbm: 0.0,
  };
}

function machineLink() {
  return {
    antenna_gain: 4.0,
    carrier_freq_mhz: 915.0,
    distance_m: 40.0,
    pathloss_exp: 2.9,
    tx_power_dbm: 23.0,
    noise_power_dbm: -70.0,
  };
}

function sessionConfig() {
  // JSON is valid YAML, so the python side reads this directly
  return {
    links: {
      sensor_controller: machineLink(),
      controller_actuator: machineLink(),
      sensor_human: strongLink(),
      human_actuator: strongLink(),
    },
    code: { payload_bits: 3000, packet_len_symbols: 1500 },
    harq: { scheme: "IR", max_attempts: 3 },
    lag_chain: { states_steps: ML.states, transition_matrix: ML.matrix },
    gains: { alpha_hm: 0.5271, alpha_m: 0.7949, alpha_h: 1.0196,
             alpha: 1.0134 },
    plant: { kind: "cartpole", weight_reappear_prob: 0.5 },
    sim: { master_seed: 99, horizon_steps: 2000 },
    estimation: { lag_state_set_s: [0.15, 0.35] },
    server: { tick_rate_hz: 0.0, realtime: false, plant_reset_every: 400 },
  };
}

let server: ChildProcess;
let workDir: string;
let cfgPath: string;

async function waitForServer(url: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const ok = await new Promise<boolean>((resolve) => {
      const probe = new WebSocket(url);
      probe.on("open", () => {
        probe.close();
        resolve(true);
      });
      probe.on("error", () => resolve(false));
    });
    if (ok) return;
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("session server did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "whmc-e2e-"));
  cfgPath = join(workDir, "scenario.yaml");
  writeFileSync(cfgPath, JSON.stringify(sessionConfig(), null, 2));
  server = spawn(
    "python3",
    ["-m", "whmc.expserver", "--config", cfgPath, "--port", String(PORT),
     "--log-dir", workDir],
    { stdio: ["ignore", "ignore", "inherit"] },
  );
  await waitForServer(`ws://127.0.0.1:${PORT}/ws?session=probe`);
});

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("scripted round trip through the live server", () => {
  let report: VerdictReport;
  let operator: ScriptedOperator;
  let frozenDuringPause = true;
  let stalenessMirrored = true;

  it("runs at least a thousand loops and recovers the chain", async () => {
    operator = new ScriptedOperator(ML);
    const ws = new WebSocket(`ws://127.0.0.1:${PORT}/ws?session=e2e`);
    let vm = initialViewModel();

    report = await new Promise<VerdictReport>((resolve, reject) => {
      const guard = setTimeout(
        () => reject(new Error("session did not finish")),
        200_000,
      );
      let paused = false;
      let pauseProbe: StateTick | null = null;
      let ended = false;
      ws.on("open", () => ws.send(JSON.stringify(control("start"))));
      ws.on("message", (raw) => {
        const msg = parseServerMessage(String(raw));
        if (!msg) return;
        vm = applyMessage(vm, msg);
        if (msg.type === "verdict_report") {
          clearTimeout(guard);
          resolve(msg);
          return;
        }
        if (msg.type !== "state_tick") return;
        if (vm.lastTick!.staleness_steps !== msg.staleness_steps) {
          stalenessMirrored = false;
        }
        if (paused) {
          // the server is paused: any new tick means the view moved
          if (pauseProbe && msg.t > pauseProbe.t) {
            frozenDuringPause = false;
          }
          return;
        }
        if (operator.scheduledLags.length >= 1000 && !ended &&
            msg.t > operator.pendingApplyTick) {
          // pause instead of acking, so no further tick is produced
          ended = true;
          paused = true;
          pauseProbe = msg;
          ws.send(JSON.stringify(control("pause")));
          setTimeout(() => {
            ws.send(JSON.stringify(control("end")));
          }, 400);
          return;
        }
        for (const out of operator.onTick(msg)) {
          ws.send(JSON.stringify(out));
        }
      });
      ws.on("error", (err) => {
        clearTimeout(guard);
        reject(err);
      });
    });
    ws.close();

    expect(operator.scheduledLags.length).toBeGreaterThanOrEqual(1000);
    expect(report.chain).not.toBeNull();
    const got = report.chain!.transition_matrix;
    for (let i = 0; i < 2; i++) {
      for (let j = 0; j < 2; j++) {
        expect(Math.abs(got[i][j] - ML.matrix[i][j])).toBeLessThan(0.05);
      }
    }
    expect(report.gains).not.toBeNull();
    expect(report.lhs).not.toBeNull();
  });

  it("renders no state change while the server is paused", () => {
    expect(frozenDuringPause).toBe(true);
  });

  it("mirrors the server-reported uplink delay on every tick", () => {
    expect(stalenessMirrored).toBe(true);
  });

  it("produces a verdict identical to the CLI on the emitted log", () => {
    const estDir = join(workDir, "est");
    const est = spawnSync(
      "python3",
      ["-m", "whmc.cli", "estimate", "--config", cfgPath, "--out", estDir,
       report.log_path],
      { encoding: "utf8" },
    );
    expect(est.status).toBe(0);
    const estimates = JSON.parse(
      readFileSync(join(estDir, "estimates.json"), "utf8"),
    );
    expect(estimates.chain.transition_matrix).toEqual(
      report.chain!.transition_matrix,
    );
    expect(estimates.gains).toEqual(report.gains);

    const checkDir = join(workDir, "check");
    const check = spawnSync(
      "python3",
      ["-m", "whmc.cli", "check", "--config", cfgPath, "--estimates",
       join(estDir, "estimates.json"), "--out", checkDir],
      { encoding: "utf8" },
    );
    expect([0, 2]).toContain(check.status);
    const checkReport = JSON.parse(
      readFileSync(join(checkDir, "check_report.json"), "utf8"),
    );
    expect(checkReport.lhs).toBe(report.lhs);
    expect(checkReport.stable).toBe(report.stable);
  });
});
