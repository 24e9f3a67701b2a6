// End-to-end conformance against the real backend: budget enforcement per
// cluster, no oracle leakage in any payload, and verdict persistence across
// a service restart. Spawns the actual CLI, so these tests need python3
// with the backend package installed.

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HttpApi, ApiError } from "../src/api.js";
import { ORACLE_FIELDS, SamplePayload } from "../src/types.js";

const MINUTE = 60_000;

let work: string;
let runDir: string;
let datasetPath: string;
let manifestPath: string;
let server: ChildProcess | null = null;
let base = "";

function cli(...args: string[]): void {
  const result = spawnSync("python3", ["-m", "trajbench", ...args], {
    encoding: "utf-8",
    timeout: MINUTE,
  });
  if (result.status !== 0) {
    throw new Error(
      `trajbench ${args[0]} failed (${result.status}): ${result.stderr}`
    );
  }
}

function startServer(outDir: string): Promise<{ proc: ChildProcess; base: string }> {
  return new Promise((resolve, reject) => {
    const proc = spawn(
      "python3",
      [
        "-u",
        "-m",
        "trajbench",
        "serve",
        "--out",
        outDir,
        "--dataset",
        datasetPath,
        "--manifest",
        manifestPath,
        "--k",
        "4",
        "--seed",
        "3",
        "--port",
        "0",
      ],
      { stdio: ["ignore", "pipe", "pipe"] }
    );
    let stdout = "";
    let stderr = "";
    const timer = setTimeout(() => {
      proc.kill("SIGKILL");
      reject(new Error(`server never announced its URL; stderr: ${stderr}`));
    }, MINUTE);
    proc.stdout?.on("data", (chunk: Buffer) => {
      stdout += chunk.toString();
      const match = stdout.match(/http:\/\/[\d.]+:\d+/);
      if (match) {
        clearTimeout(timer);
        resolve({ proc, base: match[0] });
      }
    });
    proc.stderr?.on("data", (chunk: Buffer) => {
      stderr += chunk.toString();
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early (${code}); stderr: ${stderr}`));
    });
  });
}

function stopServer(proc: ChildProcess): Promise<void> {
  return new Promise((resolve) => {
    proc.removeAllListeners("exit");
    proc.on("exit", () => resolve());
    proc.kill("SIGTERM");
    setTimeout(() => {
      if (proc.exitCode === null) {
        proc.kill("SIGKILL");
      }
    }, 5_000);
  });
}

beforeAll(async () => {
  work = mkdtempSync(join(tmpdir(), "inspect-bench-"));
  cli(
    "generate",
    "--out", join(work, "gen"),
    "--scenes", "40",
    "--seed", "20",
    "--agents", "2,5"
  );
  cli(
    "poison",
    "--out", join(work, "poi"),
    "--dataset", join(work, "gen", "dataset.jsonl"),
    "--trigger", "composite",
    "--tar", "brake",
    "--ratio", "0.1",
    "--seed", "7"
  );
  datasetPath = join(work, "poi", "dataset.jsonl");
  manifestPath = join(work, "poi", "manifest.jsonl");
  runDir = join(work, "run");
  const started = await startServer(runDir);
  server = started.proc;
  base = started.base;
}, 2 * MINUTE);

afterAll(async () => {
  if (server) {
    await stopServer(server);
    server = null;
  }
  rmSync(work, { recursive: true, force: true });
}, MINUTE);

describe("bench conformance", () => {
  it(
    "enforces every cluster budget and never leaks oracle fields",
    async () => {
      const api = new HttpApi(base);
      const clusters = await api.getClusters();
      expect(clusters.clusters.length).toBeGreaterThan(0);
      const budgetOf = new Map(
        clusters.clusters.map((c) => [c.label, c.budget] as const)
      );
      const sizeOf = new Map(
        clusters.clusters.map((c) => [c.label, c.size] as const)
      );

      const created = await api.createSession("oracle", 11);
      const servedPerCluster = new Map<number, number>();
      const samples: SamplePayload[] = [];
      for (;;) {
        const next = await api.nextSample(created.session_id);
        if (next.done) {
          expect(next.served).toBe(created.total);
          break;
        }
        samples.push(next);
        const label = next.cluster?.label;
        expect(label).toBeDefined();
        const count = (servedPerCluster.get(label!) ?? 0) + 1;
        servedPerCluster.set(label!, count);
        expect(next.cluster?.served_in_cluster).toBe(count);
        await api.submitVerdict(
          created.session_id,
          next.scene_id,
          samples.length === 1
        );
      }
      expect(samples.length).toBe(created.total);

      // stops at n_c: within every cluster the spend is capped by its budget
      for (const [label, count] of servedPerCluster) {
        const budget = budgetOf.get(label);
        expect(budget).not.toBeNull();
        expect(count).toBeLessThanOrEqual(budget!);
        expect(count).toBeLessThanOrEqual(sizeOf.get(label)!);
      }
      // asking again after the budget is spent keeps returning done
      const after = await api.nextSample(created.session_id);
      expect(after.done).toBe(true);

      // raw-text sweep across every endpoint the UI touches
      for (const path of [
        "/api/clusters",
        "/api/sessions",
        `/api/sessions/${created.session_id}/summary`,
        `/api/sessions/${created.session_id}/next`,
      ]) {
        const text = await (await fetch(base + path)).text();
        for (const field of ORACLE_FIELDS) {
          expect(text).not.toContain(field);
        }
      }
    },
    2 * MINUTE
  );

  it(
    "keeps verdicts across a service restart",
    async () => {
      const api = new HttpApi(base);
      const created = await api.createSession("oracle", 5);
      const first = await api.nextSample(created.session_id);
      expect(first.done).toBe(false);
      const sceneId = first.done ? "" : first.scene_id;
      await api.submitVerdict(created.session_id, sceneId, true);

      await stopServer(server!);
      const restarted = await startServer(runDir);
      server = restarted.proc;
      base = restarted.base;

      const revived = new HttpApi(base);
      const summary = await revived.getSummary(created.session_id);
      expect(summary.served).toBe(1);
      expect(summary.judged).toBe(1);
      expect(summary.flagged_ids).toEqual([sceneId]);
      expect(typeof summary.found_tar).toBe("boolean");

      // the pre-restart verdict stays final
      await expect(
        revived.submitVerdict(created.session_id, sceneId, false)
      ).rejects.toThrowError(ApiError);
    },
    2 * MINUTE
  );
});
