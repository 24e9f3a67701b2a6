import { describe, expect, it } from "vitest";

import {
  OracleLeakError,
  PayloadError,
  assertNoOracleFields,
  parseClusterList,
  parseNextPayload,
  parseScene,
  parseSessionCreated,
  parseSummary,
} from "../src/types.js";

const scene = {
  id: "s000001",
  dt: 0.5,
  lanes: [
    { centerline: [[0, 0], [10, 0], [20, 0]], width: 3.7 },
    { centerline: [[0, -3.7], [10, -3.7], [20, -3.7]], width: 3.7 },
  ],
  agents: [
    {
      id: "a0",
      past: [[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]],
      future: [[5, 0], [6, 0], [7, 0]],
      is_target: true,
    },
    {
      id: "a1",
      past: [[0, -3.7], [1, -3.7], [2, -3.7], [3, -3.7], [4, -3.7]],
      future: [[5, -3.7], [6, -3.7], [7, -3.7]],
      is_target: false,
      past_valid: [false, false, false, false, true],
    },
  ],
};

const samplePayload = {
  done: false,
  scene_id: "s000001",
  index: 1,
  total: 9,
  scene,
  cluster: { label: 2, size: 5, budget: 3, served_in_cluster: 1 },
  centroid: [[5, 0], [6, 0], [7, 0]],
};

describe("oracle field rejection", () => {
  it("accepts clean payloads", () => {
    expect(() => assertNoOracleFields(samplePayload)).not.toThrow();
  });

  it.each(["poison_tag", "is_inserted", "tar_fraction"])(
    "rejects %s at any depth",
    (field) => {
      const poisoned = JSON.parse(JSON.stringify(samplePayload));
      poisoned.scene.agents[1][field] = true;
      expect(() => assertNoOracleFields(poisoned)).toThrow(OracleLeakError);
      expect(() => parseNextPayload(poisoned)).toThrow(OracleLeakError);
    }
  );

  it("rejects leaks inside arrays", () => {
    const payload = { rows: [{ fine: 1 }, { tar_fraction: 0.4 }] };
    expect(() => assertNoOracleFields(payload)).toThrow(/tar_fraction/);
  });

  it("reports where the leak sits", () => {
    const payload = { scene: { agents: [{ is_inserted: true }] } };
    expect(() => assertNoOracleFields(payload)).toThrow(
      /\$\.scene\.agents\[0\]/
    );
  });
});

describe("scene parsing", () => {
  it("round-trips a valid scene", () => {
    const parsed = parseScene(scene);
    expect(parsed.id).toBe("s000001");
    expect(parsed.lanes).toHaveLength(2);
    expect(parsed.agents[1]?.past_valid).toEqual([
      false,
      false,
      false,
      false,
      true,
    ]);
  });

  it("rejects a scene without a target", () => {
    const bad = JSON.parse(JSON.stringify(scene));
    for (const agent of bad.agents) {
      agent.is_target = false;
    }
    expect(() => parseScene(bad)).toThrow(PayloadError);
  });

  it("rejects malformed points", () => {
    const bad = JSON.parse(JSON.stringify(scene));
    bad.agents[0].past[2] = [1, "two"];
    expect(() => parseScene(bad)).toThrow(PayloadError);
  });
});

describe("endpoint payload parsing", () => {
  it("parses the cluster list", () => {
    const parsed = parseClusterList({
      clusters: [
        { label: 0, size: 12, budget: 4 },
        { label: 1, size: 3, budget: null },
      ],
      n_scenes: 15,
    });
    expect(parsed.clusters[1]?.budget).toBeNull();
    expect(parsed.n_scenes).toBe(15);
  });

  it("parses session creation", () => {
    expect(parseSessionCreated({ session_id: "session-0", total: 7 })).toEqual({
      session_id: "session-0",
      total: 7,
    });
  });

  it("parses both arms of the next payload", () => {
    const sample = parseNextPayload(samplePayload);
    expect(sample.done).toBe(false);
    if (!sample.done) {
      expect(sample.cluster?.served_in_cluster).toBe(1);
      expect(sample.centroid).toHaveLength(3);
    }
    const done = parseNextPayload({ done: true, served: 9, total: 9 });
    expect(done).toEqual({ done: true, served: 9, total: 9 });
  });

  it("parses a summary with and without the outcome", () => {
    const base = {
      session_id: "session-1",
      policy: "oracle",
      total: 9,
      served: 9,
      judged: 9,
      flagged_ids: ["s000004"],
      clusters: [{ label: 0, size: 12, budget: 4, served_in_cluster: 4 }],
    };
    expect(parseSummary(base).found_tar).toBeUndefined();
    expect(parseSummary({ ...base, found_tar: true }).found_tar).toBe(true);
  });

  it("rejects a summary whose outcome is not boolean", () => {
    expect(() =>
      parseSummary({
        session_id: "s",
        policy: "oracle",
        total: 0,
        served: 0,
        judged: 0,
        flagged_ids: [],
        clusters: [],
        found_tar: "yes",
      })
    ).toThrow(PayloadError);
  });
});
