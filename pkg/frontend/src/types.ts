// Payload contracts for the inspection backend, plus parsers that refuse
// to accept any payload carrying attacker-side ground truth. The inspector
// must judge scenes unaided, so a response that names a forbidden field
// anywhere in its JSON tree is rejected outright rather than filtered.

export type Point = [number, number];

export interface LaneRecord {
  centerline: Point[];
  width: number;
}

export interface AgentRecord {
  id: string;
  past: Point[];
  future: Point[];
  is_target: boolean;
  past_valid?: boolean[];
}

export interface SceneRecord {
  id: string;
  dt: number;
  lanes: LaneRecord[];
  agents: AgentRecord[];
}

export interface ClusterRow {
  label: number;
  size: number;
  budget: number | null;
}

export interface ClusterList {
  clusters: ClusterRow[];
  n_scenes: number;
}

export interface SessionCreated {
  session_id: string;
  total: number;
}

export interface ClusterContext extends ClusterRow {
  served_in_cluster: number;
}

export interface SamplePayload {
  done: false;
  scene_id: string;
  index: number;
  total: number;
  scene: SceneRecord;
  cluster?: ClusterContext;
  centroid?: Point[];
}

export interface DonePayload {
  done: true;
  served: number;
  total: number;
}

export type NextPayload = SamplePayload | DonePayload;

export interface SessionSummary {
  session_id: string;
  policy: string;
  total: number;
  served: number;
  judged: number;
  flagged_ids: string[];
  clusters: ClusterContext[];
  found_tar?: boolean;
}

// Names only the poisoning oracle knows. Budgets and the found/not-found
// outcome are the inspection protocol's own outputs and are allowed.
export const ORACLE_FIELDS: readonly string[] = [
  "poison_tag",
  "is_inserted",
  "tar_fraction",
];

export class OracleLeakError extends Error {
  constructor(field: string, path: string) {
    super(`oracle-only field "${field}" leaked into the payload at ${path}`);
    this.name = "OracleLeakError";
  }
}

export class PayloadError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PayloadError";
  }
}

export function assertNoOracleFields(value: unknown, path = "$"): void {
  if (Array.isArray(value)) {
    value.forEach((item, i) => assertNoOracleFields(item, `${path}[${i}]`));
    return;
  }
  if (value !== null && typeof value === "object") {
    for (const [key, item] of Object.entries(value as Record<string, unknown>)) {
      if (ORACLE_FIELDS.includes(key)) {
        throw new OracleLeakError(key, path);
      }
      assertNoOracleFields(item, `${path}.${key}`);
    }
  }
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isPoint(value: unknown): value is Point {
  return (
    Array.isArray(value) &&
    value.length === 2 &&
    value.every((c) => typeof c === "number" && Number.isFinite(c))
  );
}

function isPointArray(value: unknown): value is Point[] {
  return Array.isArray(value) && value.every(isPoint);
}

function need(condition: boolean, what: string): asserts condition {
  if (!condition) {
    throw new PayloadError(`malformed payload: ${what}`);
  }
}

function parseLane(value: unknown): LaneRecord {
  need(isRecord(value), "lane is not an object");
  need(isPointArray(value.centerline), "lane centerline is not a point list");
  need(typeof value.width === "number" && value.width > 0, "lane width");
  return { centerline: value.centerline, width: value.width };
}

function parseAgent(value: unknown): AgentRecord {
  need(isRecord(value), "agent is not an object");
  need(typeof value.id === "string", "agent id");
  need(isPointArray(value.past), "agent past");
  need(isPointArray(value.future), "agent future");
  need(typeof value.is_target === "boolean", "agent is_target");
  const agent: AgentRecord = {
    id: value.id,
    past: value.past,
    future: value.future,
    is_target: value.is_target,
  };
  if (value.past_valid !== undefined) {
    need(
      Array.isArray(value.past_valid) &&
        value.past_valid.every((b) => typeof b === "boolean"),
      "agent past_valid"
    );
    agent.past_valid = value.past_valid;
  }
  return agent;
}

export function parseScene(value: unknown): SceneRecord {
  assertNoOracleFields(value);
  need(isRecord(value), "scene is not an object");
  need(typeof value.id === "string", "scene id");
  need(typeof value.dt === "number" && value.dt > 0, "scene dt");
  need(Array.isArray(value.lanes), "scene lanes");
  need(Array.isArray(value.agents), "scene agents");
  const scene: SceneRecord = {
    id: value.id,
    dt: value.dt,
    lanes: value.lanes.map(parseLane),
    agents: value.agents.map(parseAgent),
  };
  need(scene.agents.some((a) => a.is_target), "scene has no target agent");
  return scene;
}

function parseClusterRow(value: unknown): ClusterRow {
  need(isRecord(value), "cluster row is not an object");
  need(typeof value.label === "number", "cluster label");
  need(typeof value.size === "number" && value.size >= 0, "cluster size");
  need(
    value.budget === null || typeof value.budget === "number",
    "cluster budget"
  );
  return { label: value.label, size: value.size, budget: value.budget };
}

export function parseClusterList(value: unknown): ClusterList {
  assertNoOracleFields(value);
  need(isRecord(value), "cluster list is not an object");
  need(Array.isArray(value.clusters), "clusters array");
  need(typeof value.n_scenes === "number", "n_scenes");
  return {
    clusters: value.clusters.map(parseClusterRow),
    n_scenes: value.n_scenes,
  };
}

export function parseSessionCreated(value: unknown): SessionCreated {
  assertNoOracleFields(value);
  need(isRecord(value), "session-created is not an object");
  need(typeof value.session_id === "string", "session_id");
  need(typeof value.total === "number", "session total");
  return { session_id: value.session_id, total: value.total };
}

function parseClusterContext(value: unknown): ClusterContext {
  const row = parseClusterRow(value);
  need(isRecord(value), "cluster context is not an object");
  need(
    typeof value.served_in_cluster === "number",
    "cluster served_in_cluster"
  );
  return { ...row, served_in_cluster: value.served_in_cluster };
}

export function parseNextPayload(value: unknown): NextPayload {
  assertNoOracleFields(value);
  need(isRecord(value), "next payload is not an object");
  need(typeof value.done === "boolean", "done flag");
  need(typeof value.total === "number", "payload total");
  if (value.done) {
    need(typeof value.served === "number", "served count");
    return { done: true, served: value.served, total: value.total };
  }
  need(typeof value.scene_id === "string", "scene_id");
  need(typeof value.index === "number", "sample index");
  const sample: SamplePayload = {
    done: false,
    scene_id: value.scene_id,
    index: value.index,
    total: value.total,
    scene: parseScene(value.scene),
  };
  if (value.cluster !== undefined) {
    sample.cluster = parseClusterContext(value.cluster);
  }
  if (value.centroid !== undefined) {
    need(isPointArray(value.centroid), "centroid points");
    sample.centroid = value.centroid;
  }
  return sample;
}

export function parseSummary(value: unknown): SessionSummary {
  assertNoOracleFields(value);
  need(isRecord(value), "summary is not an object");
  need(typeof value.session_id === "string", "summary session_id");
  need(typeof value.policy === "string", "summary policy");
  need(typeof value.total === "number", "summary total");
  need(typeof value.served === "number", "summary served");
  need(typeof value.judged === "number", "summary judged");
  need(
    Array.isArray(value.flagged_ids) &&
      value.flagged_ids.every((s) => typeof s === "string"),
    "summary flagged_ids"
  );
  need(Array.isArray(value.clusters), "summary clusters");
  const summary: SessionSummary = {
    session_id: value.session_id,
    policy: value.policy,
    total: value.total,
    served: value.served,
    judged: value.judged,
    flagged_ids: value.flagged_ids,
    clusters: value.clusters.map(parseClusterContext),
  };
  if (value.found_tar !== undefined) {
    need(typeof value.found_tar === "boolean", "summary found_tar");
    summary.found_tar = value.found_tar;
  }
  return summary;
}
