// Typed client for the protoshot HTTP service. Every number the UI shows
// comes through here; the client does no scoring math of its own.

export type WireDtype = "float32" | "float64" | "int64" | "uint8";

export interface WireArray {
  dtype: WireDtype;
  shape: number[];
  data_b64: string;
}

export interface DecodedArray {
  shape: number[];
  data: Float64Array;
}

const BYTES_PER: Record<WireDtype, number> = {
  float32: 4,
  float64: 8,
  int64: 8,
  uint8: 1,
};

export function base64ToBytes(b64: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    const buf = Buffer.from(b64, "base64");
    // copy out of node's shared pool so byteOffset is 0
    return new Uint8Array(buf);
  }
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes.buffer, bytes.byteOffset, bytes.byteLength).toString("base64");
  }
  let bin = "";
  for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
  return btoa(bin);
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

// Payloads are little-endian regardless of platform, hence the DataView.
export function decodeArray(wire: WireArray): DecodedArray {
  const bytes = base64ToBytes(wire.data_b64);
  const n = elementCount(wire.shape);
  if (bytes.byteLength !== n * BYTES_PER[wire.dtype]) {
    throw new Error(
      `wire array: ${bytes.byteLength} bytes but shape ${JSON.stringify(wire.shape)} ` +
      `of ${wire.dtype} needs ${n * BYTES_PER[wire.dtype]}`,
    );
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float64Array(n);
  switch (wire.dtype) {
    case "float32":
      for (let i = 0; i < n; i++) out[i] = view.getFloat32(i * 4, true);
      break;
    case "float64":
      for (let i = 0; i < n; i++) out[i] = view.getFloat64(i * 8, true);
      break;
    case "int64":
      for (let i = 0; i < n; i++) out[i] = Number(view.getBigInt64(i * 8, true));
      break;
    case "uint8":
      for (let i = 0; i < n; i++) out[i] = bytes[i];
      break;
  }
  return { shape: wire.shape.slice(), data: out };
}

export function encodeArray(
  data: ArrayLike<number>,
  shape: number[],
  dtype: WireDtype = "float32",
): WireArray {
  const n = elementCount(shape);
  if (data.length !== n) {
    throw new Error(`encode: ${data.length} values for shape ${JSON.stringify(shape)}`);
  }
  const bytes = new Uint8Array(n * BYTES_PER[dtype]);
  const view = new DataView(bytes.buffer);
  switch (dtype) {
    case "float32":
      for (let i = 0; i < n; i++) view.setFloat32(i * 4, data[i], true);
      break;
    case "float64":
      for (let i = 0; i < n; i++) view.setFloat64(i * 8, data[i], true);
      break;
    case "int64":
      for (let i = 0; i < n; i++) view.setBigInt64(i * 8, BigInt(Math.trunc(data[i])), true);
      break;
    case "uint8":
      for (let i = 0; i < n; i++) bytes[i] = data[i];
      break;
  }
  return { dtype, shape: shape.slice(), data_b64: bytesToBase64(bytes) };
}

// --- response shapes ------------------------------------------------------

export interface ModelInfo {
  id: string;
  input_shape: number[];
  feature_layer: string;
  class_labels: string[];
  parameters: { total: number; trainable: number; non_trainable: number };
}

export interface DatasetInfo {
  id: string;
  size: number;
  classes: number[];
  class_names?: string[];
  image_shape: number[];
}

export interface SamplesResponse {
  dataset_id: string;
  indices: number[];
  labels: number[];
  images: WireArray;
}

export interface JobSnapshot {
  id: string;
  kind: string;
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  error?: string;
}

export interface JobResult<T = unknown> {
  id: string;
  kind: string;
  result: T;
}

export interface AttributionResult {
  map: WireArray;
  z_ref: number;
  color_bound: number;
  patch_size: number;
  reference_value: number;
  class_index: number;
}

export interface SweepResult {
  parameter: number[];
  classes: number[];
  protoshot: number[][];
  exmatchina: number[][];
  predicted: number[];
  agreement: { protoshot: number; exmatchina: number };
}

export interface AblationResult {
  scores: { id: string; score: number }[];
}

export interface AdversarialResult {
  benign: number[];
  adversarial: number[];
  mean_benign: number;
  mean_adversarial: number;
  auc: number;
  roc_points: [number, number][];
  epsilon: number;
  n: number;
  seed: number;
}

export interface ScoreResponse {
  score: number;
  degenerate: boolean;
  class_index: number;
  components: WireArray;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = typeof fetch;

export class ProtoshotClient {
  constructor(public baseUrl: string, private fetchImpl: FetchLike = fetch) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    let parsed: any = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = null;
    }
    if (!res.ok) {
      const detail = parsed && parsed.detail !== undefined ? String(parsed.detail) : text;
      throw new ApiError(res.status, detail);
    }
    return parsed as T;
  }

  listModels(): Promise<{ models: ModelInfo[] }> {
    return this.request("GET", "/models");
  }

  registerModel(req: { manifest_path: string; blob_path: string; id?: string }): Promise<ModelInfo> {
    return this.request("POST", "/models", req);
  }

  listDatasets(): Promise<{ datasets: DatasetInfo[] }> {
    return this.request("GET", "/datasets");
  }

  registerDataset(req: {
    id?: string;
    kind: "idx" | "pgm_dir";
    images_path?: string;
    labels_path?: string;
    root_path?: string;
    resize_to?: number;
    invert?: boolean;
  }): Promise<DatasetInfo> {
    return this.request("POST", "/datasets", req);
  }

  samples(datasetId: string, opts: { class?: number; seed?: number; n?: number } = {}): Promise<SamplesResponse> {
    const q = new URLSearchParams();
    if (opts.class !== undefined) q.set("class", String(opts.class));
    if (opts.seed !== undefined) q.set("seed", String(opts.seed));
    if (opts.n !== undefined) q.set("n", String(opts.n));
    const qs = q.toString();
    return this.request("GET", `/datasets/${encodeURIComponent(datasetId)}/samples${qs ? "?" + qs : ""}`);
  }

  submitJob(kind: string, params: Record<string, unknown>): Promise<{ id: string; kind: string; status: string }> {
    return this.request("POST", "/jobs", { kind, params });
  }

  jobStatus(jobId: string): Promise<JobSnapshot> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}`);
  }

  jobResult<T>(jobId: string): Promise<JobResult<T>> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}/result`);
  }

  score(req: {
    model_id: string;
    class_index: number;
    support?: { n: number; seed: number };
    dataset_id?: string;
    query_index?: number;
    query?: WireArray;
  }): Promise<ScoreResponse> {
    return this.request("POST", "/score", req);
  }
}
