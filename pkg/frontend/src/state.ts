// Session state and the client-side result cache. Cache keys are built
// from the canonical JSON of every parameter that influences a result,
// so a stale result can never be shown for changed parameters.

export type ExperimentTab = "attribute" | "sweep" | "ablate" | "adversarial" | "train";

export interface SupportSpec {
  classIndex: number;
  seed: number;
  n: number;
}

// JSON.stringify with object keys sorted at every level; arrays keep order.
export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).filter((k) => obj[k] !== undefined).sort();
  return "{" + keys.map((k) => JSON.stringify(k) + ":" + stableStringify(obj[k])).join(",") + "}";
}

export class ResultCache {
  private map = new Map<string, unknown>();

  keyFor(kind: string, params: Record<string, unknown>): string {
    return kind + ":" + stableStringify(params);
  }

  get<T>(kind: string, params: Record<string, unknown>): T | undefined {
    return this.map.get(this.keyFor(kind, params)) as T | undefined;
  }

  set(kind: string, params: Record<string, unknown>, result: unknown): void {
    this.map.set(this.keyFor(kind, params), result);
  }

  get size(): number {
    return this.map.size;
  }

  clear(): void {
    this.map.clear();
  }
}

export class SessionState {
  modelId: string | null = null;
  datasetId: string | null = null;
  queryIndex: number | null = null;
  support: SupportSpec = { classIndex: 0, seed: 0, n: 10 };
  tab: ExperimentTab = "attribute";
  readonly cache = new ResultCache();

  // Shared parameter block; each experiment overlays its own knobs.
  baseParams(): Record<string, unknown> {
    if (this.modelId === null) throw new Error("no model selected");
    if (this.datasetId === null) throw new Error("no dataset selected");
    return {
      model_id: this.modelId,
      dataset_id: this.datasetId,
      support_n: this.support.n,
      support_seed: this.support.seed,
    };
  }

  attributionParams(opts: { patchSize: number; referenceValue: number }): Record<string, unknown> {
    if (this.queryIndex === null) throw new Error("no query selected");
    return {
      ...this.baseParams(),
      class_index: this.support.classIndex,
      query_index: this.queryIndex,
      patch_size: opts.patchSize,
      reference_value: opts.referenceValue,
    };
  }

  sweepParams(opts: { classes: number[]; stepDegrees: number }): Record<string, unknown> {
    if (this.queryIndex === null) throw new Error("no query selected");
    return {
      ...this.baseParams(),
      query_index: this.queryIndex,
      classes: opts.classes,
      step_degrees: opts.stepDegrees,
    };
  }

  ablationParams(masks: { id: string; mask: unknown }[], referenceValue: number): Record<string, unknown> {
    if (this.queryIndex === null) throw new Error("no query selected");
    return {
      ...this.baseParams(),
      class_index: this.support.classIndex,
      query_index: this.queryIndex,
      masks,
      reference_value: referenceValue,
    };
  }

  adversarialParams(opts: { n: number; seed: number; epsilon: number }): Record<string, unknown> {
    return { ...this.baseParams(), n: opts.n, seed: opts.seed, epsilon: opts.epsilon };
  }

  cached<T>(kind: string, params: Record<string, unknown>): T | undefined {
    return this.cache.get<T>(kind, params);
  }

  store(kind: string, params: Record<string, unknown>, result: unknown): void {
    this.cache.set(kind, params, result);
  }
}
