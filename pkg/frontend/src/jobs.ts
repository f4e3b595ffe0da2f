// Job submission and polling. Each experiment tab owns one TabRunner, so
// there is at most one job in flight per tab; starting a new run
// supersedes the old one, whose eventual result is ignored on arrival.

import type { JobResult, JobSnapshot } from "./api";

export interface JobClient {
  submitJob(kind: string, params: Record<string, unknown>): Promise<{ id: string }>;
  jobStatus(jobId: string): Promise<JobSnapshot>;
  jobResult<T>(jobId: string): Promise<JobResult<T>>;
}

export class SupersededError extends Error {
  constructor(jobId: string) {
    super(`job ${jobId} superseded by a newer request`);
  }
}

export class JobFailedError extends Error {
  constructor(public jobId: string, detail: string) {
    super(detail);
  }
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export interface TabRunnerOptions {
  intervalMs?: number; // polling cadence, 500 ms unless overridden
  sleep?: (ms: number) => Promise<void>;
}

export class TabRunner {
  private generation = 0;
  private readonly intervalMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  inFlight: string | null = null;

  constructor(private client: JobClient, opts: TabRunnerOptions = {}) {
    this.intervalMs = opts.intervalMs ?? 500;
    this.sleep = opts.sleep ?? defaultSleep;
  }

  get busy(): boolean {
    return this.inFlight !== null;
  }

  async run<T>(
    kind: string,
    params: Record<string, unknown>,
    onProgress?: (p: number) => void,
  ): Promise<T> {
    const gen = ++this.generation;
    const { id } = await this.client.submitJob(kind, params);
    if (gen !== this.generation) throw new SupersededError(id);
    this.inFlight = id;
    try {
      for (;;) {
        const snap = await this.client.jobStatus(id);
        if (gen !== this.generation) throw new SupersededError(id);
        if (onProgress) onProgress(snap.progress);
        if (snap.status === "done") break;
        if (snap.status === "failed") {
          throw new JobFailedError(id, snap.error ?? "job failed");
        }
        await this.sleep(this.intervalMs);
        if (gen !== this.generation) throw new SupersededError(id);
      }
      const res = await this.client.jobResult<T>(id);
      if (gen !== this.generation) throw new SupersededError(id);
      return res.result;
    } finally {
      if (gen === this.generation) this.inFlight = null;
    }
  }
}
