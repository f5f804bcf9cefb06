/** Typed client for the triad gateway HTTP API. */

export interface RunSummary {
  run_id: string;
  mode: string;
  steps: number;
  final_version: number;
  status: string;
  reason: string;
}

export interface MetricRow {
  step: number;
  mode: string;
  loss: number;
  mean_reward: number;
  baseline: number;
  kl_estimate: number;
  staleness: number;
  wall_ms: number;
}

export interface MetricsPage {
  run_id: string;
  rows: MetricRow[];
}

export interface BufferCounts {
  total: number;
  pending: number;
  ready: number;
  consumed: number;
  skips: number;
  tasks: number;
  consumptions: number;
  max_consumed_cnt: number;
}

export interface BufferStats {
  stats: BufferCounts;
  task_stats: Record<string, Record<string, number>>;
}

export interface AnnotationTask {
  id: string;
  batch_id: string;
  pair_index: number;
  prompt: string;
  answer_a: string;
  answer_b: string;
  swapped: boolean;
  status: string;
  created_at: number;
  deadline: number | null;
  annotator: string | null;
  chosen: string | null;
  source_a: string | null;
  source_b: string | null;
}

export interface NextTaskPage {
  task: AnnotationTask | null;
  timed_out: boolean;
}

export interface PairInput {
  prompt: string;
  response_a: string;
  response_b: string;
  source_a?: string;
  source_b?: string;
}

export interface BatchCreated {
  batch_id: string;
  task_ids: string[];
  rejected_pairs: number;
}

export interface SubmitAck {
  task_id: string;
  status: string;
}

export interface CommitAck {
  batch_id: string;
  count: number;
  record_ids: string[];
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** The documented gateway surface; the pages depend on nothing beyond it. */
export interface GatewayApi {
  listRuns(): Promise<RunSummary[]>;
  runMetrics(runId: string, afterStep?: number): Promise<MetricsPage>;
  bufferStats(): Promise<BufferStats>;
  configSchema(): Promise<Record<string, unknown>>;
  createBatch(body: {
    pairs?: PairInput[];
    from_buffer?: number;
    seed?: number;
    annotators_per_task?: number;
  }): Promise<BatchCreated>;
  nextTask(annotator: string, wait?: boolean, timeoutS?: number): Promise<NextTaskPage>;
  submit(taskId: string, chosen: 'A' | 'B', annotator: string): Promise<SubmitAck>;
  commitBatch(batchId: string): Promise<CommitAck>;
}

/** HTTP failure with the status code kept so callers can branch on 404/409. */
export class GatewayError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`gateway ${status}: ${detail}`);
    this.name = 'GatewayError';
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new GatewayError(response.status, detail);
}

export class GatewayClient implements GatewayApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`);
    await raiseForStatus(response);
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    await raiseForStatus(response);
    return (await response.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.getJson('/api/runs');
  }

  /** Rows with step > afterStep; pass -1 (default) for the full history. */
  runMetrics(runId: string, afterStep = -1): Promise<MetricsPage> {
    const query = new URLSearchParams({ after_step: String(afterStep) });
    return this.getJson(`/api/runs/${encodeURIComponent(runId)}/metrics?${query}`);
  }

  bufferStats(): Promise<BufferStats> {
    return this.getJson('/api/buffer/stats');
  }

  configSchema(): Promise<Record<string, unknown>> {
    return this.getJson('/api/config/schema');
  }

  createBatch(body: {
    pairs?: PairInput[];
    from_buffer?: number;
    seed?: number;
    annotators_per_task?: number;
  }): Promise<BatchCreated> {
    return this.postJson('/api/annotations/batches', body);
  }

  /** Claims the oldest open task for this annotator; task is null when idle. */
  nextTask(annotator: string, wait = false, timeoutS = 0): Promise<NextTaskPage> {
    const query = new URLSearchParams({
      annotator,
      wait: String(wait),
      timeout: String(timeoutS),
    });
    return this.getJson(`/api/annotations/next?${query}`);
  }

  submit(taskId: string, chosen: 'A' | 'B', annotator: string): Promise<SubmitAck> {
    return this.postJson(`/api/annotations/${encodeURIComponent(taskId)}/submit`, {
      chosen,
      annotator,
    });
  }

  commitBatch(batchId: string): Promise<CommitAck> {
    return this.postJson(
      `/api/annotations/batches/${encodeURIComponent(batchId)}/commit`,
      {},
    );
  }
}
