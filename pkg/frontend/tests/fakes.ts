import {
  AnnotationTask,
  BatchCreated,
  BufferStats,
  CommitAck,
  GatewayApi,
  GatewayError,
  MetricsPage,
  NextTaskPage,
  PairInput,
  RunSummary,
  SubmitAck,
} from '../src/api.js';

export function makeTask(id: string, over: Partial<AnnotationTask> = {}): AnnotationTask {
  return {
    id,
    batch_id: 'batch-000001',
    pair_index: 0,
    prompt: '1',
    answer_a: 'left',
    answer_b: 'right',
    swapped: false,
    status: 'CLAIMED',
    created_at: 0,
    deadline: null,
    annotator: null,
    chosen: null,
    source_a: null,
    source_b: null,
    ...over,
  };
}

export const EMPTY_STATS: BufferStats = {
  stats: {
    total: 0,
    pending: 0,
    ready: 0,
    consumed: 0,
    skips: 0,
    tasks: 0,
    consumptions: 0,
    max_consumed_cnt: 0,
  },
  task_stats: {},
};

/** Scriptable in-memory stand-in for the gateway; counts every call. */
export class FakeGateway implements GatewayApi {
  calls: Record<string, number> = {};
  queue: AnnotationTask[] = [];
  batch: BatchCreated = { batch_id: 'batch-000001', task_ids: [], rejected_pairs: 0 };
  submitErrors = new Map<string, Error[]>();
  submittedIds = new Set<string>();
  submissions: Array<{ taskId: string; chosen: 'A' | 'B'; annotator: string }> = [];
  runs: RunSummary[] = [];
  metricsPages: MetricsPage[] = [];
  metricsErrors: Error[] = [];
  metricsAfterSteps: number[] = [];
  stats: BufferStats = EMPTY_STATS;

  private count(name: string): void {
    this.calls[name] = (this.calls[name] ?? 0) + 1;
  }

  async listRuns(): Promise<RunSummary[]> {
    this.count('listRuns');
    return this.runs;
  }

  async runMetrics(_runId: string, afterStep = -1): Promise<MetricsPage> {
    this.count('runMetrics');
    this.metricsAfterSteps.push(afterStep);
    const err = this.metricsErrors.shift();
    if (err) throw err;
    const page = this.metricsPages.shift();
    if (page === undefined) throw new Error('no scripted metrics page left');
    return page;
  }

  async bufferStats(): Promise<BufferStats> {
    this.count('bufferStats');
    return this.stats;
  }

  async configSchema(): Promise<Record<string, unknown>> {
    this.count('configSchema');
    return {};
  }

  async createBatch(body: { pairs?: PairInput[] }): Promise<BatchCreated> {
    this.count('createBatch');
    void body;
    return this.batch;
  }

  async nextTask(): Promise<NextTaskPage> {
    this.count('nextTask');
    const task = this.queue.shift() ?? null;
    return { task, timed_out: task === null };
  }

  async submit(taskId: string, chosen: 'A' | 'B', annotator: string): Promise<SubmitAck> {
    this.count('submit');
    const err = this.submitErrors.get(taskId)?.shift();
    if (err) throw err;
    this.submittedIds.add(taskId);
    this.submissions.push({ taskId, chosen, annotator });
    return { task_id: taskId, status: 'SUBMITTED' };
  }

  async commitBatch(batchId: string): Promise<CommitAck> {
    this.count('commitBatch');
    const missing = this.batch.task_ids.filter((id) => !this.submittedIds.has(id));
    if (missing.length > 0) {
      throw new GatewayError(409, `batch has unsubmitted tasks: ${missing.join(', ')}`);
    }
    return {
      batch_id: batchId,
      count: this.batch.task_ids.length,
      record_ids: this.batch.task_ids.map((id) => `rec-${id}`),
    };
  }
}
