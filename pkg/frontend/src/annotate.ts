/** Annotation workbench state machine: poll -> render -> choose -> submit ->
 * auto-advance, with a commit gate that opens once every task in the batch
 * has been submitted. Keeps no state the server cannot reconstruct. */

import {
  AnnotationTask,
  BatchCreated,
  CommitAck,
  GatewayApi,
  GatewayError,
  PairInput,
} from './api.js';

export type Phase = 'idle' | 'reviewing' | 'committed';

export interface WorkbenchView {
  phase: Phase;
  /** Current task exactly as served; answer_a renders as "A", answer_b as "B". */
  task: AnnotationTask | null;
  choice: 'A' | 'B' | null;
  submitEnabled: boolean;
  commitEnabled: boolean;
  submittedCount: number;
  totalTasks: number | null;
  notice: string;
  /** Seconds until the next poll while the queue is empty, else null. */
  pollCountdownS: number | null;
  committed: CommitAck | null;
}

export class AnnotateWorkbench {
  private batch: BatchCreated | null = null;
  private task: AnnotationTask | null = null;
  private choice: 'A' | 'B' | null = null;
  private submitted = new Set<string>();
  private notice = '';
  private countdownS: number | null = null;
  private committed: CommitAck | null = null;

  constructor(
    private readonly client: GatewayApi,
    private readonly annotator: string,
    private readonly pollIntervalS = 5,
  ) {}

  async createBatch(pairs: PairInput[], seed = 0): Promise<BatchCreated> {
    const batch = await this.client.createBatch({ pairs, seed });
    this.adoptBatch(batch);
    return batch;
  }

  async createBatchFromBuffer(limit: number, seed = 0): Promise<BatchCreated> {
    const batch = await this.client.createBatch({ from_buffer: limit, seed });
    this.adoptBatch(batch);
    return batch;
  }

  private adoptBatch(batch: BatchCreated): void {
    this.batch = batch;
    this.submitted = new Set();
    this.committed = null;
    this.notice =
      batch.rejected_pairs > 0
        ? `${batch.rejected_pairs} malformed pair(s) rejected by the server`
        : '';
  }

  /** Claim the next open task; an empty queue parks the page in idle. */
  async pollNext(): Promise<void> {
    let page;
    try {
      page = await this.client.nextTask(this.annotator);
    } catch (err) {
      this.notice = `poll failed: ${describe(err)}; retrying`;
      this.task = null;
      this.choice = null;
      this.countdownS = this.pollIntervalS;
      return;
    }
    this.task = page.task;
    this.choice = null;
    this.countdownS = page.task === null ? this.pollIntervalS : null;
  }

  choose(side: 'A' | 'B'): void {
    if (this.task === null) throw new Error('no task on screen');
    this.choice = side;
  }

  /** Submit the current choice, then advance. A claim conflict skips the
   * task with a visible notice; a network failure keeps the choice so the
   * user can retry. */
  async submitChoice(): Promise<void> {
    if (this.task === null || this.choice === null) {
      throw new Error('submit requires a task and a choice');
    }
    const task = this.task;
    try {
      await this.client.submit(task.id, this.choice, this.annotator);
    } catch (err) {
      if (err instanceof GatewayError && err.status === 409) {
        this.notice = `task ${task.id} was claimed elsewhere; skipped`;
        await this.pollNext();
        return;
      }
      this.notice = `submit failed: ${describe(err)}; choice kept, retry`;
      return;
    }
    this.submitted.add(task.id);
    this.notice = '';
    await this.pollNext();
  }

  async commit(): Promise<CommitAck> {
    if (!this.commitEnabled()) {
      throw new Error('commit disabled: unsubmitted tasks remain');
    }
    const batch = this.batch as BatchCreated;
    try {
      this.committed = await this.client.commitBatch(batch.batch_id);
    } catch (err) {
      this.notice = `commit failed: ${describe(err)}`;
      throw err;
    }
    this.task = null;
    this.choice = null;
    this.countdownS = null;
    return this.committed;
  }

  private commitEnabled(): boolean {
    if (this.batch === null || this.committed !== null) return false;
    if (this.batch.task_ids.length === 0) return false;
    return this.batch.task_ids.every((id) => this.submitted.has(id));
  }

  /** One-second tick for the idle countdown; at zero the caller re-polls. */
  tickCountdown(): number | null {
    if (this.countdownS !== null && this.countdownS > 0) this.countdownS -= 1;
    return this.countdownS;
  }

  /** Open tasks left in this session's batch, for the dashboard queue panel. */
  remainingInBatch(): number | null {
    if (this.batch === null) return null;
    if (this.committed !== null) return 0;
    return this.batch.task_ids.length - this.submitted.size;
  }

  view(): WorkbenchView {
    const phase: Phase =
      this.committed !== null ? 'committed' : this.task !== null ? 'reviewing' : 'idle';
    return {
      phase,
      task: this.task,
      choice: this.choice,
      submitEnabled: this.task !== null && this.choice !== null,
      commitEnabled: this.commitEnabled(),
      submittedCount: this.submitted.size,
      totalTasks: this.batch === null ? null : this.batch.task_ids.length,
      notice: this.notice,
      pollCountdownS: phase === 'idle' ? this.countdownS : null,
      committed: this.committed,
    };
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
