/** Run-monitoring dashboard: run selector, metric charts, and buffer counts.
 * Strictly read-only — every refresh issues GETs and plots exactly the
 * points the server returned. */

import {
  BufferStats,
  GatewayApi,
  GatewayError,
  MetricRow,
} from './api.js';

export interface Point {
  x: number;
  y: number;
}

export const CHART_KEYS = ['loss', 'mean_reward', 'staleness'] as const;
export type ChartKey = (typeof CHART_KEYS)[number];

/** One point per served metrics row; no interpolation, no synthesis. */
export function metricSeries(rows: MetricRow[], key: ChartKey): Point[] {
  return rows.map((row) => ({ x: row.step, y: row[key] }));
}

export function lastStep(rows: MetricRow[]): number {
  return rows.length === 0 ? -1 : rows[rows.length - 1].step;
}

/** Append freshly served rows, dropping any step already held. */
export function mergeRows(existing: MetricRow[], fresh: MetricRow[]): MetricRow[] {
  const seen = new Set(existing.map((row) => row.step));
  const merged = existing.slice();
  for (const row of fresh) {
    if (!seen.has(row.step)) {
      merged.push(row);
      seen.add(row.step);
    }
  }
  return merged;
}

/** SVG polyline coordinates for a w x h viewport; "" when there is no data. */
export function polylinePoints(
  points: Point[],
  width: number,
  height: number,
  pad = 4,
): string {
  if (points.length === 0) return '';
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const sx = (x: number) =>
    xMax === xMin ? width / 2 : pad + ((x - xMin) / (xMax - xMin)) * innerW;
  const sy = (y: number) =>
    yMax === yMin ? height / 2 : pad + (1 - (y - yMin) / (yMax - yMin)) * innerH;
  return points.map((p) => `${round2(sx(p.x))},${round2(sy(p.y))}`).join(' ');
}

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

export interface BufferPanel {
  pending: number;
  ready: number;
  consumed: number;
  total: number;
}

export function bufferPanel(stats: BufferStats): BufferPanel {
  return {
    pending: stats.stats.pending,
    ready: stats.stats.ready,
    consumed: stats.stats.consumed,
    total: stats.stats.total,
  };
}

export interface DashboardView {
  runs: string[];
  selected: string | null;
  rows: MetricRow[];
  series: Record<ChartKey, Point[]>;
  buffer: BufferPanel | null;
  /** Open tasks in the workbench's active batch; null when no batch is live. */
  queueDepth: number | null;
  notFound: boolean;
  notice: string;
}

export class Dashboard {
  private runs: string[] = [];
  private selected: string | null = null;
  private rows: MetricRow[] = [];
  private stats: BufferStats | null = null;
  private queueDepth: number | null = null;
  private notFound = false;
  private notice = '';

  constructor(private readonly client: GatewayApi) {}

  async refreshRuns(): Promise<void> {
    this.runs = (await this.client.listRuns()).map((r) => r.run_id);
  }

  selectRun(runId: string | null): void {
    this.selected = runId;
    this.rows = [];
    this.notFound = false;
    this.notice = '';
  }

  /** Queue depth comes from the annotate page's live session; the server
   * holds the authoritative counts in its event log. */
  setQueueDepth(depth: number | null): void {
    this.queueDepth = depth;
  }

  /** One poll cycle: fetch new metric rows past the cursor plus buffer
   * stats. Issues only GETs; a vanished run raises the not-found banner. */
  async tick(): Promise<void> {
    if (this.selected !== null && !this.notFound) {
      try {
        const page = await this.client.runMetrics(this.selected, lastStep(this.rows));
        this.rows = mergeRows(this.rows, page.rows);
        this.notice = '';
      } catch (err) {
        if (err instanceof GatewayError && err.status === 404) {
          this.notFound = true;
        } else {
          this.notice = `metrics fetch failed: ${describe(err)}`;
        }
      }
    }
    try {
      this.stats = await this.client.bufferStats();
    } catch (err) {
      this.notice = `buffer stats fetch failed: ${describe(err)}`;
    }
  }

  view(): DashboardView {
    return {
      runs: this.runs.slice(),
      selected: this.selected,
      rows: this.rows.slice(),
      series: {
        loss: metricSeries(this.rows, 'loss'),
        mean_reward: metricSeries(this.rows, 'mean_reward'),
        staleness: metricSeries(this.rows, 'staleness'),
      },
      buffer: this.stats === null ? null : bufferPanel(this.stats),
      queueDepth: this.queueDepth,
      notFound: this.notFound,
      notice: this.notice,
    };
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
