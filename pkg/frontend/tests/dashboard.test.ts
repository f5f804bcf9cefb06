import { describe, expect, it } from 'vitest';

import { GatewayError, MetricRow } from '../src/api.js';
import {
  Dashboard,
  bufferPanel,
  lastStep,
  mergeRows,
  metricSeries,
  polylinePoints,
} from '../src/dashboard.js';
import { EMPTY_STATS, FakeGateway } from './fakes.js';

function row(step: number, over: Partial<MetricRow> = {}): MetricRow {
  return {
    step,
    mode: 'both',
    loss: 1.0 / (step + 1),
    mean_reward: step * 0.1,
    baseline: 0.0,
    kl_estimate: 0.0,
    staleness: step % 3,
    wall_ms: step + 1,
    ...over,
  };
}

describe('metric transforms', () => {
  it('plots exactly one point per served row', () => {
    const rows = Array.from({ length: 100 }, (_, i) => row(i));
    for (const key of ['loss', 'mean_reward', 'staleness'] as const) {
      const series = metricSeries(rows, key);
      expect(series.length).toBe(100);
      expect(series.map((p) => p.x)).toEqual(rows.map((r) => r.step));
    }
    expect(metricSeries(rows, 'staleness')[5]).toEqual({ x: 5, y: 2 });
  });

  it('renders nothing for a fresh run', () => {
    expect(metricSeries([], 'loss')).toEqual([]);
    expect(polylinePoints([], 360, 120)).toBe('');
  });

  it('maps points into the padded viewport with a flipped y axis', () => {
    const points = [
      { x: 0, y: 0 },
      { x: 1, y: 2 },
    ];
    expect(polylinePoints(points, 360, 120, 4)).toBe('4,116 356,4');
    expect(polylinePoints([{ x: 3, y: 7 }], 360, 120)).toBe('180,60');
    expect(polylinePoints([{ x: 0, y: 5 }, { x: 2, y: 5 }], 360, 120, 4)).toBe('4,60 356,60');
  });

  it('merges fresh rows without duplicating steps', () => {
    const merged = mergeRows([row(0), row(1)], [row(1), row(2)]);
    expect(merged.map((r) => r.step)).toEqual([0, 1, 2]);
    expect(lastStep(merged)).toBe(2);
    expect(lastStep([])).toBe(-1);
  });

  it('maps buffer stats onto the panel counts', () => {
    const stats = {
      ...EMPTY_STATS,
      stats: { ...EMPTY_STATS.stats, total: 7, pending: 1, ready: 2, consumed: 4 },
    };
    expect(bufferPanel(stats)).toEqual({ pending: 1, ready: 2, consumed: 4, total: 7 });
  });
});

describe('Dashboard', () => {
  it('polls past the last seen step and appends the new rows', async () => {
    const gateway = new FakeGateway();
    gateway.metricsPages = [
      { run_id: 'r1', rows: [row(0), row(1)] },
      { run_id: 'r1', rows: [row(2)] },
      { run_id: 'r1', rows: [] },
    ];
    const dash = new Dashboard(gateway);
    dash.selectRun('r1');
    await dash.tick();
    await dash.tick();
    await dash.tick();
    expect(gateway.metricsAfterSteps).toEqual([-1, 1, 2]);
    const view = dash.view();
    expect(view.rows.map((r) => r.step)).toEqual([0, 1, 2]);
    expect(view.series.loss.length).toBe(3);
    expect(view.series.mean_reward.length).toBe(3);
    expect(view.series.staleness.length).toBe(3);
  });

  it('raises the not-found banner and keeps the rows it has', async () => {
    const gateway = new FakeGateway();
    gateway.metricsPages = [{ run_id: 'r1', rows: [row(0)] }];
    const dash = new Dashboard(gateway);
    dash.selectRun('r1');
    await dash.tick();
    gateway.metricsErrors = [new GatewayError(404, "unknown run 'r1'")];
    await dash.tick();
    const view = dash.view();
    expect(view.notFound).toBe(true);
    expect(view.rows.length).toBe(1);
    const callsAfter404 = gateway.calls.runMetrics;
    await dash.tick();
    expect(gateway.calls.runMetrics).toBe(callsAfter404);
  });

  it('keeps a fetch failure visible without dropping state', async () => {
    const gateway = new FakeGateway();
    gateway.metricsPages = [{ run_id: 'r1', rows: [row(0)] }];
    const dash = new Dashboard(gateway);
    dash.selectRun('r1');
    await dash.tick();
    gateway.metricsErrors = [new TypeError('fetch failed')];
    await dash.tick();
    const view = dash.view();
    expect(view.notice).toContain('metrics fetch failed');
    expect(view.notFound).toBe(false);
    expect(view.rows.length).toBe(1);
  });

  it('never issues a mutating call while refreshing', async () => {
    const gateway = new FakeGateway();
    gateway.runs = [
      { run_id: 'r1', mode: 'both', steps: 1, final_version: 1, status: 'completed', reason: '' },
    ];
    gateway.metricsPages = [
      { run_id: 'r1', rows: [row(0)] },
      { run_id: 'r1', rows: [] },
      { run_id: 'r1', rows: [] },
    ];
    const dash = new Dashboard(gateway);
    await dash.refreshRuns();
    dash.selectRun('r1');
    for (let i = 0; i < 3; i += 1) await dash.tick();
    expect(gateway.calls.createBatch ?? 0).toBe(0);
    expect(gateway.calls.submit ?? 0).toBe(0);
    expect(gateway.calls.commitBatch ?? 0).toBe(0);
    expect(gateway.calls.nextTask ?? 0).toBe(0);
    expect(gateway.calls.bufferStats).toBe(3);
    expect(dash.view().runs).toEqual(['r1']);
  });

  it('shows the workbench queue depth when one is set', () => {
    const dash = new Dashboard(new FakeGateway());
    expect(dash.view().queueDepth).toBeNull();
    dash.setQueueDepth(4);
    expect(dash.view().queueDepth).toBe(4);
    dash.setQueueDepth(null);
    expect(dash.view().queueDepth).toBeNull();
  });
});
