import { describe, expect, it } from 'vitest';

import { GatewayClient, GatewayError } from '../src/api.js';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function scriptedFetch(responses: Array<Response | Error>) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    const next = responses.shift();
    if (next === undefined) throw new Error('no scripted response left');
    if (next instanceof Error) throw next;
    return next;
  };
  return { calls, fn };
}

describe('GatewayClient', () => {
  it('lists runs from /api/runs', async () => {
    const runs = [{ run_id: 'r1', mode: 'both', steps: 2, final_version: 2, status: 'completed', reason: '' }];
    const { calls, fn } = scriptedFetch([jsonResponse(runs)]);
    const client = new GatewayClient('http://unit', fn);
    expect(await client.listRuns()).toEqual(runs);
    expect(calls[0].url).toBe('http://unit/api/runs');
    expect(calls[0].init).toBeUndefined();
  });

  it('builds the metrics URL with cursor and escaping', async () => {
    const { calls, fn } = scriptedFetch([
      jsonResponse({ run_id: 'run 1', rows: [] }),
      jsonResponse({ run_id: 'r', rows: [] }),
    ]);
    const client = new GatewayClient('', fn);
    await client.runMetrics('run 1', 3);
    expect(calls[0].url).toBe('/api/runs/run%201/metrics?after_step=3');
    await client.runMetrics('r');
    expect(calls[1].url).toBe('/api/runs/r/metrics?after_step=-1');
  });

  it('passes annotator, wait and timeout when claiming a task', async () => {
    const { calls, fn } = scriptedFetch([jsonResponse({ task: null, timed_out: true })]);
    const client = new GatewayClient('', fn);
    const page = await client.nextTask('alice', true, 2.5);
    expect(page.task).toBeNull();
    expect(calls[0].url).toBe('/api/annotations/next?annotator=alice&wait=true&timeout=2.5');
  });

  it('posts JSON bodies for submit and batch creation', async () => {
    const { calls, fn } = scriptedFetch([
      jsonResponse({ task_id: 't1', status: 'SUBMITTED' }),
      jsonResponse({ batch_id: 'batch-000001', task_ids: ['a'], rejected_pairs: 0 }),
      jsonResponse({ batch_id: 'batch-000001', count: 1, record_ids: ['r'] }),
    ]);
    const client = new GatewayClient('', fn);
    await client.submit('t1', 'A', 'alice');
    expect(calls[0].url).toBe('/api/annotations/t1/submit');
    expect(calls[0].init?.method).toBe('POST');
    expect(calls[0].init?.headers).toEqual({ 'content-type': 'application/json' });
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ chosen: 'A', annotator: 'alice' });

    await client.createBatch({ from_buffer: 4, seed: 9 });
    expect(calls[1].url).toBe('/api/annotations/batches');
    expect(JSON.parse(String(calls[1].init?.body))).toEqual({ from_buffer: 4, seed: 9 });

    await client.commitBatch('batch-000001');
    expect(calls[2].url).toBe('/api/annotations/batches/batch-000001/commit');
  });

  it('turns HTTP errors into GatewayError with the server detail', async () => {
    const { fn } = scriptedFetch([jsonResponse({ detail: "unknown run 'x'" }, 404)]);
    const client = new GatewayClient('', fn);
    const err = await client.runMetrics('x').catch((e) => e);
    expect(err).toBeInstanceOf(GatewayError);
    expect(err.status).toBe(404);
    expect(err.message).toContain("unknown run 'x'");
  });

  it('falls back to the status text for non-JSON error bodies', async () => {
    const { fn } = scriptedFetch([
      new Response('boom', { status: 500, statusText: 'Internal Server Error' }),
    ]);
    const client = new GatewayClient('', fn);
    const err = await client.bufferStats().catch((e) => e);
    expect(err).toBeInstanceOf(GatewayError);
    expect(err.status).toBe(500);
    expect(err.message).toContain('Internal Server Error');
  });

  it('propagates network failures unchanged', async () => {
    const { fn } = scriptedFetch([new TypeError('fetch failed')]);
    const client = new GatewayClient('', fn);
    const err = await client.configSchema().catch((e) => e);
    expect(err).toBeInstanceOf(TypeError);
    expect(err).not.toBeInstanceOf(GatewayError);
  });
});
