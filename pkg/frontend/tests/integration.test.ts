/** End-to-end flows against a real gateway process: a finished run feeds the
 * dashboard, the workbench annotates and commits a 10-pair batch, and a
 * train-only run consumes the committed preferences. Needs python3 with the
 * backend package installed. */

import { ChildProcess, execFile as execFileCb, spawn } from 'node:child_process';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';
import { promisify } from 'node:util';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { GatewayClient, PairInput } from '../src/api.js';
import { AnnotateWorkbench } from '../src/annotate.js';
import { Dashboard, metricSeries } from '../src/dashboard.js';

const execFile = promisify(execFileCb);
const PYTHON = process.env.PYTHON ?? 'python3';
const PORT = 18100 + (process.pid % 1000);
const LN2 = Math.log(2);
const LONG = 120_000;

let dir: string;
let dataDir: string;
let server: ChildProcess | null = null;
let serverErr = '';
let client: GatewayClient;

function writeYaml(name: string, config: unknown): string {
  // JSON is valid YAML, so configs can be written without a YAML encoder.
  const file = path.join(dir, name);
  fs.writeFileSync(file, JSON.stringify(config));
  return file;
}

function writeTasks(name: string, questions: string[]): string {
  const lines = questions.map((question, i) =>
    JSON.stringify({
      task_key: 901 + i,
      raw: { question, answer: '', reward_fn: 'scaled_first_token' },
      workflow_name: 'example_workflow',
      rollout_args: { repeat_times: 2, temperature: 1.0, max_new_tokens: 1 },
      is_eval: false,
    }),
  );
  const file = path.join(dir, name);
  fs.writeFileSync(file, lines.join('\n') + '\n');
  return file;
}

async function cliRun(configPath: string): Promise<void> {
  await execFile(PYTHON, ['-m', 'triad.cli', 'run', '--config', configPath]);
}

async function waitForGateway(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt += 1) {
    try {
      await client.configSchema();
      return;
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 100));
    }
  }
  throw new Error(`gateway never came up on port ${PORT}\n${serverErr}`);
}

beforeAll(async () => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), 'studio-ui-'));
  dataDir = path.join(dir, 'data');
  const tasks = writeTasks('tasks.jsonl', ['1', '2']);
  const bothCfg = writeYaml('run-both.yaml', {
    mode: 'both',
    data_dir: dataDir,
    run_id: 'ui-run',
    seed: 0,
    total_steps: 3,
    batch_size: 2,
    group_size: 2,
    num_buckets: 16,
    task_paths: [tasks],
    algorithm: { variant: 'OPMD_SIMPLE', tau: 0.0, learning_rate: 0.5 },
  });
  await cliRun(bothCfg);

  const serveCfg = writeYaml('serve.yaml', { data_dir: dataDir });
  server = spawn(
    PYTHON,
    ['-m', 'triad.cli', 'serve', '--config', serveCfg, '--port', String(PORT)],
    { stdio: ['ignore', 'ignore', 'pipe'] },
  );
  server.stderr!.on('data', (chunk) => {
    serverErr += String(chunk);
  });
  client = new GatewayClient(`http://127.0.0.1:${PORT}`);
  await waitForGateway();
}, LONG);

afterAll(() => {
  if (server !== null) server.kill('SIGTERM');
  fs.rmSync(dir, { recursive: true, force: true });
});

describe('studio-ui against a live gateway', () => {
  it(
    'serves the finished run with one chart point per metric line',
    async () => {
      const runs = await client.listRuns();
      expect(runs.map((r) => r.run_id)).toContain('ui-run');
      const page = await client.runMetrics('ui-run');
      expect(page.rows.map((r) => r.step)).toEqual([0, 1, 2]);
      for (const key of ['loss', 'mean_reward', 'staleness'] as const) {
        expect(metricSeries(page.rows, key).length).toBe(page.rows.length);
      }
    },
    LONG,
  );

  it(
    'reports buffer counts that match the inspect-buffer CLI',
    async () => {
      const { stats } = await client.bufferStats();
      const { stdout } = await execFile(PYTHON, ['-m', 'triad.cli', 'inspect-buffer'], {
        env: { ...process.env, TRIAD_DATA_DIR: dataDir },
      });
      const cli: Record<string, number> = {};
      for (const line of stdout.split('\n')) {
        const match = /^([a-z_]+)=(\d+)$/.exec(line.trim());
        if (match) cli[match[1]] = Number(match[2]);
      }
      expect(Object.keys(cli).length).toBeGreaterThan(0);
      for (const [key, value] of Object.entries(cli)) {
        expect(stats[key as keyof typeof stats]).toBe(value);
      }
      expect(stats.total).toBeGreaterThan(0);
    },
    LONG,
  );

  it(
    'annotates and commits a 10-pair batch through the workbench',
    async () => {
      const pairs: PairInput[] = Array.from({ length: 10 }, (_, i) => ({
        prompt: String((i % 7) + 1),
        response_a: '6 2',
        response_b: '3',
      }));
      const bench = new AnnotateWorkbench(client, 'human', 1);
      const batch = await bench.createBatch(pairs, 7);
      expect(batch.task_ids.length).toBe(10);
      expect(batch.rejected_pairs).toBe(0);

      const seenSwapped = new Set<boolean>();
      await bench.pollNext();
      while (bench.view().task !== null) {
        const task = bench.view().task!;
        seenSwapped.add(task.swapped);
        // The human prefers "6 2"; pick whichever displayed side holds it.
        bench.choose(task.answer_a === '6 2' ? 'A' : 'B');
        await bench.submitChoice();
      }
      expect(seenSwapped).toEqual(new Set([true, false]));
      expect(bench.view().submittedCount).toBe(10);
      expect(bench.view().commitEnabled).toBe(true);
      const ack = await bench.commit();
      expect(ack.count).toBe(10);
      expect(ack.record_ids.length).toBe(10);

      // Round-trip oracle: the stored pairs must hold the underlying
      // preferred response no matter how the display sides were swapped.
      const events = fs
        .readFileSync(path.join(dataDir, 'dpo.jsonl'), 'utf-8')
        .trim()
        .split('\n')
        .map((line) => JSON.parse(line));
      const recs = events.filter((e) => e.kind === 'rec');
      expect(recs.length).toBe(10);
      for (const rec of recs) {
        expect(rec.chosen).toBe('6 2');
        expect(rec.rejected).toBe('3');
      }
    },
    LONG,
  );

  it(
    'training on the committed preferences descends below ln 2',
    async () => {
      const dpoCfg = writeYaml('run-dpo.yaml', {
        mode: 'train',
        data_dir: dataDir,
        run_id: 'ui-dpo',
        total_steps: 10,
        batch_size: 10,
        algorithm: { variant: 'DPO', dpo_beta: 0.5, learning_rate: 1.0 },
      });
      await cliRun(dpoCfg);
      const page = await client.runMetrics('ui-dpo');
      expect(page.rows.length).toBe(10);
      expect(Math.abs(page.rows[0].loss - LN2)).toBeLessThan(1e-9);
      expect(page.rows[page.rows.length - 1].loss).toBeLessThan(LN2);
    },
    LONG,
  );

  it(
    'dashboard mirrors the live server state read-only',
    async () => {
      const dash = new Dashboard(client);
      await dash.refreshRuns();
      expect(dash.view().runs).toContain('ui-run');
      expect(dash.view().runs).toContain('ui-dpo');
      dash.selectRun('ui-dpo');
      await dash.tick();
      await dash.tick();
      const view = dash.view();
      expect(view.rows.length).toBe(10);
      expect(view.series.loss.length).toBe(10);
      expect(view.buffer).not.toBeNull();
      expect(view.buffer!.total).toBeGreaterThan(0);
      expect(view.notFound).toBe(false);

      dash.selectRun('no-such-run');
      await dash.tick();
      expect(dash.view().notFound).toBe(true);
    },
    LONG,
  );
});
