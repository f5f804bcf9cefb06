/** Browser wiring: two pages (annotate, dashboard) over the gateway API.
 * All state lives in the workbench/dashboard objects; this file only
 * renders their views and forwards DOM events. */

import { AnnotateWorkbench } from './annotate.js';
import { CHART_KEYS, Dashboard, polylinePoints } from './dashboard.js';
import { GatewayClient } from './api.js';

const client = new GatewayClient('');
const annotatorInput = byId<HTMLInputElement>('annotator');
let workbench = new AnnotateWorkbench(client, annotatorInput.value || 'studio');
const dashboard = new Dashboard(client);

function byId<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function setText(id: string, text: string): void {
  byId(id).textContent = text;
}

// --- annotate page ---------------------------------------------------------

function renderAnnotate(): void {
  const view = workbench.view();
  byId('task-card').hidden = view.task === null;
  byId('idle-card').hidden = view.phase !== 'idle';
  byId('committed-card').hidden = view.phase !== 'committed';
  if (view.task !== null) {
    setText('task-id', view.task.id);
    setText('prompt', view.task.prompt);
    setText('answer-a', view.task.answer_a);
    setText('answer-b', view.task.answer_b);
    (byId<HTMLInputElement>('choose-a')).checked = view.choice === 'A';
    (byId<HTMLInputElement>('choose-b')).checked = view.choice === 'B';
  }
  (byId<HTMLButtonElement>('submit')).disabled = !view.submitEnabled;
  (byId<HTMLButtonElement>('commit')).disabled = !view.commitEnabled;
  const total = view.totalTasks === null ? '?' : String(view.totalTasks);
  setText('progress', `${view.submittedCount} / ${total} submitted`);
  setText('notice', view.notice);
  setText(
    'countdown',
    view.pollCountdownS === null ? '' : `queue empty; next poll in ${view.pollCountdownS}s`,
  );
  if (view.committed !== null) {
    setText('committed-info', `committed ${view.committed.count} preference record(s)`);
  }
  dashboard.setQueueDepth(workbench.remainingInBatch());
}

byId('choose-a').addEventListener('change', () => {
  workbench.choose('A');
  renderAnnotate();
});
byId('choose-b').addEventListener('change', () => {
  workbench.choose('B');
  renderAnnotate();
});
byId('submit').addEventListener('click', async () => {
  await workbench.submitChoice();
  renderAnnotate();
});
byId('commit').addEventListener('click', async () => {
  try {
    await workbench.commit();
  } catch {
    // notice already set on the workbench
  }
  renderAnnotate();
});
byId('new-batch').addEventListener('click', async () => {
  workbench = new AnnotateWorkbench(client, annotatorInput.value || 'studio');
  const limit = Number(byId<HTMLInputElement>('batch-limit').value) || 10;
  try {
    await workbench.createBatchFromBuffer(limit);
    await workbench.pollNext();
  } catch (err) {
    setText('notice', err instanceof Error ? err.message : String(err));
  }
  renderAnnotate();
});

setInterval(async () => {
  const left = workbench.tickCountdown();
  if (left === 0) await workbench.pollNext();
  renderAnnotate();
}, 1000);

// --- dashboard page --------------------------------------------------------

function renderDashboard(): void {
  const view = dashboard.view();
  const select = byId<HTMLSelectElement>('run-select');
  const current = select.value;
  select.replaceChildren(
    ...view.runs.map((runId) => new Option(runId, runId, false, runId === current)),
  );
  byId('not-found').hidden = !view.notFound;
  setText('dash-notice', view.notice);
  for (const key of CHART_KEYS) {
    const polyline = byId(`chart-${key}`).querySelector('polyline')!;
    polyline.setAttribute('points', polylinePoints(view.series[key], 360, 120));
    setText(`count-${key}`, `${view.series[key].length} point(s)`);
  }
  const buffer = view.buffer;
  setText(
    'buffer-panel',
    buffer === null
      ? 'no buffer stats yet'
      : `pending ${buffer.pending} · ready ${buffer.ready} · consumed ${buffer.consumed} · total ${buffer.total}`,
  );
  setText(
    'queue-depth',
    view.queueDepth === null ? 'no active batch' : `${view.queueDepth} task(s) open`,
  );
}

byId('run-select').addEventListener('change', () => {
  dashboard.selectRun(byId<HTMLSelectElement>('run-select').value || null);
  renderDashboard();
});

setInterval(async () => {
  await dashboard.tick();
  renderDashboard();
}, 2000);

// --- tabs ------------------------------------------------------------------

function showPage(page: 'annotate' | 'dashboard'): void {
  byId('annotate-page').hidden = page !== 'annotate';
  byId('dashboard-page').hidden = page !== 'dashboard';
}

byId('tab-annotate').addEventListener('click', () => showPage('annotate'));
byId('tab-dashboard').addEventListener('click', async () => {
  showPage('dashboard');
  await dashboard.refreshRuns();
  renderDashboard();
});

void (async () => {
  await dashboard.refreshRuns();
  await workbench.pollNext();
  renderAnnotate();
  renderDashboard();
  showPage('annotate');
})();
