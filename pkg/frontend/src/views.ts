// HTML render functions. Pure string builders over the store so every view
// is testable without a DOM; main.ts owns mounting and event wiring.

import type { ProjectState } from './state.js';
import type { JournalEvent } from './types.js';
import { TABS } from './types.js';
import {
  canArchive,
  canDelete,
  canOpenSession,
  canShare,
  canStart,
  canStop,
  shareDisabledReason,
} from './transitions.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

export function formatBytes(bytes: number): string {
  if (bytes < 1024) return `${bytes} B`;
  const units = ['KiB', 'MiB', 'GiB', 'TiB'];
  let value = bytes;
  let unit = 'B';
  for (const next of units) {
    if (value < 1024) break;
    value /= 1024;
    unit = next;
  }
  return `${value.toFixed(1)} ${unit}`;
}

const BADGE_CLASSES: Record<string, string> = {
  Ready: 'badge-ok',
  Running: 'badge-live',
  Stopped: 'badge-idle',
  Failed: 'badge-error',
  Deleted: 'badge-muted',
};

export function statusBadge(status: string): string {
  const cls = BADGE_CLASSES[status] ?? 'badge-busy';
  return `<span class="badge ${cls}" data-status="${escapeHtml(status)}">${escapeHtml(status)}</span>`;
}

export function renderSidebar(projects: ProjectState[], selected: string | null): string {
  const items = projects
    .filter((p) => p.project.status !== 'Deleted')
    .map((p) => {
      const cls = p.project.projectId === selected ? 'project selected' : 'project';
      return (
        `<li class="${cls}" data-project="${escapeHtml(p.project.projectId)}">` +
        `<span class="name">${escapeHtml(p.project.name)}</span>` +
        statusBadge(p.project.status) +
        `</li>`
      );
    })
    .join('');
  return (
    `<ul class="project-list">${items}</ul>` +
    `<button id="new-project" class="primary">New project</button>`
  );
}

export function renderTabBar(active: string): string {
  const tabs = TABS.map((name) => {
    const cls = name === active ? 'tab active' : 'tab';
    return `<button class="${cls}" data-tab="${name}">${name}</button>`;
  }).join('');
  return `<nav class="tab-bar">${tabs}</nav>`;
}

export function renderDetailsTab(entry: ProjectState): string {
  const p = entry.project;
  const image = p.imageRef ? `${p.imageRef.repository}:${p.imageRef.tag}` : 'not built';
  const cpu = p.resources?.cpuCores ?? 1;
  const memGib = (p.resources?.memoryBytes ?? 2 * 1024 ** 3) / 1024 ** 3;
  const rows = [
    ['Status', statusBadge(p.status)],
    ['Repository', escapeHtml(p.repoUrl)],
    ['Commit', `<code>${escapeHtml(p.commitId?.slice(0, 12) ?? 'n/a')}</code>`],
    ['Image', `<code>${escapeHtml(image)}</code>`],
    ['Environment digest', `<code>${escapeHtml(p.specDigest?.slice(0, 12) ?? 'n/a')}</code>`],
    ['Working copy', p.dirty ? 'uncommitted changes' : 'clean'],
  ];
  if (p.failure) {
    rows.push(['Failure', `<span class="error-text">${escapeHtml(p.failure)}</span>`]);
  }
  const table = rows
    .map(([label, value]) => `<tr><th>${label}</th><td>${value}</td></tr>`)
    .join('');
  return (
    `<table class="details">${table}</table>` +
    `<fieldset class="resources"><legend>Compute resources</legend>` +
    `<label>CPU cores <input id="res-cpu" type="range" min="1" max="8" step="1" value="${cpu}">` +
    `<output>${cpu}</output></label>` +
    `<label>Memory (GiB) <input id="res-mem" type="range" min="1" max="16" step="1" value="${memGib.toFixed(0)}">` +
    `<output>${memGib.toFixed(0)}</output></label>` +
    `<p class="hint">Applied on the next start.</p></fieldset>` +
    `<div class="actions">` +
    `<button id="act-start" ${canStart(p) ? '' : 'disabled '}class="primary">Start</button>` +
    `<button id="act-stop" ${canStop(p) ? '' : 'disabled '}>Stop</button>` +
    `<button id="act-open" ${canOpenSession(p) ? '' : 'disabled '}>Open session</button>` +
    `<button id="act-delete" ${canDelete(p) ? '' : 'disabled '}class="danger">Delete</button>` +
    `</div>`
  );
}

export function renderResultsTab(entry: ProjectState): string {
  if (entry.results === null) {
    return `<p class="hint">Loading results…</p>`;
  }
  if (entry.results.length === 0) {
    return `<p class="hint">No files under results/ yet. Outputs written there appear without relaunching the project.</p>`;
  }
  const rows = entry.results
    .map(
      (r) =>
        `<tr><td><a class="result-link" data-path="${escapeHtml(r.relativePath)}">${escapeHtml(r.relativePath)}</a></td>` +
        `<td>${formatBytes(r.byteSize)}</td><td><code>${escapeHtml(r.contentHash.slice(0, 12))}</code></td></tr>`,
    )
    .join('');
  return `<table class="results"><tr><th>File</th><th>Size</th><th>sha256</th></tr>${rows}</table>`;
}

export function renderUploadTab(entry: ProjectState): string {
  const options = (entry.results ?? [])
    .map((r) => `<option value="${escapeHtml(r.relativePath)}">${escapeHtml(r.relativePath)}</option>`)
    .join('');
  const empty = !options;
  return (
    `<p>Register a result with the research data management system to obtain a permanent identifier.</p>` +
    `<form id="upload-form">` +
    `<label>Result file <select id="upload-path" ${empty ? 'disabled' : ''}>${options}</select></label>` +
    `<label>Description <input id="upload-note" type="text" placeholder="optional metadata"></label>` +
    `<button class="primary" ${empty ? 'disabled' : ''}>Register in RDMS</button>` +
    `</form><div id="upload-outcome"></div>`
  );
}

export function renderMountTab(entry: ProjectState): string {
  const datasets = entry.project.datasets ?? [];
  if (datasets.length === 0) {
    return `<p class="hint">No datasets bound. Add entries to <code>.rrp/datasets.yaml</code> in the project repository; they are mounted read-only under <code>/openbis/&lt;folder&gt;</code> on the next start.</p>`;
  }
  const rows = datasets
    .map(
      (d) =>
        `<tr><td><code>/openbis/${escapeHtml(d.folder)}</code></td>` +
        `<td><code>${escapeHtml(d.permId)}</code></td><td>${escapeHtml(d.server)}</td></tr>`,
    )
    .join('');
  return (
    `<table class="mounts"><tr><th>Mount</th><th>permID</th><th>Server</th></tr>${rows}</table>` +
    `<p class="hint">Mounts are read-only; manifest edits take effect on the next start.</p>`
  );
}

export function renderShareTab(entry: ProjectState): string {
  const p = entry.project;
  const reason = shareDisabledReason(p);
  const disabled = !canShare(p);
  const archiveDisabled = !canArchive(p);
  return (
    `<p>Sharing hands colleagues on this instance an exact clone at the current commit, without rebuilding.</p>` +
    `<button id="act-share" ${disabled ? 'disabled ' : ''}class="primary">Generate shareID</button>` +
    (reason ? `<p class="disabled-reason">${escapeHtml(reason)}</p>` : '') +
    `<div id="share-outcome"></div>` +
    `<hr>` +
    `<form id="open-share-form"><label>Open a shared project ` +
    `<input id="open-share-id" type="text" placeholder="shareID" spellcheck="false"></label>` +
    `<button>Open</button></form>` +
    `<hr>` +
    `<button id="act-archive" ${archiveDisabled ? 'disabled ' : ''}>Archive to RDMS</button>` +
    `<a id="act-bundle" class="button" href="/api/v1/projects/${escapeHtml(p.projectId)}/bundle" download>Download player bundle</a>` +
    `<div id="archive-outcome"></div>`
  );
}

const KIND_BADGES: Record<string, string> = {
  Status: 'log-status',
  BuildLog: 'log-build',
  RunLog: 'log-run',
  ResultsChanged: 'log-results',
  Error: 'log-error',
  Share: 'log-share',
  Upload: 'log-upload',
  Archive: 'log-archive',
};

export function renderLogsTab(events: JournalEvent[]): string {
  const rows = events
    .map(
      (e) =>
        `<tr><td class="seq">${e.sequence}</td>` +
        `<td><span class="kind ${KIND_BADGES[e.kind] ?? ''}">${escapeHtml(e.kind)}</span></td>` +
        `<td class="ts">${escapeHtml(e.timestamp)}</td>` +
        `<td class="payload">${escapeHtml(e.payload)}</td></tr>`,
    )
    .join('');
  return `<table class="logs"><tr><th>#</th><th>Kind</th><th>Time</th><th>Event</th></tr>${rows}</table>`;
}

export function renderTabContent(tab: string, entry: ProjectState): string {
  switch (tab) {
    case 'Details':
      return renderDetailsTab(entry);
    case 'Results':
      return renderResultsTab(entry);
    case 'Upload':
      return renderUploadTab(entry);
    case 'Mount':
      return renderMountTab(entry);
    case 'Share':
      return renderShareTab(entry);
    case 'Logs':
      return renderLogsTab(entry.events);
    default:
      return '';
  }
}

export function renderProjectPane(entry: ProjectState, activeTab: string): string {
  return (
    `<header class="project-header"><h2>${escapeHtml(entry.project.name)}</h2>` +
    statusBadge(entry.project.status) +
    `</header>` +
    renderTabBar(activeTab) +
    `<section class="tab-content">${renderTabContent(activeTab, entry)}</section>`
  );
}

export function renderCreateDialog(error: string | null = null): string {
  return (
    `<dialog id="create-dialog" open><form id="create-form" method="dialog">` +
    `<h2>New project</h2>` +
    `<label>Repository URL <input id="create-repo" type="text" required spellcheck="false" placeholder="https://…/project.git"></label>` +
    `<label>Name <input id="create-name" type="text" placeholder="defaults to the repository name"></label>` +
    `<label>Branch, tag, or commit <input id="create-ref" type="text" placeholder="default branch"></label>` +
    `<label>Credentials <input id="create-credentials" type="password" placeholder="only for private repositories"></label>` +
    (error ? `<p class="inline-error">${escapeHtml(error)}</p>` : '') +
    `<div class="actions"><button class="primary" value="create">Create</button>` +
    `<button value="cancel" formnovalidate>Cancel</button></div>` +
    `</form></dialog>`
  );
}

export function renderLogin(error: string | null = null): string {
  return (
    `<main class="login"><h1>Reproducible research platform</h1>` +
    `<form id="login-form">` +
    `<label>User <input id="login-user" value="rrp-demo"></label>` +
    `<label>Password <input id="login-password" type="password" value="rrp-demo"></label>` +
    (error ? `<p class="inline-error">${escapeHtml(error)}</p>` : '') +
    `<button class="primary">Log in</button>` +
    `</form></main>`
  );
}
