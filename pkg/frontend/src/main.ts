// Bootstrap and DOM wiring. State changes funnel through render(), which
// redraws the sidebar and the selected project pane from the store; SSE
// frames mutate the store and trigger the same path, so nothing in the UI
// depends on anything but GET endpoints plus the event stream.

import { ApiClient, ApiError } from './api.js';
import { ProjectEventStream } from './sse.js';
import {
  applyEvent,
  emptyState,
  selectProject,
  selectedProject,
  setResults,
  upsertProject,
} from './state.js';
import type { JournalEvent, Project } from './types.js';
import { renderCreateDialog, renderLogin, renderProjectPane, renderSidebar } from './views.js';

const api = new ApiClient();
const state = emptyState();
const streams = new Map<string, ProjectEventStream>();

const app = () => document.getElementById('app')!;
const sidebar = () => document.getElementById('sidebar');
const pane = () => document.getElementById('pane');

function watchProject(project: Project): void {
  if (streams.has(project.projectId) || project.status === 'Deleted') return;
  const from = project.lastEventSequence ?? 0;
  streams.set(
    project.projectId,
    new ProjectEventStream(project.projectId, (id, seq) => api.eventsUrl(id, seq), onJournalEvent, from),
  );
}

function onJournalEvent(event: JournalEvent): void {
  const before = state.projects.get(event.projectId)?.project.status;
  if (!applyEvent(state, event)) return;
  const entry = state.projects.get(event.projectId)!;
  if (event.kind === 'Status' && before !== entry.project.status) {
    // pull the authoritative detail (dirty flag, image ref) on transitions
    void refreshDetail(event.projectId);
  }
  if (event.kind === 'ResultsChanged' && state.selected === event.projectId) {
    void refreshResults(event.projectId);
  }
  render();
}

async function refreshDetail(projectId: string): Promise<void> {
  try {
    upsertProject(state, await api.getProject(projectId));
    render();
  } catch {
    /* project may be gone; the next list reload settles it */
  }
}

async function refreshResults(projectId: string): Promise<void> {
  try {
    setResults(state, projectId, await api.listResults(projectId));
    render();
  } catch {
    /* deleted or unauthorized; nothing to show */
  }
}

async function reloadProjects(): Promise<void> {
  const projects = await api.listProjects();
  for (const project of projects) {
    upsertProject(state, project);
    watchProject(project);
  }
  render();
}

function render(): void {
  const side = sidebar();
  const main = pane();
  if (!side || !main) return;
  side.innerHTML = renderSidebar([...state.projects.values()], state.selected);
  const entry = selectedProject(state);
  main.innerHTML = entry
    ? renderProjectPane(entry, state.activeTab)
    : '<p class="hint">Select a project or create one.</p>';
  wire();
}

function onApiError(err: unknown, slot?: HTMLElement | null): void {
  const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  if (err instanceof ApiError && err.status === 401) {
    api.logout();
    showLogin('Session expired; log in again.');
    return;
  }
  if (slot) {
    slot.innerHTML = `<p class="inline-error">${message.replace(/</g, '&lt;')}</p>`;
  } else {
    console.error(message);
  }
}

function wire(): void {
  document.querySelectorAll<HTMLElement>('.project').forEach((el) => {
    el.onclick = () => {
      selectProject(state, el.dataset.project ?? null);
      const entry = selectedProject(state);
      if (entry) {
        void refreshDetail(entry.project.projectId);
        void refreshResults(entry.project.projectId);
      }
      render();
    };
  });
  const newButton = document.getElementById('new-project');
  if (newButton) newButton.onclick = () => openCreateDialog();

  document.querySelectorAll<HTMLButtonElement>('.tab').forEach((el) => {
    el.onclick = () => {
      state.activeTab = el.dataset.tab ?? 'Details';
      render();
    };
  });

  const entry = selectedProject(state);
  if (!entry) return;
  const id = entry.project.projectId;

  const start = document.getElementById('act-start') as HTMLButtonElement | null;
  if (start)
    start.onclick = async () => {
      const cpu = (document.getElementById('res-cpu') as HTMLInputElement | null)?.valueAsNumber;
      const mem = (document.getElementById('res-mem') as HTMLInputElement | null)?.valueAsNumber;
      try {
        await api.startProject(id, cpu, mem ? mem * 1024 ** 3 : undefined);
        await refreshDetail(id);
      } catch (err) {
        onApiError(err, pane());
      }
    };
  const stop = document.getElementById('act-stop') as HTMLButtonElement | null;
  if (stop)
    stop.onclick = async () => {
      try {
        await api.stopProject(id);
        await refreshDetail(id);
      } catch (err) {
        onApiError(err, pane());
      }
    };
  const open = document.getElementById('act-open') as HTMLButtonElement | null;
  if (open) open.onclick = () => window.open(api.sessionUrl(id), '_blank');
  const del = document.getElementById('act-delete') as HTMLButtonElement | null;
  if (del)
    del.onclick = async () => {
      try {
        await api.deleteProject(id);
        streams.get(id)?.close();
        streams.delete(id);
        selectProject(state, null);
        await reloadProjects();
      } catch (err) {
        onApiError(err, pane());
      }
    };

  document.querySelectorAll<HTMLAnchorElement>('.result-link').forEach((el) => {
    el.onclick = () => window.open(api.resultUrl(id, el.dataset.path ?? ''), '_blank');
  });

  const uploadForm = document.getElementById('upload-form') as HTMLFormElement | null;
  if (uploadForm)
    uploadForm.onsubmit = async (ev) => {
      ev.preventDefault();
      const path = (document.getElementById('upload-path') as HTMLSelectElement).value;
      const note = (document.getElementById('upload-note') as HTMLInputElement).value;
      const outcome = document.getElementById('upload-outcome');
      try {
        const { permId } = await api.uploadResult(id, path, note ? { description: note } : {});
        if (outcome) outcome.innerHTML = `<p class="ok">Registered as <code>${permId}</code></p>`;
      } catch (err) {
        onApiError(err, outcome);
      }
    };

  const share = document.getElementById('act-share') as HTMLButtonElement | null;
  if (share)
    share.onclick = async () => {
      const outcome = document.getElementById('share-outcome');
      try {
        const record = await api.createShare(id);
        if (outcome)
          outcome.innerHTML =
            `<p class="ok">shareID <code id="share-id">${record.shareId}</code> ` +
            `<button id="copy-share">Copy</button></p>`;
        const copy = document.getElementById('copy-share');
        if (copy) copy.onclick = () => void navigator.clipboard.writeText(record.shareId);
      } catch (err) {
        onApiError(err, outcome);
      }
    };

  const openShareForm = document.getElementById('open-share-form') as HTMLFormElement | null;
  if (openShareForm)
    openShareForm.onsubmit = async (ev) => {
      ev.preventDefault();
      const shareId = (document.getElementById('open-share-id') as HTMLInputElement).value.trim();
      if (!shareId) return;
      try {
        const project = await api.openShare(shareId);
        upsertProject(state, project);
        watchProject(project);
        selectProject(state, project.projectId);
        render();
      } catch (err) {
        onApiError(err, document.getElementById('share-outcome'));
      }
    };

  const archive = document.getElementById('act-archive') as HTMLButtonElement | null;
  if (archive)
    archive.onclick = async () => {
      const outcome = document.getElementById('archive-outcome');
      try {
        const { permId } = await api.archiveProject(id);
        if (outcome) outcome.innerHTML = `<p class="ok">Archived as <code>${permId}</code></p>`;
      } catch (err) {
        onApiError(err, outcome);
      }
    };
  const bundleLink = document.getElementById('act-bundle') as HTMLAnchorElement | null;
  if (bundleLink) bundleLink.href = `/api/v1/projects/${id}/bundle?${api.tokenQuery()}`;
}

function openCreateDialog(error: string | null = null): void {
  document.getElementById('create-dialog')?.remove();
  document.body.insertAdjacentHTML('beforeend', renderCreateDialog(error));
  const form = document.getElementById('create-form') as HTMLFormElement;
  form.onsubmit = async (ev) => {
    ev.preventDefault();
    const submitter = (ev as SubmitEvent).submitter as HTMLButtonElement | null;
    if (submitter?.value === 'cancel') {
      document.getElementById('create-dialog')?.remove();
      return;
    }
    const repo = (document.getElementById('create-repo') as HTMLInputElement).value.trim();
    const name = (document.getElementById('create-name') as HTMLInputElement).value.trim();
    const ref = (document.getElementById('create-ref') as HTMLInputElement).value.trim();
    const credentials = (document.getElementById('create-credentials') as HTMLInputElement).value;
    if (!repo) return; // required attribute also blocks this client-side
    try {
      const project = await api.createProject(
        repo,
        name || repo.split('/').pop()?.replace(/\.git$/, '') || 'project',
        ref || undefined,
        credentials || undefined,
      );
      document.getElementById('create-dialog')?.remove();
      upsertProject(state, project);
      watchProject(project);
      // land on the Logs tab so the build log streams in immediately
      selectProject(state, project.projectId);
      state.activeTab = 'Logs';
      render();
    } catch (err) {
      if (err instanceof ApiError) {
        openCreateDialog(`${err.code}: ${err.message}`);
      } else {
        openCreateDialog(String(err));
      }
    }
  };
}

function showLogin(error: string | null = null): void {
  for (const stream of streams.values()) stream.close();
  streams.clear();
  app().innerHTML = renderLogin(error);
  const form = document.getElementById('login-form') as HTMLFormElement;
  form.onsubmit = async (ev) => {
    ev.preventDefault();
    const user = (document.getElementById('login-user') as HTMLInputElement).value;
    const password = (document.getElementById('login-password') as HTMLInputElement).value;
    try {
      await api.login(user, password);
      showConsole();
    } catch (err) {
      showLogin(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    }
  };
}

function showConsole(): void {
  app().innerHTML = `<aside id="sidebar"></aside><main id="pane"></main>`;
  void reloadProjects().catch((err) => onApiError(err));
}

window.addEventListener('DOMContentLoaded', () => {
  if (api.authenticated) {
    showConsole();
  } else {
    showLogin();
  }
});
