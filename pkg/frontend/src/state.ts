// Client-side store: the project list plus per-project journal buffers.
//
// The store is rebuilt from GET endpoints and SSE replay alone, so a page
// reload reconstructs the identical view. Applying a journal event is the
// only way the rendered status changes.

import type { JournalEvent, Project, ProjectStatus, ResultEntry } from './types.js';

export interface ProjectState {
  project: Project;
  events: JournalEvent[];
  lastEventSequence: number;
  results: ResultEntry[] | null; // null = not fetched yet
  resultsStale: boolean;
}

export interface AppState {
  projects: Map<string, ProjectState>;
  selected: string | null;
  activeTab: string;
}

export function emptyState(): AppState {
  return { projects: new Map(), selected: null, activeTab: 'Details' };
}

export function upsertProject(state: AppState, project: Project): ProjectState {
  const existing = state.projects.get(project.projectId);
  if (existing) {
    existing.project = { ...existing.project, ...project };
    return existing;
  }
  const fresh: ProjectState = {
    project,
    events: [],
    lastEventSequence: project.lastEventSequence ?? 0,
    results: null,
    resultsStale: true,
  };
  state.projects.set(project.projectId, fresh);
  return fresh;
}

const STATUS_NAMES: readonly string[] = [
  'New', 'Cloning', 'Planning', 'Building', 'Ready', 'Running', 'Stopped', 'Failed', 'Deleted',
];

/** Apply one SSE journal event; returns true when something changed. */
export function applyEvent(state: AppState, event: JournalEvent): boolean {
  const entry = state.projects.get(event.projectId);
  if (!entry || event.sequence <= entry.lastEventSequence) {
    return false; // unknown project or replayed duplicate
  }
  entry.lastEventSequence = event.sequence;
  entry.events.push(event);
  if (event.kind === 'Status' && STATUS_NAMES.includes(event.payload)) {
    entry.project.status = event.payload as ProjectStatus;
    if (event.payload !== 'Running') {
      entry.project.publicPath = null;
    } else {
      entry.project.publicPath = `/session/${event.projectId}/`;
    }
  }
  if (event.kind === 'ResultsChanged') {
    entry.resultsStale = true;
  }
  return true;
}

export function setResults(state: AppState, projectId: string, results: ResultEntry[]): void {
  const entry = state.projects.get(projectId);
  if (entry) {
    entry.results = results;
    entry.resultsStale = false;
  }
}

export function selectProject(state: AppState, projectId: string | null): void {
  state.selected = projectId;
  state.activeTab = 'Details';
}

export function selectedProject(state: AppState): ProjectState | null {
  return state.selected ? state.projects.get(state.selected) ?? null : null;
}
