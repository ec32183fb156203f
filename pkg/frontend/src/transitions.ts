// Mirror of the orchestrator's transition table. Control enablement derives
// from this table so the UI can never attempt an illegal transition.

import type { Project, ProjectStatus } from './types.js';

export const TRANSITIONS: Record<ProjectStatus, readonly ProjectStatus[]> = {
  New: ['Cloning'],
  Cloning: ['Planning', 'Failed'],
  Planning: ['Building', 'Failed'],
  Building: ['Ready', 'Failed'],
  Ready: ['Running', 'Deleted'],
  Running: ['Stopped'],
  Stopped: ['Running', 'Deleted'],
  Failed: ['Deleted'],
  Deleted: [],
};

export function canTransition(from: ProjectStatus, to: ProjectStatus): boolean {
  return TRANSITIONS[from].includes(to);
}

export const canStart = (p: Project) => canTransition(p.status, 'Running');
export const canStop = (p: Project) => canTransition(p.status, 'Stopped');
export const canDelete = (p: Project) => canTransition(p.status, 'Deleted');
export const canOpenSession = (p: Project) => p.status === 'Running';

// Sharing, archiving, and bundle export additionally demand a clean
// repository; when the dirty flag is unknown the control stays enabled and
// the server remains the authority.
const SHAREABLE: readonly ProjectStatus[] = ['Ready', 'Running', 'Stopped'];
const ARCHIVABLE: readonly ProjectStatus[] = ['Ready', 'Stopped'];

export function canShare(p: Project): boolean {
  return SHAREABLE.includes(p.status) && p.dirty !== true;
}

export function canArchive(p: Project): boolean {
  return ARCHIVABLE.includes(p.status) && p.dirty !== true;
}

export function shareDisabledReason(p: Project): string | null {
  if (p.dirty === true) {
    return 'The repository has uncommitted changes; commit them before sharing.';
  }
  if (!SHAREABLE.includes(p.status)) {
    return `A project cannot be shared while ${p.status}.`;
  }
  return null;
}
