// Payload shapes for the platform REST/SSE surface.

export type ProjectStatus =
  | 'New'
  | 'Cloning'
  | 'Planning'
  | 'Building'
  | 'Ready'
  | 'Running'
  | 'Stopped'
  | 'Failed'
  | 'Deleted';

export interface ImageRef {
  repository: string;
  tag: string;
}

export interface Resources {
  cpuCores: number;
  memoryBytes: number;
}

export interface Project {
  projectId: string;
  name: string;
  owner: string;
  status: ProjectStatus;
  createdAt: string;
  failure: string | null;
  imageRef: ImageRef | null;
  resources: Resources | null;
  specDigest: string | null;
  commitId: string | null;
  repoUrl: string;
  publicPath: string | null;
  remoteImage: string | null;
  // detail endpoint only
  dirty?: boolean;
  datasets?: DatasetBinding[];
  lastEventSequence?: number;
}

export interface DatasetBinding {
  server: string;
  permId: string;
  folder: string;
}

export interface ResultEntry {
  relativePath: string;
  byteSize: number;
  modifiedAt: string;
  contentHash: string;
}

export interface ShareRecord {
  shareId: string;
  sourceProjectId: string;
  commitId: string;
  specDigest: string;
  imageRef: ImageRef;
  createdAt: string;
}

export type EventKind =
  | 'Status'
  | 'BuildLog'
  | 'RunLog'
  | 'ResultsChanged'
  | 'Error'
  | 'Share'
  | 'Upload'
  | 'Archive';

export interface JournalEvent {
  projectId: string;
  sequence: number;
  timestamp: string;
  kind: EventKind;
  payload: string;
}

export type TabName = 'Details' | 'Results' | 'Upload' | 'Mount' | 'Share' | 'Logs';

// Names and order are fixed.
export const TABS: readonly TabName[] = ['Details', 'Results', 'Upload', 'Mount', 'Share', 'Logs'];
