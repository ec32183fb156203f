// One server-sent-events connection per visible project. Reconnects with
// the last seen sequence so a drop never duplicates or silently skips
// journal entries.

import type { JournalEvent } from './types.js';

export type FrameHandler = (event: JournalEvent) => void;

const EVENT_TYPES = ['status', 'build-log', 'run-log', 'results-changed', 'error', 'gap'];

export class ProjectEventStream {
  private source: EventSource | null = null;
  private lastSeen: number;
  private closed = false;

  constructor(
    private projectId: string,
    private urlFor: (projectId: string, fromSequence: number) => string,
    private onEvent: FrameHandler,
    fromSequence = 0,
    private reconnectDelayMs = 2000,
  ) {
    this.lastSeen = fromSequence;
    this.connect();
  }

  private connect(): void {
    if (this.closed) return;
    this.source = new EventSource(this.urlFor(this.projectId, this.lastSeen));
    const deliver = (raw: MessageEvent) => {
      const event = JSON.parse(raw.data) as JournalEvent;
      if (typeof event.sequence === 'number') {
        this.lastSeen = Math.max(this.lastSeen, event.sequence);
      }
      this.onEvent(event);
    };
    for (const type of EVENT_TYPES) {
      this.source.addEventListener(type, deliver);
    }
    this.source.onerror = () => {
      this.source?.close();
      this.source = null;
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    };
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
  }
}
