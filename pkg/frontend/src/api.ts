// Thin REST client over the documented endpoint table. The token travels as
// a bearer header; event streams and session tabs get it as a query
// parameter because EventSource and plain navigation cannot set headers.

import type { Project, ResultEntry, ShareRecord } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(private token: string | null = sessionStorage.getItem('rrp-token')) {}

  get authenticated(): boolean {
    return this.token !== null;
  }

  tokenQuery(): string {
    return this.token ? `token=${encodeURIComponent(this.token)}` : '';
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) headers['Authorization'] = `Bearer ${this.token}`;
    if (body !== undefined) headers['Content-Type'] = 'application/json';
    const resp = await fetch(`/api/v1${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const doc = text ? JSON.parse(text) : {};
    if (!resp.ok) {
      throw new ApiError(resp.status, doc.error ?? 'Error', doc.message ?? resp.statusText);
    }
    return doc as T;
  }

  async login(user: string, password: string): Promise<void> {
    const doc = await this.request<{ token: string }>('POST', '/login', { user, password });
    this.token = doc.token;
    sessionStorage.setItem('rrp-token', doc.token);
  }

  logout(): void {
    this.token = null;
    sessionStorage.removeItem('rrp-token');
  }

  listProjects(): Promise<Project[]> {
    return this.request('GET', '/projects');
  }

  getProject(id: string): Promise<Project> {
    return this.request('GET', `/projects/${id}`);
  }

  createProject(repoUrl: string, name: string, ref?: string, credentials?: string): Promise<Project> {
    return this.request('POST', '/projects', { repoUrl, name, ref: ref || null, credentials: credentials || null });
  }

  startProject(id: string, cpuCores?: number, memoryBytes?: number): Promise<{ publicPath: string }> {
    const body: Record<string, number> = {};
    if (cpuCores !== undefined) body.cpuCores = cpuCores;
    if (memoryBytes !== undefined) body.memoryBytes = memoryBytes;
    return this.request('POST', `/projects/${id}/start`, body);
  }

  stopProject(id: string): Promise<Project> {
    return this.request('POST', `/projects/${id}/stop`);
  }

  deleteProject(id: string): Promise<Project> {
    return this.request('DELETE', `/projects/${id}`);
  }

  listResults(id: string): Promise<ResultEntry[]> {
    return this.request('GET', `/projects/${id}/results`);
  }

  resultUrl(id: string, path: string): string {
    return `/api/v1/projects/${id}/results/${encodeURIComponent(path)}?${this.tokenQuery()}`;
  }

  uploadResult(id: string, path: string, metadata: Record<string, string>): Promise<{ permId: string }> {
    return this.request('POST', `/projects/${id}/upload`, { path, metadata });
  }

  archiveProject(id: string): Promise<{ permId: string }> {
    return this.request('POST', `/projects/${id}/archive`);
  }

  createShare(id: string): Promise<ShareRecord> {
    return this.request('POST', `/projects/${id}/share`);
  }

  openShare(shareId: string): Promise<Project> {
    return this.request('POST', `/shares/${shareId}/open`);
  }

  eventsUrl(id: string, fromSequence: number): string {
    return `/api/v1/projects/${id}/events?from=${fromSequence}&${this.tokenQuery()}`;
  }

  sessionUrl(id: string): string {
    return `/session/${id}/?${this.tokenQuery()}`;
  }
}
