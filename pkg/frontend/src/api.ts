// Thin typed client for the daproc HTTP API.
//
// The fetch function is injectable so tests can run the console against an
// in-process stub without sockets. Only the small surface the console needs
// from a response is required.

import type {
  ApplyOutcome,
  CommitResult,
  ErrorDoc,
  HistoryEntry,
  RelationView,
  SpaceDoc,
  SpaceSummary,
  SpecDoc,
  StatesDoc,
  Binding,
  Value,
} from './types.js';

export interface HttpResponse {
  status: number;
  json(): Promise<any>;
  text(): Promise<string>;
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<HttpResponse>;

/** Non-2xx answer from the server; carries the decoded error document. */
export class ApiError extends Error {
  status: number;
  body: ErrorDoc;

  constructor(status: number, body: ErrorDoc) {
    super(`${status}: ${body.error ?? 'request failed'}`);
    this.status = status;
    this.body = body;
  }
}

async function decode(r: HttpResponse): Promise<any> {
  if (r.status >= 200 && r.status < 300) return r.json();
  let body: ErrorDoc;
  try {
    body = await r.json();
  } catch {
    body = { error: `HTTP ${r.status}` };
  }
  throw new ApiError(r.status, body);
}

export class Api {
  private base: string;
  private fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, '');
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private get(path: string): Promise<any> {
    return this.fetchFn(this.base + path).then(decode);
  }

  private post(path: string, body: unknown): Promise<HttpResponse> {
    return this.fetchFn(this.base + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  getSpec(): Promise<SpecDoc> {
    return this.get('/spec');
  }

  getStates(): Promise<StatesDoc> {
    return this.get('/states');
  }

  getRelation(state: number, name: string): Promise<RelationView> {
    return this.get(`/states/${state}/relations/${encodeURIComponent(name)}`);
  }

  getEnabled(): Promise<string[]> {
    return this.get('/actions/enabled');
  }

  getBindings(action: string): Promise<Binding[]> {
    return this.get(`/actions/${encodeURIComponent(action)}/bindings`);
  }

  /** Apply a binding; resolves to either a direct commit or an open ticket. */
  async apply(action: string, bindingId: number): Promise<ApplyOutcome> {
    const r = await this.post(`/actions/${encodeURIComponent(action)}/apply`, { bindingId });
    if (r.status === 202) return { kind: 'ticket', ticket: await r.json() };
    return { kind: 'committed', commit: await decode(r) };
  }

  /** Answer a ticket's pending invocations, keyed by invocation id. */
  postResults(ticketId: string, results: Record<number, Value>): Promise<CommitResult> {
    return this.post(`/tickets/${encodeURIComponent(ticketId)}/results`, results).then(decode);
  }

  getHistory(): Promise<HistoryEntry[]> {
    return this.get('/history');
  }

  buildSpace(mockConfigPath: string, maxStates?: number): Promise<SpaceSummary> {
    const body: Record<string, unknown> = { mockConfigPath };
    if (maxStates !== undefined) body.maxStates = maxStates;
    return this.post('/statespace/build', body).then(decode);
  }

  getSpace(): Promise<SpaceDoc> {
    return this.get('/statespace');
  }
}
