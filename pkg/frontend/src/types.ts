// Payload types of the daproc HTTP API. The console mirrors these
// verbatim; it never derives process semantics on its own.

export type Value = number | string;

export interface AttributeDoc {
  name: string;
  type: 'INT' | 'STRING';
}

export interface RelationDoc {
  name: string;
  attributes: AttributeDoc[];
  key: string[];
  domains: Record<string, Value[]>;
}

export interface ServiceDoc {
  name: string;
  params: string[];
  returns: 'INT' | 'STRING';
}

export interface ActionDoc {
  name: string;
  params: { name: string; type: string }[];
}

export interface SpecDoc {
  text: string;
  relations: RelationDoc[];
  services: ServiceDoc[];
  actions: ActionDoc[];
}

export interface StatesDoc {
  states: number[];
  current: number;
}

export interface RelationView {
  relation: string;
  state: number;
  attributes: string[];
  rows: Value[][];
}

export interface Binding {
  bindingId: number;
  values: Value[];
  marked: boolean;
}

export interface PendingInvocation {
  invocationId: number;
  service: string;
  args: Value[];
  signature: string;
  returns: 'INT' | 'STRING';
  domain?: Value[];
}

export interface Ticket {
  ticketId: string;
  action: string;
  bindingId: number;
  expiresIn: number;
  pending: PendingInvocation[];
}

export interface CommitResult {
  state: number;
  action: string;
  binding: Value[];
  relations: Record<string, Value[][]>;
}

export type ApplyOutcome =
  | { kind: 'committed'; commit: CommitResult }
  | { kind: 'ticket'; ticket: Ticket };

export interface HistoryResult {
  service: string;
  args: Value[];
  value: Value;
}

export interface HistoryEntry {
  from: number;
  to: number;
  action: string | null;
  binding: Value[];
  results: HistoryResult[];
  timestamp: number | null;
}

export interface SpaceSummary {
  states: number;
  edges: number;
  complete: boolean;
}

export interface SpaceState {
  id: number;
  digest: string;
  relations: Record<string, Value[][]>;
}

export interface SpaceEdge {
  from: number;
  to: number;
  action: string | null;
  binding: Value[];
  results: [string, Value[], Value][];
}

export interface SpaceDoc {
  spec: string;
  initial: number;
  complete: boolean;
  states: SpaceState[];
  edges: SpaceEdge[];
}

export interface ErrorDoc {
  error: string;
  violations?: string[];
  ticketId?: string;
}
