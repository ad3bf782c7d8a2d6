// Operator console for a running enactment.
//
// The console is a plain DOM application around the enactment loop: list the
// enabled actions, expand one to see its alternative bindings, apply a
// binding, and when the server answers with a ticket, fill one typed input
// per pending service call and post the results. Every displayed tuple
// comes from a server response; the console computes no process semantics
// of its own. After each commit attempt it re-polls the server.

import { Api, ApiError } from './api.js';
import { layout } from './graph.js';
import type {
  Binding,
  HistoryEntry,
  PendingInvocation,
  RelationView,
  SpaceDoc,
  SpecDoc,
  Ticket,
  Value,
} from './types.js';

type Tab = 'enact' | 'space';

interface BannerState {
  kind: 'error' | 'info';
  message: string;
  detail: string[];
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const c of children) node.append(c);
  return node;
}

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS('http://www.w3.org/2000/svg', tag) as SVGElement;
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

function fmtValues(values: Value[]): string {
  return values.join(', ');
}

function fmtTransition(entry: HistoryEntry): string {
  const head = `state ${entry.to}: ${entry.action}(${fmtValues(entry.binding)})`;
  if (entry.results.length === 0) return head;
  const parts = entry.results.map((r) => `${r.service}(${r.args.join(',')})=${r.value}`);
  return `${head} with ${parts.join(', ')}`;
}

const INT_RE = /^-?\d+$/;

/**
 * Single-page operator console. Construct with a root element and an Api,
 * then call start(). All event handlers funnel through a task queue so
 * tests can `await ui.idle()` after dispatching DOM events.
 */
export class OperatorConsole {
  private root: HTMLElement;
  private api: Api;

  private spec: SpecDoc | null = null;
  private states: number[] = [];
  private current = 0;
  private enabled: string[] = [];
  private expanded = new Map<string, Binding[]>();
  private openTicket: Ticket | null = null;
  private ticketInputs = new Map<number, string>();
  private fieldErrors = new Map<number, string>();
  private selectedRelation: string | null = null;
  private relationView: RelationView | null = null;
  private history: HistoryEntry[] = [];
  private banner: BannerState | null = null;
  private tab: Tab = 'enact';

  private space: SpaceDoc | null = null;
  private spaceChecked = false;
  private selectedSpaceState: number | null = null;
  private zoom = 1;
  private mockConfigPath = '';
  private maxStates = '';

  private queue: Promise<void> = Promise.resolve();

  constructor(root: HTMLElement, api: Api) {
    this.root = root;
    this.api = api;
  }

  start(): Promise<void> {
    return this.run(async () => {
      this.spec = await this.api.getSpec();
      this.selectedRelation = this.spec.relations[0]?.name ?? null;
      await this.refresh();
    });
  }

  /** Resolves when every queued handler has finished. */
  idle(): Promise<void> {
    return this.queue;
  }

  private run(task: () => Promise<void>): Promise<void> {
    this.queue = this.queue.then(async () => {
      try {
        await task();
      } catch (e) {
        this.fail(e);
      }
      this.render();
    });
    return this.queue;
  }

  private fail(e: unknown): void {
    if (e instanceof ApiError) {
      this.banner = {
        kind: 'error',
        message: e.body.error ?? `HTTP ${e.status}`,
        detail: e.body.violations ?? [],
      };
    } else {
      this.banner = { kind: 'error', message: 'server unreachable', detail: [] };
    }
  }

  /** Re-pull states, enabled actions, expanded bindings, the selected
      relation and the timeline. Displayed data is only ever replaced by
      fresh server responses. */
  private async refresh(): Promise<void> {
    const states = await this.api.getStates();
    this.states = states.states;
    this.current = states.current;
    this.enabled = await this.api.getEnabled();

    const keep = [...this.expanded.keys()].filter((a) => this.enabled.includes(a));
    const fetched = await Promise.all(keep.map((a) => this.api.getBindings(a)));
    this.expanded = new Map(keep.map((a, i) => [a, fetched[i]]));

    if (this.selectedRelation !== null) {
      this.relationView = await this.api.getRelation(this.current, this.selectedRelation);
    }
    this.history = await this.api.getHistory();
  }

  // - handlers -

  private toggleAction(name: string): void {
    void this.run(async () => {
      if (this.expanded.has(name)) {
        this.expanded.delete(name);
      } else {
        this.expanded.set(name, await this.api.getBindings(name));
      }
    });
  }

  private applyBinding(action: string, bindingId: number): void {
    void this.run(async () => {
      this.banner = null;
      const outcome = await this.api.apply(action, bindingId);
      if (outcome.kind === 'ticket') {
        this.openTicket = outcome.ticket;
        this.ticketInputs = new Map();
        this.fieldErrors = new Map();
      } else {
        await this.refresh();
      }
    });
  }

  private submitResults(): void {
    void this.run(async () => {
      const ticket = this.openTicket;
      if (!ticket) return;
      // type-check the form before bothering the server
      this.fieldErrors = new Map();
      const results: Record<number, Value> = {};
      for (const p of ticket.pending) {
        const raw = (this.ticketInputs.get(p.invocationId) ?? '').trim();
        if (p.returns === 'INT') {
          if (!INT_RE.test(raw)) {
            this.fieldErrors.set(p.invocationId, 'must be an integer');
            continue;
          }
          results[p.invocationId] = parseInt(raw, 10);
        } else {
          results[p.invocationId] = raw;
        }
      }
      if (this.fieldErrors.size > 0) return;

      this.banner = null;
      try {
        await this.api.postResults(ticket.ticketId, results);
        this.openTicket = null;
      } catch (e) {
        // a rejected or expired ticket is consumed server-side either way;
        // the store is untouched, so the displayed state stays as it is
        this.openTicket = null;
        this.fail(e);
      }
      await this.refresh();
    });
  }

  private selectRelation(name: string): void {
    void this.run(async () => {
      this.selectedRelation = name;
      this.relationView = await this.api.getRelation(this.current, name);
    });
  }

  private switchTab(tab: Tab): void {
    void this.run(async () => {
      this.tab = tab;
      if (tab === 'space' && !this.spaceChecked) {
        this.spaceChecked = true;
        try {
          this.space = await this.api.getSpace();
        } catch {
          this.space = null; // none built yet
        }
      }
    });
  }

  private buildSpace(): void {
    void this.run(async () => {
      this.banner = null;
      const max = this.maxStates.trim();
      const summary = await this.api.buildSpace(
        this.mockConfigPath.trim(),
        INT_RE.test(max) ? parseInt(max, 10) : undefined,
      );
      this.space = await this.api.getSpace();
      this.selectedSpaceState = null;
      this.banner = {
        kind: 'info',
        message: `state space: ${summary.states} states, ${summary.edges} edges, ` +
          (summary.complete ? 'complete' : 'incomplete'),
        detail: [],
      };
    });
  }

  // - rendering -

  private render(): void {
    this.root.textContent = '';
    const box = el('div', { class: 'console' });
    if (this.banner) box.append(this.renderBanner(this.banner));
    box.append(this.renderHeader());
    box.append(this.tab === 'enact' ? this.renderEnactTab() : this.renderSpaceTab());
    this.root.append(box);
  }

  private renderBanner(banner: BannerState): HTMLElement {
    const node = el('div', { class: `banner ${banner.kind}` }, [
      el('span', { class: 'banner-message' }, [banner.message]),
    ]);
    for (const line of banner.detail) {
      node.append(el('div', { class: 'banner-detail' }, [line]));
    }
    return node;
  }

  private renderHeader(): HTMLElement {
    const badge = el('span', { class: 'state-badge' }, [`state ${this.current}`]);
    const tabs = el('nav', { class: 'tabs' });
    for (const [tab, label] of [['enact', 'enact'], ['space', 'state space']] as const) {
      const btn = el('button', { type: 'button', class: 'tab-btn', 'data-tab': tab }, [label]);
      if (tab === this.tab) btn.classList.add('active');
      btn.addEventListener('click', () => this.switchTab(tab));
      tabs.append(btn);
    }
    return el('header', {}, [badge, tabs]);
  }

  private renderEnactTab(): HTMLElement {
    const box = el('div', { class: 'tab-enact' });
    box.append(this.renderActionsPanel());
    if (this.openTicket) box.append(this.renderTicketForm(this.openTicket));
    box.append(this.renderRelationBrowser());
    box.append(this.renderTimeline());
    return box;
  }

  private renderActionsPanel(): HTMLElement {
    const panel = el('section', { class: 'actions-panel' }, [el('h2', {}, ['enabled actions'])]);
    if (this.enabled.length === 0) {
      panel.append(el('p', { class: 'placeholder' }, ['no enabled actions']));
      return panel;
    }
    for (const name of this.enabled) {
      const card = el('div', { class: 'action-card', 'data-action': name });
      const toggle = el('button', { type: 'button', class: 'action-toggle' }, [name]);
      toggle.addEventListener('click', () => this.toggleAction(name));
      card.append(toggle);
      const bindings = this.expanded.get(name);
      if (bindings) card.append(this.renderBindings(name, bindings));
      panel.append(card);
    }
    return panel;
  }

  private renderBindings(action: string, bindings: Binding[]): HTMLElement {
    const table = el('table', { class: 'bindings' });
    for (const b of bindings) {
      const row = el('tr', { class: 'binding-row', 'data-binding-id': String(b.bindingId) });
      if (b.marked) row.classList.add('marked');
      row.append(el('td', { class: 'binding-values' }, [fmtValues(b.values)]));
      const btn = el('button', { type: 'button', class: 'apply-btn' }, ['apply']);
      if (b.marked || this.openTicket !== null) btn.setAttribute('disabled', '');
      btn.addEventListener('click', () => this.applyBinding(action, b.bindingId));
      row.append(el('td', {}, [btn]));
      table.append(row);
    }
    return table;
  }

  private renderTicketForm(ticket: Ticket): HTMLElement {
    const form = el('form', { class: 'ticket-form', 'data-ticket': ticket.ticketId }, [
      el('h3', {}, [`${ticket.action}: pending service calls`]),
    ]);
    for (const p of ticket.pending) {
      form.append(this.renderPendingField(ticket, p));
    }
    const submit = el('button', { type: 'button', class: 'ticket-submit' }, ['commit']);
    submit.addEventListener('click', () => this.submitResults());
    form.append(submit);
    form.addEventListener('submit', (e) => e.preventDefault());
    return form;
  }

  private renderPendingField(ticket: Ticket, p: PendingInvocation): HTMLElement {
    const field = el('div', { class: 'pending-field' });
    const label = el('label', { class: 'pending-label' }, [p.signature]);
    const input = el('input', {
      class: 'pending-input',
      'data-invocation': String(p.invocationId),
      type: 'text',
      value: this.ticketInputs.get(p.invocationId) ?? '',
    });
    if (p.domain) {
      // suggestions come from the spec's domain constraint on the target
      // column; the server remains the authority on what commits
      const listId = `dl-${ticket.ticketId}-${p.invocationId}`;
      input.setAttribute('list', listId);
      const datalist = el('datalist', { id: listId });
      for (const v of p.domain) {
        datalist.append(el('option', { value: String(v) }));
      }
      field.append(datalist);
    }
    input.addEventListener('input', () => {
      this.ticketInputs.set(p.invocationId, input.value);
    });
    label.append(input);
    field.append(label);
    const err = this.fieldErrors.get(p.invocationId);
    if (err) field.append(el('span', { class: 'field-error' }, [err]));
    return field;
  }

  private renderRelationBrowser(): HTMLElement {
    const section = el('section', { class: 'relation-browser' }, [el('h2', {}, ['relations'])]);
    const select = el('select', { class: 'relation-select' });
    for (const r of this.spec?.relations ?? []) {
      const opt = el('option', { value: r.name }, [r.name]);
      if (r.name === this.selectedRelation) opt.setAttribute('selected', '');
      select.append(opt);
    }
    select.addEventListener('change', () => this.selectRelation(select.value));
    section.append(select);

    const view = this.relationView;
    if (view) {
      section.append(el('h3', { class: 'relation-title' }, [`${view.relation} at state ${view.state}`]));
      const table = el('table', { class: 'relation-table' });
      const head = el('tr', {});
      for (const a of view.attributes) head.append(el('th', {}, [a]));
      table.append(el('thead', {}, [head]));
      const body = el('tbody', {});
      for (const row of view.rows) {
        const tr = el('tr', { class: 'relation-row' });
        for (const v of row) tr.append(el('td', {}, [String(v)]));
        body.append(tr);
      }
      table.append(body);
      section.append(table);
    }
    return section;
  }

  private renderTimeline(): HTMLElement {
    const section = el('section', { class: 'timeline' }, [el('h2', {}, ['timeline'])]);
    const list = el('ol', {});
    const first = this.states.length > 0 ? Math.min(...this.states) : this.current;
    list.append(el('li', { class: 'timeline-entry' }, [`state ${first}: initial`]));
    for (const entry of this.history) {
      list.append(el('li', { class: 'timeline-entry' }, [fmtTransition(entry)]));
    }
    section.append(list);
    return section;
  }

  // - state-space tab -

  private renderSpaceTab(): HTMLElement {
    const box = el('div', { class: 'tab-space' });
    box.append(this.renderBuildForm());
    if (!this.space) {
      box.append(el('p', { class: 'placeholder' }, ['no state space built yet']));
      return box;
    }
    const summary = `${this.space.states.length} states, ${this.space.edges.length} edges, ` +
      (this.space.complete ? 'complete' : 'incomplete');
    box.append(el('div', { class: 'space-summary' }, [summary]));
    box.append(this.renderGraph(this.space));
    if (this.selectedSpaceState !== null) {
      box.append(this.renderSnapshot(this.space, this.selectedSpaceState));
    }
    return box;
  }

  private renderBuildForm(): HTMLElement {
    const path = el('input', {
      class: 'space-config', type: 'text', placeholder: 'mock config path (server-side)',
      value: this.mockConfigPath,
    });
    path.addEventListener('input', () => {
      this.mockConfigPath = path.value;
    });
    const max = el('input', {
      class: 'space-max', type: 'text', placeholder: 'max states',
      value: this.maxStates,
    });
    max.addEventListener('input', () => {
      this.maxStates = max.value;
    });
    const btn = el('button', { type: 'button', class: 'space-build' }, ['build']);
    btn.addEventListener('click', () => this.buildSpace());
    const form = el('form', { class: 'space-build-form' }, [path, max, btn]);
    form.addEventListener('submit', (e) => e.preventDefault());
    return form;
  }

  private renderGraph(space: SpaceDoc): HTMLElement {
    const plan = layout(space);
    const wrap = el('div', { class: 'space-graph-wrap' });

    const controls = el('div', { class: 'zoom-controls' });
    const zoomIn = el('button', { type: 'button', class: 'zoom-in' }, ['+']);
    const zoomOut = el('button', { type: 'button', class: 'zoom-out' }, ['-']);
    zoomIn.addEventListener('click', () => this.setZoom(this.zoom * 1.25));
    zoomOut.addEventListener('click', () => this.setZoom(this.zoom / 1.25));
    controls.append(zoomIn, zoomOut);
    wrap.append(controls);

    const svg = svgEl('svg', {
      class: 'space-graph',
      viewBox: `0 0 ${plan.width} ${plan.height}`,
      width: String(plan.width * this.zoom),
      height: String(plan.height * this.zoom),
    });
    svg.addEventListener('wheel', (e) => {
      e.preventDefault();
      this.setZoom((e as WheelEvent).deltaY < 0 ? this.zoom * 1.1 : this.zoom / 1.1);
    });

    const defs = svgEl('defs');
    const marker = svgEl('marker', {
      id: 'arrow', viewBox: '0 0 10 10', refX: '22', refY: '5',
      markerWidth: '6', markerHeight: '6', orient: 'auto-start-reverse',
    });
    marker.append(svgEl('path', { d: 'M 0 0 L 10 5 L 0 10 z' }));
    defs.append(marker);
    svg.append(defs);

    for (const e of plan.edges) {
      svg.append(svgEl('line', {
        class: 'space-edge', x1: String(e.x1), y1: String(e.y1),
        x2: String(e.x2), y2: String(e.y2), 'marker-end': 'url(#arrow)',
      }));
      const label = svgEl('text', {
        class: 'edge-label',
        x: String((e.x1 + e.x2) / 2),
        y: String((e.y1 + e.y2) / 2 - 6),
      });
      label.textContent = e.label;
      svg.append(label);
    }
    for (const n of plan.nodes) {
      const node = svgEl('circle', {
        class: 'space-node', 'data-state': String(n.id),
        cx: String(n.x), cy: String(n.y), r: '16',
      });
      if (n.id === this.selectedSpaceState) node.classList.add('selected');
      node.addEventListener('click', () => {
        void this.run(async () => {
          this.selectedSpaceState = n.id;
        });
      });
      svg.append(node);
      const text = svgEl('text', {
        class: 'node-label', x: String(n.x), y: String(n.y + 4), 'text-anchor': 'middle',
      });
      text.textContent = String(n.id);
      svg.append(text);
    }
    wrap.append(svg);
    return wrap;
  }

  private setZoom(z: number): void {
    void this.run(async () => {
      this.zoom = Math.min(8, Math.max(0.25, z));
    });
  }

  private renderSnapshot(space: SpaceDoc, stateId: number): HTMLElement {
    const state = space.states.find((s) => s.id === stateId);
    const box = el('div', { class: 'space-snapshot' }, [
      el('h3', {}, [`state ${stateId}`]),
    ]);
    if (!state) return box;
    for (const [rel, rows] of Object.entries(state.relations)) {
      if (rows.length === 0) continue;
      const table = el('table', { class: 'snapshot-table', 'data-relation': rel });
      table.append(el('caption', {}, [rel]));
      const body = el('tbody', {});
      for (const row of rows) {
        const tr = el('tr', {});
        for (const v of row) tr.append(el('td', {}, [String(v)]));
        body.append(tr);
      }
      table.append(body);
      box.append(table);
    }
    return box;
  }
}
