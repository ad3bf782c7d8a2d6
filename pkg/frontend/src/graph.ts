// Layered layout for the state-space graph. States are arranged by BFS
// distance from the initial state, one column per layer, so the usual
// forward-branching shape of a process reads left to right.

import type { SpaceDoc } from './types.js';

export interface NodePos {
  id: number;
  x: number;
  y: number;
  layer: number;
}

export interface EdgePos {
  from: number;
  to: number;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  label: string;
}

export interface Layout {
  nodes: NodePos[];
  edges: EdgePos[];
  width: number;
  height: number;
}

const X_GAP = 150;
const Y_GAP = 80;
const MARGIN = 60;

export function edgeLabel(edge: { action: string | null; binding: unknown[] }): string {
  if (!edge.action) return '';
  return `${edge.action}(${edge.binding.join(',')})`;
}

/** Assign each state the length of the shortest path from the initial one. */
export function layerOf(space: SpaceDoc): Map<number, number> {
  const next = new Map<number, number[]>();
  for (const e of space.edges) {
    const out = next.get(e.from) ?? [];
    out.push(e.to);
    next.set(e.from, out);
  }
  const layer = new Map<number, number>();
  layer.set(space.initial, 0);
  const queue = [space.initial];
  while (queue.length > 0) {
    const sid = queue.shift()!;
    for (const to of next.get(sid) ?? []) {
      if (!layer.has(to)) {
        layer.set(to, layer.get(sid)! + 1);
        queue.push(to);
      }
    }
  }
  // states unreachable from the initial one (possible in truncated builds)
  const deepest = Math.max(0, ...layer.values());
  for (const s of space.states) {
    if (!layer.has(s.id)) layer.set(s.id, deepest + 1);
  }
  return layer;
}

export function layout(space: SpaceDoc): Layout {
  const layer = layerOf(space);
  const byLayer = new Map<number, number[]>();
  for (const s of space.states) {
    const l = layer.get(s.id)!;
    const ids = byLayer.get(l) ?? [];
    ids.push(s.id);
    byLayer.set(l, ids);
  }

  const pos = new Map<number, NodePos>();
  const nodes: NodePos[] = [];
  let maxRows = 1;
  for (const [l, ids] of byLayer) {
    ids.sort((a, b) => a - b);
    maxRows = Math.max(maxRows, ids.length);
    ids.forEach((id, row) => {
      const node = { id, layer: l, x: MARGIN + l * X_GAP, y: MARGIN + row * Y_GAP };
      pos.set(id, node);
      nodes.push(node);
    });
  }
  nodes.sort((a, b) => a.id - b.id);

  const edges: EdgePos[] = space.edges.map((e) => {
    const from = pos.get(e.from)!;
    const to = pos.get(e.to)!;
    return {
      from: e.from,
      to: e.to,
      x1: from.x,
      y1: from.y,
      x2: to.x,
      y2: to.y,
      label: edgeLabel(e),
    };
  });

  const layers = byLayer.size;
  return {
    nodes,
    edges,
    width: 2 * MARGIN + Math.max(0, layers - 1) * X_GAP,
    height: 2 * MARGIN + (maxRows - 1) * Y_GAP,
  };
}
