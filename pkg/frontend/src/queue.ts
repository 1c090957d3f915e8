import type { Detection, QueueItem, Verdict } from "./types.js";
import { toQueueItem } from "./types.js";

/** A label action the service has not confirmed yet (network failure). */
export interface UnsentAction {
  itemId: string;
  verdict: Verdict;
}

/**
 * Pure triage-queue state. The server stays authoritative: items are
 * rebuilt from every fetch, labels remove items optimistically, and a
 * failed send is parked in `unsent` for retry instead of being dropped.
 */
export interface QueueState {
  items: QueueItem[]; // pending only, descending peak score
  focus: number; // index into items; -1 when empty
  unsent: UnsentAction[];
}

export function emptyQueue(): QueueState {
  return { items: [], focus: -1, unsent: [] };
}

export function sortItems(items: QueueItem[]): QueueItem[] {
  return [...items].sort((a, b) => b.peakScore - a.peakScore || a.id.localeCompare(b.id));
}

/** Rebuild from a server snapshot, keeping focus on the same item when present. */
export function applyServerDetections(state: QueueState, detections: Detection[]): QueueState {
  const focusedId = state.focus >= 0 ? state.items[state.focus]?.id : undefined;
  const items = sortItems(detections.filter((d) => d.status === "pending").map(toQueueItem));
  let focus = items.length ? 0 : -1;
  if (focusedId) {
    const idx = items.findIndex((i) => i.id === focusedId);
    if (idx >= 0) {
      focus = idx;
    } else if (items.length) {
      focus = Math.min(state.focus, items.length - 1);
    }
  }
  return { items, focus, unsent: state.unsent };
}

/** Drop a labeled item; focus advances to what slides into its slot. */
export function removeItem(state: QueueState, itemId: string): QueueState {
  const idx = state.items.findIndex((i) => i.id === itemId);
  if (idx < 0) {
    return state;
  }
  const items = state.items.filter((i) => i.id !== itemId);
  let focus = state.focus;
  if (idx < focus) {
    focus -= 1;
  }
  if (focus >= items.length) {
    focus = items.length - 1;
  }
  return { items, focus, unsent: state.unsent };
}

export function moveFocus(state: QueueState, delta: number): QueueState {
  if (!state.items.length) {
    return state;
  }
  const focus = Math.min(Math.max(state.focus + delta, 0), state.items.length - 1);
  return { ...state, focus };
}

export function focusedItem(state: QueueState): QueueItem | undefined {
  return state.focus >= 0 ? state.items[state.focus] : undefined;
}

export function parkUnsent(state: QueueState, action: UnsentAction): QueueState {
  const rest = state.unsent.filter((u) => u.itemId !== action.itemId);
  return { ...state, unsent: [...rest, action] };
}

export function clearUnsent(state: QueueState, itemId: string): QueueState {
  return { ...state, unsent: state.unsent.filter((u) => u.itemId !== itemId) };
}
