import type { Verdict } from "./types.js";

export type KeyAction =
  | { kind: "label"; verdict: Verdict }
  | { kind: "move"; delta: number }
  | { kind: "none" };

/** Keyboard-first triage: T/F label, arrows or j/k navigate. */
export function actionForKey(key: string): KeyAction {
  switch (key) {
    case "t":
    case "T":
      return { kind: "label", verdict: "true_positive" };
    case "f":
    case "F":
      return { kind: "label", verdict: "false_positive" };
    case "ArrowDown":
    case "ArrowRight":
    case "j":
      return { kind: "move", delta: 1 };
    case "ArrowUp":
    case "ArrowLeft":
    case "k":
      return { kind: "move", delta: -1 };
    default:
      return { kind: "none" };
  }
}
