import { editDistance, wordCount } from "./editDistance.js";
import type { TaskView } from "./types.js";
import { validateSubmission, type ValidationSummary } from "./validate.js";

/**
 * Editor model for one open task. Updates are pure: every edit returns a
 * fresh state with the live counters recomputed, which keeps the render
 * layer a dumb projection and the gating logic unit-testable.
 */
export interface EditorState {
  text: string;
  wordCount: number;
  /** live character edit distance against the previous-round caption */
  editDistance: number;
  checklist: Record<string, boolean>;
  dirty: boolean;
  submitting: boolean;
}

export function createEditorState(task: TaskView): EditorState {
  // annotation flow starts by copying the previous caption into the editor
  const text = task.previous_caption;
  const checklist: Record<string, boolean> = {};
  for (const item of task.checklist) checklist[item.key] = false;
  return {
    text,
    wordCount: wordCount(text),
    editDistance: 0,
    checklist,
    dirty: false,
    submitting: false,
  };
}

export function updateText(state: EditorState, task: TaskView, text: string): EditorState {
  return {
    ...state,
    text,
    wordCount: wordCount(text),
    editDistance: editDistance(task.previous_caption, text),
    dirty: text !== task.previous_caption,
  };
}

export function setChecklistItem(state: EditorState, key: string, value: boolean): EditorState {
  return { ...state, checklist: { ...state.checklist, [key]: value } };
}

export function setSubmitting(state: EditorState, submitting: boolean): EditorState {
  return { ...state, submitting };
}

export function liveValidate(state: EditorState, task: TaskView): ValidationSummary {
  return validateSubmission(state.text, state.checklist, task.checklist, task.starting_prompts);
}

/** The submit control is enabled only when every gate holds locally. */
export function canSubmit(state: EditorState, task: TaskView): boolean {
  const summary = liveValidate(state, task);
  return summary.promptOk && summary.checklistComplete && !state.submitting;
}
