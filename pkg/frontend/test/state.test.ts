import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { editDistance } from "../src/editDistance.js";
import {
  canSubmit,
  createEditorState,
  liveValidate,
  setChecklistItem,
  setSubmitting,
  updateText,
} from "../src/state.js";
import type { TaskView } from "../src/types.js";

const task: TaskView = JSON.parse(
  readFileSync(new URL("./fixtures/task_response.json", import.meta.url), "utf-8"),
).task;

function allTicked(state: ReturnType<typeof createEditorState>) {
  let next = state;
  for (const item of task.checklist) next = setChecklistItem(next, item.key, true);
  return next;
}

describe("editor state", () => {
  it("prefills the editor with the previous caption (alt-text in round 2)", () => {
    const state = createEditorState(task);
    expect(task.round_no).toBe(2);
    expect(state.text).toBe(task.previous_caption);
    expect(state.text).toBe(task.alt_text);
    expect(state.editDistance).toBe(0);
    expect(state.dirty).toBe(false);
  });

  it("recomputes counters on every edit", () => {
    let state = createEditorState(task);
    const text = `a photo of ${task.previous_caption}`;
    state = updateText(state, task, text);
    expect(state.wordCount).toBe(text.trim().split(/\s+/u).length);
    expect(state.editDistance).toBe(editDistance(task.previous_caption, text));
    expect(state.dirty).toBe(true);
  });

  it("unchanged text shows edit distance 0", () => {
    let state = createEditorState(task);
    state = updateText(state, task, task.previous_caption);
    expect(state.editDistance).toBe(0);
  });

  it("submit is blocked until the checklist is complete and the prompt passes", () => {
    let state = createEditorState(task);
    // fresh state: checklist unticked, prompt not satisfied by raw alt-text
    expect(canSubmit(state, task)).toBe(false);

    state = allTicked(state);
    expect(liveValidate(state, task).checklistComplete).toBe(true);
    expect(canSubmit(state, task)).toBe(false); // prompt still failing

    state = updateText(state, task, `a photo of ${task.previous_caption}`);
    expect(canSubmit(state, task)).toBe(true);

    const oneUnticked = setChecklistItem(state, task.checklist[0]!.key, false);
    expect(canSubmit(oneUnticked, task)).toBe(false);
    expect(liveValidate(oneUnticked, task).missingKeys).toEqual([task.checklist[0]!.key]);
  });

  it("in-flight submission disables the gate", () => {
    let state = allTicked(createEditorState(task));
    state = updateText(state, task, `a photo of ${task.previous_caption}`);
    expect(canSubmit(state, task)).toBe(true);
    expect(canSubmit(setSubmitting(state, true), task)).toBe(false);
  });

  it("uses the server checklist template, not a hard-coded list", () => {
    const custom: TaskView = {
      ...task,
      checklist: [{ key: "only-step", label: "The one gate" }],
    };
    let state = createEditorState(custom);
    state = updateText(state, custom, "a photo of something");
    expect(canSubmit(state, custom)).toBe(false);
    state = setChecklistItem(state, "only-step", true);
    expect(canSubmit(state, custom)).toBe(true);
  });
});
