import { describe, expect, it } from "vitest";

import { DEFAULT_STARTING_PROMPTS, startingPromptCheck, validateSubmission } from "../src/validate.js";
import type { ChecklistItem } from "../src/types.js";

const TEMPLATE: ChecklistItem[] = [
  { key: "copy-previous", label: "x" },
  { key: "starting-prompt", label: "y" },
];

describe("startingPromptCheck", () => {
  it("accepts case-insensitively and reports the prompt", () => {
    const match = startingPromptCheck("A photo of a conch shell");
    expect(match.accepted).toBe(true);
    expect(match.prompt).toBe("a photo of");
  });

  it("rejects verbose openers and empty text", () => {
    expect(startingPromptCheck("This is an image showing a dog").accepted).toBe(false);
    expect(startingPromptCheck("").accepted).toBe(false);
  });

  it("prefers the longest matching prompt", () => {
    expect(startingPromptCheck("a product photo of a mug").prompt).toBe("a product photo of");
  });

  it("is prefix-monotone", () => {
    for (const prompt of DEFAULT_STARTING_PROMPTS) {
      const base = `${prompt} something`;
      expect(startingPromptCheck(base).accepted).toBe(true);
      expect(startingPromptCheck(`${base} and more trailing text`).accepted).toBe(true);
    }
  });

  it("honors a server-provided prompt list", () => {
    expect(startingPromptCheck("a sketch of a dog", ["a sketch of"]).accepted).toBe(true);
    expect(startingPromptCheck("a photo of a dog", ["a sketch of"]).accepted).toBe(false);
  });
});

describe("validateSubmission", () => {
  it("lists missing checklist keys", () => {
    const summary = validateSubmission("a photo of a dog", { "copy-previous": true }, TEMPLATE);
    expect(summary.promptOk).toBe(true);
    expect(summary.checklistComplete).toBe(false);
    expect(summary.missingKeys).toEqual(["starting-prompt"]);
  });

  it("passes when everything holds", () => {
    const summary = validateSubmission(
      "a photo of a dog",
      { "copy-previous": true, "starting-prompt": true },
      TEMPLATE,
    );
    expect(summary.checklistComplete).toBe(true);
    expect(summary.missingKeys).toEqual([]);
  });

  it("explicit false counts as missing", () => {
    const summary = validateSubmission(
      "a photo of a dog",
      { "copy-previous": true, "starting-prompt": false },
      TEMPLATE,
    );
    expect(summary.missingKeys).toEqual(["starting-prompt"]);
  });
});
