import type { ChecklistItem } from "./types.js";

/**
 * Fallback list of recommended concise starting prompts; the server's task
 * payload carries the authoritative list and overrides this when present.
 */
export const DEFAULT_STARTING_PROMPTS: readonly string[] = [
  "a photo of",
  "a product photo of",
  "a low resolution photo of",
  "a cropped photo of",
  "a close-up photo of",
  "a black and white photo of",
  "a blurry photo of",
  "a rendering of",
  "a sculpture of",
  "a painting of",
  "a cartoon of",
];

export interface PromptMatch {
  accepted: boolean;
  prompt: string | null;
}

/** Case-insensitive prefix match against the recommended prompts. */
export function startingPromptCheck(
  text: string,
  prompts: readonly string[] = DEFAULT_STARTING_PROMPTS,
): PromptMatch {
  const lowered = text.toLowerCase();
  let best: string | null = null;
  for (const prompt of prompts) {
    if (lowered.startsWith(prompt) && (best === null || prompt.length > best.length)) {
      best = prompt;
    }
  }
  return { accepted: best !== null, prompt: best };
}

export interface ValidationSummary {
  promptOk: boolean;
  matchedPrompt: string | null;
  checklistComplete: boolean;
  missingKeys: string[];
}

/** Local mirror of the server's submission gates. */
export function validateSubmission(
  text: string,
  checklist: Record<string, boolean>,
  template: readonly ChecklistItem[],
  prompts: readonly string[] = DEFAULT_STARTING_PROMPTS,
): ValidationSummary {
  const match = startingPromptCheck(text, prompts);
  const missing = template.filter((item) => checklist[item.key] !== true).map((item) => item.key);
  return {
    promptOk: match.accepted,
    matchedPrompt: match.prompt,
    checklistComplete: missing.length === 0,
    missingKeys: missing,
  };
}
