/**
 * Wire types mirroring the annotation service payloads field-for-field.
 * The contract tests in test/contract.test.ts hold these against recorded
 * server responses.
 */

export interface ChecklistItem {
  key: string;
  label: string;
}

export interface TaskView {
  assignment_id: string;
  project_id: string;
  item_id: string;
  image_ref: string;
  alt_text: string;
  previous_caption: string;
  round_no: number;
  checklist: ChecklistItem[];
  starting_prompts: string[];
}

export interface TaskEnvelope {
  task: TaskView | null;
}

export interface SubmitRequest {
  caption: string;
  checklist: Record<string, boolean>;
  annotator: string;
}

export interface SubmitResponse {
  assignment_id: string;
  item_id: string;
  round_no: number;
  caption: string;
  annotator: string;
  edit_distance_to_prev: number;
  length_words: number;
  matched_prompt: string | null;
}

export interface ApiErrorBody {
  error: {
    code: string;
    detail: string;
  };
}
