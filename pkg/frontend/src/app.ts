import { ApiClient, ApiError, NetworkError } from "./api.js";
import {
  EditorState,
  canSubmit,
  createEditorState,
  liveValidate,
  setChecklistItem,
  setSubmitting,
  updateText,
} from "./state.js";
import type { SubmitResponse, TaskView } from "./types.js";

export interface AppOptions {
  projectId: string;
  annotator: string;
}

/**
 * Single-page annotation screen: image, alt-text, editable previous
 * caption, checklist, live counters. One task on screen at a time; task
 * fetch and submit are serialized.
 */
export class AnnotationApp {
  private task: TaskView | null = null;
  private state: EditorState | null = null;
  private readonly doc: Document;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    private readonly options: AppOptions,
  ) {
    this.doc = root.ownerDocument;
  }

  get currentTask(): TaskView | null {
    return this.task;
  }

  get editorState(): EditorState | null {
    return this.state;
  }

  async loadNext(): Promise<void> {
    try {
      this.task = await this.client.fetchNextTask(this.options.projectId, this.options.annotator);
    } catch (error) {
      if (error instanceof NetworkError) {
        this.renderRetryBanner();
        return;
      }
      throw error;
    }
    this.state = this.task ? createEditorState(this.task) : null;
    this.render();
  }

  // -- rendering -----------------------------------------------------------

  private el(tag: string, testId: string, text?: string): HTMLElement {
    const node = this.doc.createElement(tag);
    node.setAttribute("data-testid", testId);
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private renderRetryBanner(): void {
    this.root.replaceChildren();
    const banner = this.el("div", "retry-banner", "Service unreachable.");
    const button = this.el("button", "retry-button", "Retry") as HTMLButtonElement;
    button.addEventListener("click", () => void this.loadNext());
    banner.appendChild(button);
    this.root.appendChild(banner);
  }

  private render(): void {
    this.root.replaceChildren();
    if (!this.task || !this.state) {
      this.root.appendChild(
        this.el("div", "empty-queue", "No open tasks for this annotator."),
      );
      return;
    }
    const task = this.task;

    const header = this.el("header", "task-header");
    header.appendChild(this.el("span", "round-no", `Round ${task.round_no}`));
    header.appendChild(this.el("span", "item-id", task.item_id));
    this.root.appendChild(header);

    const image = this.el("img", "task-image") as HTMLImageElement;
    image.src = task.image_ref;
    image.alt = task.alt_text;
    this.root.appendChild(image);

    const alt = this.el("section", "alt-text-block");
    alt.appendChild(this.el("h2", "alt-text-title", "Alt-text"));
    alt.appendChild(this.el("p", "alt-text", task.alt_text));
    this.root.appendChild(alt);

    const previous = this.el("section", "previous-block");
    previous.appendChild(this.el("h2", "previous-title", "Previous caption"));
    previous.appendChild(this.el("p", "previous-caption", task.previous_caption));
    this.root.appendChild(previous);

    const editor = this.el("textarea", "caption-editor") as HTMLTextAreaElement;
    editor.value = this.state.text;
    editor.addEventListener("input", () => {
      if (!this.task || !this.state) return;
      this.state = updateText(this.state, this.task, editor.value);
      this.refreshLive();
    });
    this.root.appendChild(editor);

    const counters = this.el("div", "counters");
    counters.appendChild(this.el("span", "word-count"));
    counters.appendChild(this.el("span", "edit-distance"));
    this.root.appendChild(counters);

    this.root.appendChild(this.el("div", "prompt-warning"));

    const list = this.el("ul", "checklist");
    for (const item of task.checklist) {
      const row = this.el("li", `checklist-row-${item.key}`);
      const box = this.el("input", `checklist-box-${item.key}`) as HTMLInputElement;
      box.type = "checkbox";
      box.addEventListener("change", () => {
        if (!this.task || !this.state) return;
        this.state = setChecklistItem(this.state, item.key, box.checked);
        this.refreshLive();
      });
      const label = this.el("label", `checklist-label-${item.key}`, item.label);
      row.appendChild(box);
      row.appendChild(label);
      list.appendChild(row);
    }
    this.root.appendChild(list);

    const submit = this.el("button", "submit-button", "Submit") as HTMLButtonElement;
    submit.addEventListener("click", () => void this.submit());
    this.root.appendChild(submit);

    this.root.appendChild(this.el("div", "status-banner"));
    this.refreshLive();
  }

  private query(testId: string): HTMLElement | null {
    return this.root.querySelector(`[data-testid="${testId}"]`);
  }

  private refreshLive(): void {
    if (!this.task || !this.state) return;
    const summary = liveValidate(this.state, this.task);
    const words = this.query("word-count");
    if (words) words.textContent = `${this.state.wordCount} words`;
    const distance = this.query("edit-distance");
    if (distance) distance.textContent = `${this.state.editDistance} chars changed`;
    const warning = this.query("prompt-warning");
    if (warning) {
      warning.textContent = summary.promptOk
        ? ""
        : "Caption must begin with a recommended starting prompt.";
    }
    const submit = this.query("submit-button") as HTMLButtonElement | null;
    if (submit) submit.disabled = !canSubmit(this.state, this.task);
  }

  private setStatus(text: string): void {
    const banner = this.query("status-banner");
    if (banner) banner.textContent = text;
  }

  async submit(): Promise<void> {
    if (!this.task || !this.state) return;
    if (!canSubmit(this.state, this.task)) return; // guarded as well as disabled
    const task = this.task;
    this.state = setSubmitting(this.state, true);
    this.refreshLive();
    let response: SubmitResponse;
    try {
      response = await this.client.submit(task.assignment_id, {
        caption: this.state.text,
        checklist: this.state.checklist,
        annotator: this.options.annotator,
      });
    } catch (error) {
      this.state = setSubmitting(this.state, false);
      this.refreshLive();
      if (error instanceof ApiError) {
        this.renderServerRejection(error);
        return;
      }
      if (error instanceof NetworkError) {
        this.setStatus("Network failure; your text is kept. Try again.");
        return;
      }
      throw error;
    }
    this.setStatus(
      `Saved round ${response.round_no}: ${response.length_words} words, ` +
        `${response.edit_distance_to_prev} chars changed.`,
    );
    await this.loadNext();
  }

  private renderServerRejection(error: ApiError): void {
    if (error.status === 409) {
      // someone else submitted first; keep the buffer, nothing is lost
      this.setStatus(`Already submitted elsewhere (conflict): ${error.detail}`);
      return;
    }
    this.setStatus(`Rejected: ${error.detail}`);
    if (!this.task) return;
    for (const item of this.task.checklist) {
      const row = this.query(`checklist-row-${item.key}`);
      if (row) {
        if (error.detail.includes(item.key)) {
          row.classList.add("violation");
        } else {
          row.classList.remove("violation");
        }
      }
    }
  }
}

export function createApp(root: HTMLElement, client: ApiClient, options: AppOptions): AnnotationApp {
  return new AnnotationApp(root, client, options);
}
