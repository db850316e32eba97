import type { SubmitRequest, SubmitResponse, TaskEnvelope, TaskView } from "./types.js";

/** Server-reported failure with the envelope's code/detail attached. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${status} ${code}: ${detail}`);
    this.name = "ApiError";
  }
}

/** Transport-level failure (server unreachable, malformed response). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let code = "unknown";
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: { code?: string; detail?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      detail = body.error.detail ?? detail;
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(response.status, code, detail);
}

/**
 * Thin typed client over the annotation service. At most one submission is
 * in flight: concurrent submit() calls (double-clicks) share the pending
 * request instead of issuing another.
 */
export class ApiClient {
  private pendingSubmit: Promise<SubmitResponse> | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return response.json();
  }

  async fetchNextTask(projectId: string, annotator: string): Promise<TaskView | null> {
    const body = (await this.request(
      `/projects/${encodeURIComponent(projectId)}/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    )) as TaskEnvelope;
    return body.task;
  }

  submit(assignmentId: string, body: SubmitRequest): Promise<SubmitResponse> {
    if (this.pendingSubmit !== null) {
      return this.pendingSubmit;
    }
    const pending = this.request(`/assignments/${encodeURIComponent(assignmentId)}/submit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).finally(() => {
      this.pendingSubmit = null;
    }) as Promise<SubmitResponse>;
    this.pendingSubmit = pending;
    return pending;
  }

  get submitting(): boolean {
    return this.pendingSubmit !== null;
  }
}
