import { ApiClient } from "./api.js";
import { createApp } from "./app.js";

/**
 * Browser bootstrap. Configuration is a single base-URL setting plus the
 * project/annotator identifiers, all overridable via query parameters:
 *
 *   index.html?base=http://127.0.0.1:8787&project=p001&annotator=vendor-a
 */
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("base") ?? "http://127.0.0.1:8787";
const projectId = params.get("project") ?? "p001";
const annotator = params.get("annotator") ?? "vendor-a";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
const app = createApp(root as HTMLElement, new ApiClient(baseUrl), { projectId, annotator });
void app.loadNext();
