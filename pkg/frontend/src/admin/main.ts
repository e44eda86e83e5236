// Requester dashboard: task list, create form, lifecycle buttons, export
// download, and a per-task response table with fingerprints and bot flags.
// The admin token lives in memory only and is never persisted.

import { AdminApi, ApiError } from "../api";
import { detectBotSignals } from "../botSignals";
import { parseExportXml } from "../exportParse";
import { FINGERPRINT_FIELDS, type TaskRow } from "../types";

interface StepDraft {
  kind: string;
  prompt: string;
  options: string;
  required: boolean;
}

export class Dashboard {
  private api: AdminApi | null = null;

  constructor(
    private root: HTMLElement,
    private doc: Document = document,
    private fetchImpl: typeof fetch = fetch.bind(globalThis),
  ) {}

  start(): void {
    this.renderLogin();
  }

  private clear(): HTMLElement {
    this.root.innerHTML = "";
    return this.root;
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    cls?: string,
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    if (cls) node.className = cls;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  // --- login ---

  renderLogin(message?: string): void {
    const root = this.clear();
    root.appendChild(this.el("h1", undefined, "Task dashboard"));
    if (message) root.appendChild(this.el("div", "error-banner", message));
    const form = this.el("form", "login-form");
    const input = this.el("input");
    input.type = "password";
    input.placeholder = "Admin token";
    input.autocomplete = "off";
    const button = this.el("button", undefined, "Sign in");
    button.type = "submit";
    form.append(input, button);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const api = new AdminApi(input.value, this.fetchImpl);
      api
        .listTasks()
        .then((tasks) => {
          this.api = api;
          this.renderTaskList(tasks);
        })
        .catch((err) => {
          if (err instanceof ApiError && err.status === 401) {
            this.renderLogin("That token was rejected; try again.");
          } else {
            this.renderLogin(`Could not reach the server: ${String(err)}`);
          }
        });
    });
    root.appendChild(form);
  }

  // --- task list ---

  async refreshTaskList(): Promise<void> {
    if (!this.api) return;
    try {
      this.renderTaskList(await this.api.listTasks());
    } catch (err) {
      if (err instanceof ApiError && err.status === 401) this.renderLogin("Session expired.");
      else throw err;
    }
  }

  renderTaskList(tasks: TaskRow[]): void {
    const root = this.clear();
    root.appendChild(this.el("h1", undefined, "Tasks"));
    const newButton = this.el("button", "new-task", "New task");
    newButton.addEventListener("click", () => void this.renderCreateForm());
    root.appendChild(newButton);

    const table = this.el("table", "task-table");
    const head = this.el("tr");
    for (const label of ["Id", "Name", "Status", "Responses", ""]) {
      head.appendChild(this.el("th", undefined, label));
    }
    table.appendChild(head);
    for (const task of tasks) {
      const row = this.el("tr");
      row.dataset.taskId = task.task_id;
      row.appendChild(this.el("td", undefined, task.task_id));
      row.appendChild(this.el("td", undefined, task.name));
      const statusCell = this.el("td");
      statusCell.appendChild(this.el("span", `status-chip status-${task.status}`, task.status));
      row.appendChild(statusCell);
      row.appendChild(this.el("td", undefined, String(task.response_count)));
      const actions = this.el("td", "task-actions");
      if (task.status === "draft") {
        const publish = this.el("button", "publish", "Publish");
        publish.addEventListener("click", () => {
          void this.api!.setStatus(task.task_id, "publish").then(() => this.refreshTaskList());
        });
        actions.appendChild(publish);
      }
      if (task.status === "published") {
        const close = this.el("button", "close", "Close");
        close.addEventListener("click", () => {
          void this.api!.setStatus(task.task_id, "close").then(() => this.refreshTaskList());
        });
        actions.appendChild(close);
      }
      const exportButton = this.el("button", "export", "Export XML");
      exportButton.addEventListener("click", () => void this.downloadExport(task.task_id));
      actions.appendChild(exportButton);
      const responses = this.el("button", "responses", "Responses");
      responses.addEventListener("click", () => void this.renderResponses(task));
      actions.appendChild(responses);
      row.appendChild(actions);
      table.appendChild(row);
    }
    root.appendChild(table);
  }

  /** Download exactly the bytes the API returned. */
  async downloadExport(
    taskId: string,
    save: (name: string, text: string) => void = (name, text) => this.saveViaAnchor(name, text),
  ): Promise<string> {
    const text = await this.api!.exportXml(taskId);
    save(`${taskId}-export.xml`, text);
    return text;
  }

  private saveViaAnchor(name: string, text: string): void {
    const blob = new Blob([text], { type: "application/xml" });
    const link = this.el("a");
    link.href = URL.createObjectURL(blob);
    link.download = name;
    this.doc.body.appendChild(link);
    link.click();
    link.remove();
  }

  // --- create form ---

  async renderCreateForm(): Promise<void> {
    const registry = await this.api!.registry();
    const root = this.clear();
    root.appendChild(this.el("h1", undefined, "Create task"));
    const error = this.el("div", "error-banner");
    error.style.display = "none";
    root.appendChild(error);

    const form = this.el("form", "create-form");
    const name = this.el("input");
    name.placeholder = "Task name";
    name.name = "name";
    const description = this.el("textarea");
    description.placeholder = "Description";
    description.name = "description";
    const ordering = this.el("select");
    ordering.name = "ordering_mode";
    for (const mode of ["fixed", "randomized"]) {
      const option = this.el("option", undefined, mode);
      option.value = mode;
      ordering.appendChild(option);
    }
    form.append(
      labelled(this.doc, "Name", name),
      labelled(this.doc, "Description", description),
      labelled(this.doc, "Step order", ordering),
    );

    const drafts: StepDraft[] = [];
    const stepsHost = this.el("div", "step-editor");
    form.appendChild(this.el("h2", undefined, "Steps"));
    form.appendChild(stepsHost);
    const renderDrafts = () => {
      stepsHost.innerHTML = "";
      drafts.forEach((draft, index) => {
        stepsHost.appendChild(
          this.stepEditorRow(draft, index, drafts.length, (action) => {
            if (action === "remove") drafts.splice(index, 1);
            if (action === "up" && index > 0) {
              [drafts[index - 1], drafts[index]] = [drafts[index], drafts[index - 1]];
            }
            if (action === "down" && index < drafts.length - 1) {
              [drafts[index + 1], drafts[index]] = [drafts[index], drafts[index + 1]];
            }
            renderDrafts();
          }),
        );
      });
    };
    const addStep = this.el("button", "add-step", "Add step");
    addStep.type = "button";
    addStep.addEventListener("click", () => {
      drafts.push({ kind: "multiple_choice", prompt: "", options: "", required: true });
      renderDrafts();
    });
    form.appendChild(addStep);

    form.appendChild(this.el("h2", undefined, "Auditors"));
    const auditorBoxes: HTMLInputElement[] = [];
    const auditorHost = this.el("div", "auditor-select");
    for (const auditor of registry.auditors) {
      const label = this.el("label", "auditor-option");
      const box = this.el("input");
      box.type = "checkbox";
      box.value = auditor.kind;
      auditorBoxes.push(box);
      label.append(box, this.doc.createTextNode(auditor.kind));
      auditorHost.appendChild(label);
    }
    form.appendChild(auditorHost);

    const submit = this.el("button", "create-submit", "Create draft");
    submit.type = "submit";
    form.appendChild(submit);
    const cancel = this.el("button", "cancel", "Back");
    cancel.type = "button";
    cancel.addEventListener("click", () => void this.refreshTaskList());
    form.appendChild(cancel);

    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const spec = {
        name: name.value,
        description: description.value,
        ordering_mode: ordering.value,
        steps: drafts.map((draft) => ({
          kind: draft.kind,
          prompt: draft.prompt,
          options: draft.kind.startsWith("multiple")
            ? draft.options.split("\n").map((s) => s.trim()).filter(Boolean)
            : [],
          required: draft.required,
        })),
        auditors: auditorBoxes.filter((b) => b.checked).map((b) => b.value),
      };
      this.api!.createTask(spec)
        .then(() => this.refreshTaskList())
        .catch((err) => {
          error.textContent = err instanceof ApiError ? err.message : String(err);
          error.style.display = "block";
        });
    });
    root.appendChild(form);
  }

  private stepEditorRow(
    draft: StepDraft,
    index: number,
    count: number,
    onAction: (action: "remove" | "up" | "down") => void,
  ): HTMLElement {
    const row = this.el("div", "step-row");
    const kind = this.el("select");
    for (const k of ["multiple_choice", "multiple_answer", "text_response"]) {
      const option = this.el("option", undefined, k);
      option.value = k;
      kind.appendChild(option);
    }
    kind.value = draft.kind;
    kind.addEventListener("change", () => (draft.kind = kind.value));
    const prompt = this.el("input");
    prompt.placeholder = "Prompt";
    prompt.value = draft.prompt;
    prompt.addEventListener("input", () => (draft.prompt = prompt.value));
    const options = this.el("textarea");
    options.placeholder = "One option per line";
    options.value = draft.options;
    options.addEventListener("input", () => (draft.options = options.value));
    const required = this.el("input");
    required.type = "checkbox";
    required.checked = draft.required;
    required.addEventListener("change", () => (draft.required = required.checked));
    const requiredLabel = this.el("label", "required-toggle");
    requiredLabel.append(required, this.doc.createTextNode("required"));

    row.append(kind, prompt, options, requiredLabel);
    for (const [action, text] of [
      ["up", "↑"],
      ["down", "↓"],
      ["remove", "✕"],
    ] as const) {
      const button = this.el("button", `step-${action}`, text);
      button.type = "button";
      if ((action === "up" && index === 0) || (action === "down" && index === count - 1)) {
        button.disabled = true;
      }
      button.addEventListener("click", () => onAction(action));
      row.appendChild(button);
    }
    return row;
  }

  // --- responses ---

  async renderResponses(task: TaskRow): Promise<void> {
    const text = await this.api!.exportXml(task.task_id);
    const parsed = parseExportXml(text);
    const root = this.clear();
    root.appendChild(this.el("h1", undefined, `Responses — ${parsed.name}`));
    const back = this.el("button", "back", "Back");
    back.addEventListener("click", () => void this.refreshTaskList());
    root.appendChild(back);

    const table = this.el("table", "response-table");
    const head = this.el("tr");
    for (const label of ["pk", "worker", "assignment", ...FINGERPRINT_FIELDS, "flags"]) {
      head.appendChild(this.el("th", undefined, label));
    }
    table.appendChild(head);
    for (const response of parsed.responses) {
      const row = this.el("tr");
      row.appendChild(this.el("td", undefined, String(response.pk)));
      row.appendChild(this.el("td", undefined, response.worker_id));
      row.appendChild(this.el("td", undefined, response.assignment_id));
      for (const field of FINGERPRINT_FIELDS) {
        const value = response.fingerprint[field];
        row.appendChild(
          this.el("td", "fp-cell", Number.isInteger(value) ? String(value) : value.toFixed(1)),
        );
      }
      const flagsCell = this.el("td", "flags-cell");
      for (const flag of detectBotSignals(response.fingerprint)) {
        flagsCell.appendChild(this.el("span", "bot-flag", flag));
      }
      row.appendChild(flagsCell);
      table.appendChild(row);
    }
    root.appendChild(table);
  }
}

function labelled(doc: Document, text: string, control: HTMLElement): HTMLElement {
  const wrap = doc.createElement("label");
  wrap.className = "form-field";
  const caption = doc.createElement("span");
  caption.textContent = text;
  wrap.append(caption, control);
  return wrap;
}

const host = typeof document !== "undefined" ? document.getElementById("turkey-admin") : null;
if (host) {
  new Dashboard(host).start();
}
