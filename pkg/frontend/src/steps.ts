// Step rendering: each definition becomes an interactive element plus an
// answer accessor; required steps gate submission.

import type { AnswerValue, StepDef } from "./types";

export interface RenderedStep {
  def: StepDef;
  element: HTMLElement;
  /** Canonical answer value, or null when unanswered. */
  value(): AnswerValue | null;
  /** Rendering failures (custom asset fetch) block submit entirely. */
  failed: boolean;
}

type CustomCollector = () => AnswerValue | null;

function optionInputs(
  doc: Document,
  def: StepDef,
  type: "radio" | "checkbox",
): HTMLElement {
  const wrap = doc.createElement("div");
  wrap.className = "step-options";
  def.options.forEach((option, index) => {
    const label = doc.createElement("label");
    label.className = "step-option";
    const input = doc.createElement("input");
    input.type = type;
    input.name = `step-${def.step_id}`;
    input.value = String(index);
    label.appendChild(input);
    label.appendChild(doc.createTextNode(option));
    wrap.appendChild(label);
  });
  return wrap;
}

export function renderStep(
  doc: Document,
  def: StepDef,
  fetchAsset?: (url: string) => Promise<string>,
): RenderedStep {
  const root = doc.createElement("fieldset");
  root.className = "turkey-step";
  root.dataset.stepId = def.step_id;
  root.dataset.kind = def.kind;
  const legend = doc.createElement("legend");
  legend.textContent = def.prompt + (def.required ? " *" : "");
  root.appendChild(legend);

  if (def.kind === "multiple_choice") {
    root.appendChild(optionInputs(doc, def, "radio"));
    return {
      def,
      element: root,
      failed: false,
      value: () => {
        const checked = root.querySelector<HTMLInputElement>("input:checked");
        return checked ? Number(checked.value) : null;
      },
    };
  }

  if (def.kind === "multiple_answer") {
    root.appendChild(optionInputs(doc, def, "checkbox"));
    return {
      def,
      element: root,
      failed: false,
      value: () => {
        const checked = Array.from(
          root.querySelectorAll<HTMLInputElement>("input:checked"),
        ).map((input) => Number(input.value));
        checked.sort((a, b) => a - b);
        if (checked.length === 0) return def.required ? null : [];
        return checked;
      },
    };
  }

  if (def.kind === "text_response") {
    const area = doc.createElement("textarea");
    area.rows = 4;
    root.appendChild(area);
    return {
      def,
      element: root,
      failed: false,
      value: () => {
        const text = area.value;
        if (def.required && text === "") return null;
        return text;
      },
    };
  }

  // Custom plugin step: template + optional script fetched per descriptor refs.
  const holder = doc.createElement("div");
  holder.className = "custom-step";
  root.appendChild(holder);
  const rendered: RenderedStep = {
    def,
    element: root,
    failed: false,
    value: () => {
      const collect = (holder as unknown as { turkeyCollect?: CustomCollector }).turkeyCollect;
      return collect ? collect() : null;
    },
  };
  if (def.template && fetchAsset) {
    fetchAsset(def.template)
      .then((html) => {
        holder.innerHTML = html;
      })
      .catch(() => {
        rendered.failed = true;
        const panel = doc.createElement("div");
        panel.className = "step-error";
        panel.textContent = `Failed to load the "${def.plugin_kind}" step. Submission is blocked.`;
        root.appendChild(panel);
      });
  } else {
    rendered.failed = true;
  }
  return rendered;
}

export interface StepsController {
  steps: RenderedStep[];
  container: HTMLElement;
  collectAnswers(): { step_id: string; value: AnswerValue }[];
  /** Empty when submittable; otherwise the blocking step ids. */
  blockers(): string[];
}

export function renderSteps(
  doc: Document,
  defs: StepDef[],
  fetchAsset?: (url: string) => Promise<string>,
): StepsController {
  const container = doc.createElement("div");
  container.className = "turkey-steps";
  const steps = defs.map((def) => renderStep(doc, def, fetchAsset));
  for (const step of steps) container.appendChild(step.element);
  return {
    steps,
    container,
    collectAnswers: () => {
      const answers: { step_id: string; value: AnswerValue }[] = [];
      for (const step of steps) {
        const value = step.value();
        if (value !== null) answers.push({ step_id: step.def.step_id, value });
      }
      return answers;
    },
    blockers: () => {
      const blocking: string[] = [];
      for (const step of steps) {
        if (step.failed) blocking.push(step.def.step_id);
        else if (step.def.required && step.value() === null) blocking.push(step.def.step_id);
      }
      return blocking;
    },
  };
}
