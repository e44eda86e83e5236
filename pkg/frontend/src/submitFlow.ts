// External submit: on success the browser posts back to the Turk origin via
// an auto-submitted form; standalone sessions get a completion panel.

import type { SubmitResult } from "./types";

export function buildRedirectForm(
  doc: Document,
  redirect: SubmitResult["redirect"],
): HTMLFormElement {
  const form = doc.createElement("form");
  form.method = "POST";
  form.action = redirect.url;
  for (const [name, value] of Object.entries(redirect.fields)) {
    const input = doc.createElement("input");
    input.type = "hidden";
    input.name = name;
    input.value = value;
    form.appendChild(input);
  }
  return form;
}

export function performRedirect(
  doc: Document,
  redirect: SubmitResult["redirect"],
  submitter: (form: HTMLFormElement) => void = (form) => form.submit(),
): void {
  const form = buildRedirectForm(doc, redirect);
  doc.body.appendChild(form);
  submitter(form);
}

export function completionPanel(doc: Document, responsePk: number): HTMLElement {
  const panel = doc.createElement("div");
  panel.className = "completion-panel";
  panel.textContent = `Response recorded (#${responsePk}). You can close this tab.`;
  return panel;
}
