// Turns the server's XML export into rows the dashboard can table.

import type { ExportedResponse, Fingerprint, ParsedExport } from "./types";
import { FINGERPRINT_FIELDS } from "./types";
import { child, children, parseXml } from "./xml";

export function parseExportXml(text: string): ParsedExport {
  const root = parseXml(text);
  if (root.tag !== "export") throw new Error(`expected <export>, got <${root.tag}>`);
  const task = child(root, "task");
  const responses = children(child(task, "responses"), "response").map(parseResponse);
  return {
    task_id: child(task, "task_id").text,
    name: child(task, "name").text,
    responses,
  };
}

function parseResponse(node: ReturnType<typeof parseXml>): ExportedResponse {
  const fields = child(node, "fields");
  const fp = child(node, "fingerprint");
  const fingerprint = {} as Record<string, number>;
  for (const name of FINGERPRINT_FIELDS) {
    fingerprint[name] = Number(child(fp, name).text);
    if (Number.isNaN(fingerprint[name])) {
      throw new Error(`fingerprint field ${name} is not numeric`);
    }
  }
  const answers = children(child(node, "steps"), "list_item").map((item) => {
    const itemFields = child(item, "fields");
    return {
      step_id: child(itemFields, "step_id").text,
      value: JSON.parse(child(itemFields, "value").text) as unknown,
    };
  });
  return {
    pk: Number(child(node, "pk").text),
    worker_id: child(fields, "worker_id").text,
    assignment_id: child(fields, "assignment_id").text,
    hit_id: child(fields, "hit_id").text,
    step_order_seed: Number(child(fields, "step_order_seed").text),
    submitted_at: child(fields, "submitted_at").text,
    fingerprint: fingerprint as unknown as Fingerprint,
    answers,
  };
}
