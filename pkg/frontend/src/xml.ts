// Minimal strict parser for the server's export XML. The export grammar is
// deliberately small (no attributes except the export version, five escaped
// entities, one element per line), so a tiny tokenizer beats dragging in a
// DOM dependency and behaves identically in browsers and tests.

export interface XmlNode {
  tag: string;
  text: string;
  children: XmlNode[];
}

const ENTITIES: Record<string, string> = {
  "&amp;": "&",
  "&lt;": "<",
  "&gt;": ">",
  "&quot;": '"',
  "&apos;": "'",
};

export function unescapeXml(text: string): string {
  return text.replace(/&(amp|lt|gt|quot|apos);/g, (entity) => ENTITIES[entity]);
}

export function parseXml(source: string): XmlNode {
  let pos = 0;
  const input = source.replace(/^\s*<\?xml[^>]*\?>\s*/, "");

  function error(message: string): never {
    throw new Error(`XML parse error at offset ${pos}: ${message}`);
  }

  function skipWhitespace(): void {
    while (pos < input.length && /\s/.test(input[pos])) pos += 1;
  }

  function parseElement(): XmlNode {
    if (input[pos] !== "<") error("expected <");
    const open = input.indexOf(">", pos);
    if (open < 0) error("unterminated tag");
    let header = input.slice(pos + 1, open);
    pos = open + 1;
    const selfClosing = header.endsWith("/");
    if (selfClosing) header = header.slice(0, -1);
    const tag = header.split(/\s/, 1)[0];
    if (!tag) error("empty tag name");
    const node: XmlNode = { tag, text: "", children: [] };
    if (selfClosing) return node;

    for (;;) {
      const next = input.indexOf("<", pos);
      if (next < 0) error(`unclosed <${tag}>`);
      node.text += input.slice(pos, next);
      pos = next;
      if (input.startsWith("</", pos)) {
        const close = input.indexOf(">", pos);
        const closing = input.slice(pos + 2, close);
        if (closing !== tag) error(`expected </${tag}>, got </${closing}>`);
        pos = close + 1;
        if (node.children.length) node.text = "";
        else node.text = unescapeXml(node.text.trim());
        return node;
      }
      node.children.push(parseElement());
    }
  }

  skipWhitespace();
  const root = parseElement();
  skipWhitespace();
  if (pos < input.length) error("trailing content after document element");
  return root;
}

export function child(node: XmlNode, tag: string): XmlNode {
  const found = node.children.find((c) => c.tag === tag);
  if (!found) throw new Error(`missing <${tag}> under <${node.tag}>`);
  return found;
}

export function children(node: XmlNode, tag: string): XmlNode[] {
  return node.children.filter((c) => c.tag === tag);
}
