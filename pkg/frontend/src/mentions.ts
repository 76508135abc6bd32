/** Wiki-mention scanning and read-only rendering.
 *
 * Mirrors the server's title rules so provisional coverage for edited or
 * hand-written steps matches what the service reports on the next round:
 * underscores become spaces, whitespace collapses, `Theorem:` targets drop
 * their prefix (theorem pages live in the main namespace), `Definition:` and
 * `Axiom:` targets keep theirs.
 */

const MENTION_RE = /\[\[([^[\]|]+)(?:\|([^[\]]*))?\]\]/g;

export function normalizeTitle(title: string): string {
  return title.replace(/_/g, ' ').replace(/\s+/g, ' ').trim();
}

function pageTitle(target: string): string {
  const normalized = normalizeTitle(target);
  return normalized.startsWith('Theorem:') ? normalized.slice('Theorem:'.length).trim() : normalized;
}

/** Unique page titles mentioned in `text`, in first-mention order. */
export function scanMentionTitles(text: string): string[] {
  const seen = new Set<string>();
  const titles: string[] = [];
  for (const match of text.matchAll(MENTION_RE)) {
    const title = pageTitle(match[1]);
    if (!seen.has(title)) {
      seen.add(title);
      titles.push(title);
    }
  }
  return titles;
}

/** Constraint titles covered by `stepTexts`, in constraint order. */
export function coveredConstraints(constraintTitles: string[], stepTexts: string[]): string[] {
  const mentioned = new Set(stepTexts.flatMap(scanMentionTitles));
  return constraintTitles.filter((t) => mentioned.has(normalizeTitle(t)));
}

/** Render proof text read-only with mentions highlighted.  Everything goes
 * through text nodes, so no HTML in the proof can reach the DOM as markup. */
export function renderProofText(text: string): DocumentFragment {
  const fragment = document.createDocumentFragment();
  let last = 0;
  for (const match of text.matchAll(MENTION_RE)) {
    const index = match.index ?? 0;
    if (index > last) fragment.appendChild(document.createTextNode(text.slice(last, index)));
    const span = document.createElement('span');
    span.className = 'mention';
    span.title = pageTitle(match[1]);
    const surface = match[2] !== undefined ? match[2].trim() : match[1];
    span.textContent = surface || normalizeTitle(match[1]).replace(/^(Definition|Axiom):/, '');
    fragment.appendChild(span);
    last = index + match[0].length;
  }
  if (last < text.length) fragment.appendChild(document.createTextNode(text.slice(last)));
  return fragment;
}
