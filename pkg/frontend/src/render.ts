/**
 * Pure DOM builders. Highlighting uses the server's character spans verbatim;
 * nothing here re-matches text or invents data not present in the response.
 */

import type { Paragraph, RelatedDisease, RelatedDrug, Replacement, Span } from "./schemas.js";
import type { ApiError } from "./client.js";

const doc = () => document;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc().createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function highlightSpans(text: string, spans: Span[]): DocumentFragment {
  const fragment = doc().createDocumentFragment();
  let cursor = 0;
  for (const span of spans) {
    if (span.start < cursor || span.end > text.length || span.end <= span.start) continue;
    if (span.start > cursor) fragment.append(text.slice(cursor, span.start));
    const mark = el("mark", `mention ${span.kind}`);
    mark.dataset.code = span.code;
    mark.textContent = text.slice(span.start, span.end);
    fragment.append(mark);
    cursor = span.end;
  }
  if (cursor < text.length) fragment.append(text.slice(cursor));
  return fragment;
}

export function paragraphCard(paragraph: Paragraph): HTMLElement {
  const card = el("article", "paragraph-card");
  card.dataset.paragraphId = paragraph.paragraph_id;
  const header = el("header");
  header.append(
    el("h3", "paper-title", paragraph.title),
    el("span", "section-label", paragraph.section),
  );
  const body = el("p", "paragraph-text");
  body.append(highlightSpans(paragraph.text, paragraph.spans));
  card.append(header, body);
  return card;
}

/** ATC level prefixes, shortest first: P, P01, P01B, P01BA, P01BA02. */
export function atcBreadcrumbs(code: string): string[] {
  return [1, 3, 4, 5, 7].filter((n) => n <= code.length).map((n) => code.slice(0, n));
}

export interface PivotHandlers {
  onPivot: (label: string) => void;
}

export function relatedDrugList(items: RelatedDrug[], handlers: PivotHandlers): HTMLElement {
  const list = el("ul", "related-list");
  for (const item of items) {
    const entry = el("li", "pivot");
    entry.dataset.code = item.atc_code;
    const link = el("a", "pivot-link", item.label);
    link.href = "#";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      handlers.onPivot(item.label);
    });
    entry.append(link, el("span", "score", String(item.score)));
    list.append(entry);
  }
  return list;
}

export function relatedDiseaseList(items: RelatedDisease[], handlers: PivotHandlers): HTMLElement {
  const list = el("ul", "related-list");
  for (const item of items) {
    const entry = el("li", "pivot");
    entry.dataset.code = item.mesh_code;
    const link = el("a", "pivot-link", item.label);
    link.href = "#";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      handlers.onPivot(item.label);
    });
    entry.append(link, el("span", "score", String(item.score)));
    list.append(entry);
  }
  return list;
}

export function replacementList(items: Replacement[]): HTMLElement {
  const table = el("table", "replacement-table");
  const head = el("tr");
  head.append(el("th", "", "drug"), el("th", "", "ATC"), el("th", "", "score"));
  table.append(head);
  for (const item of items) {
    const row = el("tr", "replacement-row");
    row.dataset.code = item.atc_code;
    const crumbs = el("td", "atc-breadcrumbs", atcBreadcrumbs(item.atc_code).join(" > "));
    row.append(el("td", "label", item.label), crumbs, el("td", "score", item.score.toFixed(4)));
    table.append(row);
  }
  return table;
}

export function emptyState(message: string): HTMLElement {
  return el("p", "empty-state", message);
}

export function errorBanner(error: ApiError, onRetry?: () => void): HTMLElement {
  const banner = el("div", `error-banner ${error.kind}`);
  banner.setAttribute("role", "alert");
  banner.append(el("p", "error-message", error.message));
  if (onRetry) {
    const button = el("button", "retry", "Retry");
    button.addEventListener("click", onRetry);
    banner.append(button);
  }
  return banner;
}

export function loadingNotice(): HTMLElement {
  return el("p", "loading", "Searching...");
}
