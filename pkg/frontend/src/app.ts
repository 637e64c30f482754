/**
 * View controller. One in-flight search at a time: every request carries a
 * sequence number and stale responses are dropped. Query and offset live in
 * the URL query string; there is no other persistence.
 */

import type { ApiClient, ApiError } from "./client.js";
import type { SearchResponse } from "./schemas.js";
import {
  emptyState,
  errorBanner,
  loadingNotice,
  paragraphCard,
  relatedDiseaseList,
  relatedDrugList,
  replacementList,
} from "./render.js";

export interface ViewState {
  query: string;
  offset: number;
  limit: number;
  status: "idle" | "loading" | "ready" | "error";
  lastResponse: SearchResponse | null;
}

const K_CHOICES = [3, 5, 10];

export class App {
  state: ViewState = { query: "", offset: 0, limit: 10, status: "idle", lastResponse: null };

  private seq = 0;
  private pending: Promise<void> = Promise.resolve();

  private readonly input: HTMLInputElement;
  private readonly results: HTMLElement;
  private readonly resultsHeading: HTMLElement;
  private readonly pager: HTMLElement;
  private readonly drugsPanel: HTMLElement;
  private readonly drugsHeading: HTMLElement;
  private readonly diseasesPanel: HTMLElement;
  private readonly diseasesHeading: HTMLElement;
  private readonly replacementsPanel: HTMLElement;
  private readonly replacementsHeading: HTMLElement;
  private readonly kSelect: HTMLSelectElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
  ) {
    root.innerHTML = "";
    const form = document.createElement("form");
    form.className = "search-form";
    this.input = document.createElement("input");
    this.input.type = "search";
    this.input.name = "q";
    this.input.placeholder = "drug or disease";
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.textContent = "Search";
    form.append(this.input, submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.search(this.input.value);
    });

    const makeSection = (id: string, title: string) => {
      const section = document.createElement("section");
      section.id = id;
      const heading = document.createElement("h2");
      heading.textContent = title;
      const body = document.createElement("div");
      body.className = "panel-body";
      section.append(heading, body);
      return { section, heading, body };
    };

    const results = makeSection("results", "Paragraphs");
    this.results = results.body;
    this.resultsHeading = results.heading;
    this.pager = document.createElement("nav");
    this.pager.className = "pager";
    results.section.append(this.pager);

    const drugs = makeSection("related-drugs", "Related drugs");
    this.drugsPanel = drugs.body;
    this.drugsHeading = drugs.heading;
    const diseases = makeSection("related-diseases", "Related diseases");
    this.diseasesPanel = diseases.body;
    this.diseasesHeading = diseases.heading;

    const replacements = makeSection("replacements", "Replacements");
    this.replacementsPanel = replacements.body;
    this.replacementsHeading = replacements.heading;
    this.kSelect = document.createElement("select");
    this.kSelect.className = "k-select";
    for (const k of K_CHOICES) {
      const option = document.createElement("option");
      option.value = String(k);
      option.textContent = `top ${k}`;
      this.kSelect.append(option);
    }
    this.kSelect.value = "5";
    this.kSelect.addEventListener("change", () => {
      if (this.state.lastResponse) void this.loadReplacements(this.state.lastResponse, this.seq);
    });
    replacements.section.insertBefore(this.kSelect, this.replacementsPanel);

    const sidebar = document.createElement("aside");
    sidebar.className = "sidebar";
    sidebar.append(drugs.section, diseases.section, replacements.section);
    const main = document.createElement("main");
    main.append(results.section, sidebar);
    root.append(form, main);

    this.renderIdle();
  }

  /** Resolves once every request issued so far has settled. */
  async idle(): Promise<void> {
    let snapshot;
    do {
      snapshot = this.pending;
      await snapshot;
    } while (snapshot !== this.pending);
  }

  search(query: string, offset = 0): Promise<void> {
    const work = this.runSearch(query, offset);
    this.pending = this.pending.then(() => work, () => work);
    return work;
  }

  private async runSearch(query: string, offset: number): Promise<void> {
    const trimmed = query.trim();
    if (!trimmed) {
      // input validation only; no request leaves the client
      this.state = { ...this.state, query: "", status: "idle", lastResponse: null };
      this.setPanel(this.results, emptyState("Enter a drug or disease name to search."));
      return;
    }

    const seq = ++this.seq;
    this.input.value = trimmed;
    this.state = { ...this.state, query: trimmed, offset, status: "loading" };
    this.setPanel(this.results, loadingNotice());
    this.syncUrl();

    const result = await this.client.search(trimmed, offset, this.state.limit);
    if (seq !== this.seq) return; // superseded

    if (!result.ok) {
      this.renderFailure(result.error, trimmed, offset);
      return;
    }
    this.state = { ...this.state, status: "ready", lastResponse: result.data };
    this.renderSearch(result.data);
    await this.loadReplacements(result.data, seq);
  }

  private async loadReplacements(response: SearchResponse, seq: number): Promise<void> {
    if (response.resolved.kind !== "drug") {
      this.replacementsHeading.textContent = "Replacements";
      this.setPanel(this.replacementsPanel, emptyState("Replacements apply to drug searches."));
      return;
    }
    const k = Number(this.kSelect.value);
    const result = await this.client.replacements(response.query, k);
    if (seq !== this.seq) return;
    if (!result.ok) {
      this.replacementsHeading.textContent = "Replacements";
      this.setPanel(this.replacementsPanel, errorBanner(result.error));
      return;
    }
    this.replacementsHeading.textContent = `Replacements (${result.data.length})`;
    this.setPanel(
      this.replacementsPanel,
      result.data.length ? replacementList(result.data) : emptyState("No replacements found."),
    );
  }

  private renderSearch(data: SearchResponse): void {
    this.resultsHeading.textContent = `Paragraphs (${data.total})`;
    this.results.innerHTML = "";
    if (data.paragraphs.length === 0) {
      this.results.append(emptyState("No paragraphs on this page."));
    }
    for (const paragraph of data.paragraphs) {
      this.results.append(paragraphCard(paragraph));
    }
    this.renderPager(data);

    const pivot = { onPivot: (label: string) => void this.search(label) };
    this.drugsHeading.textContent = `Related drugs (${data.related_drugs.length})`;
    this.setPanel(
      this.drugsPanel,
      data.related_drugs.length
        ? relatedDrugList(data.related_drugs, pivot)
        : emptyState("No related drugs."),
    );
    this.diseasesHeading.textContent = `Related diseases (${data.related_diseases.length})`;
    this.setPanel(
      this.diseasesPanel,
      data.related_diseases.length
        ? relatedDiseaseList(data.related_diseases, pivot)
        : emptyState("No related diseases."),
    );
  }

  private renderPager(data: SearchResponse): void {
    this.pager.innerHTML = "";
    const { offset, limit } = data.page;
    if (offset > 0) {
      const prev = document.createElement("button");
      prev.className = "prev";
      prev.textContent = "Previous";
      prev.addEventListener("click", () => void this.search(data.query, Math.max(0, offset - limit)));
      this.pager.append(prev);
    }
    if (offset + limit < data.total) {
      const next = document.createElement("button");
      next.className = "next";
      next.textContent = "Next";
      next.addEventListener("click", () => void this.search(data.query, offset + limit));
      this.pager.append(next);
    }
  }

  private renderFailure(error: ApiError, query: string, offset: number): void {
    this.state = { ...this.state, status: "error", lastResponse: null };
    if (error.kind === "http" && error.code === "unknown_term") {
      this.resultsHeading.textContent = "Paragraphs";
      this.setPanel(this.results, emptyState(`No results for "${query}".`));
    } else {
      this.setPanel(
        this.results,
        errorBanner(error, () => void this.search(query, offset)),
      );
    }
    this.setPanel(this.drugsPanel, emptyState("No data."));
    this.setPanel(this.diseasesPanel, emptyState("No data."));
    this.setPanel(this.replacementsPanel, emptyState("No data."));
    this.pager.innerHTML = "";
  }

  private renderIdle(): void {
    this.setPanel(this.results, emptyState("Enter a drug or disease name to search."));
    this.setPanel(this.drugsPanel, emptyState("No data."));
    this.setPanel(this.diseasesPanel, emptyState("No data."));
    this.setPanel(this.replacementsPanel, emptyState("No data."));
  }

  private setPanel(panel: HTMLElement, content: HTMLElement): void {
    panel.innerHTML = "";
    panel.append(content);
  }

  private syncUrl(): void {
    try {
      const params = new URLSearchParams();
      params.set("q", this.state.query);
      if (this.state.offset > 0) params.set("offset", String(this.state.offset));
      history.replaceState(null, "", `?${params.toString()}`);
    } catch {
      // non-browser environment; URL state is cosmetic
    }
  }
}

/** Build the app and, when the URL carries ?q=, run the initial search. */
export function mountApp(root: HTMLElement, client: ApiClient): App {
  const app = new App(root, client);
  try {
    const params = new URLSearchParams(location.search);
    const q = params.get("q");
    if (q) void app.search(q, Number(params.get("offset") ?? "0") || 0);
  } catch {
    // no location available
  }
  return app;
}
