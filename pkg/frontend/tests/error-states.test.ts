/**
 * Error handling with a mocked transport: schema violations, network
 * failures, and stale responses must all leave visible panel content.
 */

import { expect, test } from "vitest";
import { ApiClient } from "../src/client.js";
import { mountApp } from "../src/app.js";
import type { SearchResponse } from "../src/schemas.js";

const PANELS = ["#results", "#related-drugs", "#related-diseases", "#replacements"];

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function validSearch(query: string, total = 1): SearchResponse {
  return {
    query,
    resolved: { kind: "drug", code: "J05AE06", label: "Lopinavir" },
    total,
    page: { offset: 0, limit: 10 },
    paragraphs: [
      {
        paper_id: "doc1",
        paragraph_id: "doc1#p0",
        title: "A fixture paper",
        section: "abstract",
        text: "lopinavir improved outcomes",
        spans: [{ start: 0, end: 9, code: "J05AE06", kind: "drug", surface: "lopinavir" }],
      },
    ],
    related_drugs: [{ atc_code: "J05AB16", label: "Remdesivir", score: 1 }],
    related_diseases: [{ mesh_code: "C000657245", label: "COVID-19", score: 2 }],
  };
}

function mount(fetchImpl: (url: string) => Promise<Response>) {
  history.replaceState(null, "", "/"); // drop ?q= left by a previous test
  document.body.innerHTML = "";
  const root = document.createElement("div");
  document.body.append(root);
  const client = new ApiClient("", fetchImpl);
  const app = mountApp(root, client);
  return { root, client, app };
}

test("schema-invalid response renders an error state, never a blank panel", async () => {
  const { root, app } = mount(async () => jsonResponse({ totals: 3, rows: [] }));
  await app.search("lopinavir");
  await app.idle();

  const banner = root.querySelector("#results .error-banner");
  expect(banner).not.toBeNull();
  expect(banner?.classList.contains("schema")).toBe(true);
  for (const selector of PANELS) {
    const panel = root.querySelector(`${selector} .panel-body`);
    expect(panel?.textContent?.trim()).not.toBe("");
  }
});

test("schema-invalid replacements degrade to an error panel while results stay", async () => {
  const { root, app } = mount(async (url) =>
    url.includes("/search")
      ? jsonResponse(validSearch("lopinavir"))
      : jsonResponse([{ wrong: "shape" }]),
  );
  await app.search("lopinavir");
  await app.idle();

  expect(root.querySelectorAll(".paragraph-card").length).toBe(1);
  const banner = root.querySelector("#replacements .error-banner");
  expect(banner).not.toBeNull();
  expect(root.querySelector("#replacements .panel-body")?.textContent?.trim()).not.toBe("");
});

test("network failure renders a retryable banner and retry refetches", async () => {
  let calls = 0;
  const { root, app } = mount(async (url) => {
    if (url.includes("/search")) {
      calls += 1;
      if (calls === 1) throw new TypeError("connection refused");
      return jsonResponse(validSearch("lopinavir"));
    }
    return jsonResponse([]);
  });
  await app.search("lopinavir");
  await app.idle();

  const retry = root.querySelector<HTMLButtonElement>("#results .error-banner .retry");
  expect(retry).not.toBeNull();
  retry!.click();
  await app.idle();

  expect(root.querySelectorAll(".paragraph-card").length).toBe(1);
  expect(root.querySelector("#results .error-banner")).toBeNull();
});

test("stale responses are discarded by sequence number", async () => {
  const pendingByQuery = new Map<string, (response: Response) => void>();
  const { root, app } = mount((url) => {
    if (url.includes("/search")) {
      const q = decodeURIComponent(url.split("q=")[1]!.split("&")[0]!);
      return new Promise<Response>((resolve) => pendingByQuery.set(q, resolve));
    }
    return Promise.resolve(jsonResponse([]));
  });

  const first = app.search("slowdrug");
  const second = app.search("fastdrug");
  pendingByQuery.get("fastdrug")!(jsonResponse(validSearch("fastdrug", 7)));
  await second;
  pendingByQuery.get("slowdrug")!(jsonResponse(validSearch("slowdrug", 99)));
  await first;
  await app.idle();

  expect(root.querySelector("#results h2")?.textContent).toBe("Paragraphs (7)");
  expect(root.querySelector<HTMLInputElement>("input[name=q]")?.value).toBe("fastdrug");
});

test("http error bodies surface their message", async () => {
  const { root, app } = mount(async () =>
    jsonResponse({ error: "bad_pagination", message: "offset must be non-negative" }, 400),
  );
  await app.search("lopinavir");
  await app.idle();

  expect(root.querySelector("#results .error-banner .error-message")?.textContent).toBe(
    "offset must be non-negative",
  );
});
