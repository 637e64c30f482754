/** Browser entry point. The API base URL is injected at build time. */

import { ApiClient } from "./client.js";
import { mountApp } from "./app.js";

declare const __D4C_API_BASE__: string | undefined;

const base = typeof __D4C_API_BASE__ === "string" ? __D4C_API_BASE__ : "";
const root = document.getElementById("app");
if (root) mountApp(root, new ApiClient(base));
