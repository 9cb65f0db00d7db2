/** Page wiring: image picker, prompt form, advanced options drawer,
 * history, comparison, export, and the engine health indicator. */

import { EngineClient } from "./api.js";
import { buildCompareView } from "./compare.js";
import { SerialQueue } from "./queue.js";
import { renderComparePanels, renderEntryCard } from "./render.js";
import { Session } from "./session.js";
import type { ExplainOptions } from "./types.js";
import { LAM_MODES, METHODS } from "./types.js";

const DEFAULT_BASE_URL = "http://127.0.0.1:8000";
const BASE_URL_KEY = "prompt-explorer.base-url";

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setupOptionSelect(select: HTMLSelectElement, values: readonly string[]): void {
  for (const value of values) {
    const option = document.createElement("option");
    option.value = value;
    option.textContent = value;
    select.appendChild(option);
  }
}

export function startApp(): void {
  const session = new Session();
  const queue = new SerialQueue();

  const baseUrlInput = byId<HTMLInputElement>("base-url");
  baseUrlInput.value = localStorage.getItem(BASE_URL_KEY) ?? DEFAULT_BASE_URL;
  let client = new EngineClient(baseUrlInput.value);

  const healthDot = byId<HTMLSpanElement>("health");
  const imageInput = byId<HTMLInputElement>("image-input");
  const preview = byId<HTMLImageElement>("preview");
  const promptInput = byId<HTMLInputElement>("prompt");
  const submitButton = byId<HTMLButtonElement>("submit");
  const formError = byId<HTMLParagraphElement>("form-error");
  const historyRoot = byId<HTMLDivElement>("history");
  const compareRoot = byId<HTMLDivElement>("compare");
  const exportButton = byId<HTMLButtonElement>("export");
  const methodSelect = byId<HTMLSelectElement>("method");
  const lamSelect = byId<HTMLSelectElement>("lam-mode");
  const layersInput = byId<HTMLInputElement>("layers");

  setupOptionSelect(methodSelect, METHODS);
  setupOptionSelect(lamSelect, LAM_MODES);

  let photo: HTMLImageElement | null = null;

  async function refreshHealth(): Promise<void> {
    const result = await client.health();
    if (result.ok) {
      healthDot.className = "health ok";
      healthDot.title = `engine ${result.payload.version} (${result.payload.kernel_backend})`;
      healthDot.textContent = "engine: online";
    } else {
      healthDot.className = "health down";
      healthDot.title = result.message;
      healthDot.textContent = "engine: offline";
    }
  }

  baseUrlInput.addEventListener("change", () => {
    client = new EngineClient(baseUrlInput.value);
    localStorage.setItem(BASE_URL_KEY, baseUrlInput.value);
    void refreshHealth();
  });

  imageInput.addEventListener("change", () => {
    const file = imageInput.files?.[0];
    if (!file) return;
    session.selectImage(file, file.name);
    const url = URL.createObjectURL(file);
    preview.src = url;
    preview.hidden = false;
    const img = new Image();
    img.src = url;
    photo = img;
  });

  function currentOptions(): ExplainOptions {
    const options: ExplainOptions = {
      method: methodSelect.value,
      lam_mode: lamSelect.value,
    };
    if (layersInput.value.trim() !== "") {
      options.layers = layersInput.value.trim();
    }
    return options;
  }

  function renderHistory(): void {
    historyRoot.replaceChildren();
    for (const entry of [...session.history].reverse()) {
      historyRoot.appendChild(
        renderEntryCard(entry, photo, {
          onRetry: (id) => {
            const { prompt, options } = session.retryTarget(id);
            submit(prompt, options);
          },
          onToggleCompare: (id) => {
            const outcome = session.toggleSelect(id);
            if (outcome.warning) showFormError(outcome.warning);
            renderCompare();
          },
        }),
      );
    }
  }

  function renderCompare(): void {
    compareRoot.replaceChildren();
    if (session.selection.length >= 2) {
      const view = buildCompareView(session, session.selection);
      compareRoot.appendChild(renderComparePanels(view, photo));
    }
  }

  function showFormError(message: string | null): void {
    formError.textContent = message ?? "";
    formError.hidden = message === null;
  }

  function submit(prompt: string, options: ExplainOptions): void {
    let entryId: number;
    try {
      entryId = session.beginEntry(prompt, options).id;
    } catch (err) {
      showFormError(err instanceof Error ? err.message : String(err));
      return;
    }
    showFormError(null);
    renderHistory();
    const image = session.image;
    const imageName = session.imageName ?? "image";
    if (!image) return;
    void queue.run(async () => {
      const result = await client.explain(image, imageName, prompt, options);
      session.completeEntry(entryId, result);
      renderHistory();
      renderCompare();
      void refreshHealth();
    });
  }

  submitButton.addEventListener("click", () => {
    submit(promptInput.value, currentOptions());
  });
  promptInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      submit(promptInput.value, currentOptions());
    }
  });

  exportButton.addEventListener("click", () => {
    const blob = new Blob([session.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "prompt-session.json";
    a.click();
    URL.revokeObjectURL(a.href);
  });

  void refreshHealth();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  startApp();
}
