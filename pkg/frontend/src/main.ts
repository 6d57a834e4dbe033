/** Wire the session state to the page controls. */

import { ApiClient } from "./api.js";
import { gridToCsv, PatientSession } from "./session.js";
import { renderReadout, renderSurvival, renderTable, renderWeights } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const session = new PatientSession(api);

  const modelSelect = el<HTMLSelectElement>("model-select");
  const bmaToggle = el<HTMLInputElement>("bma-toggle");
  const baselineForm = el<HTMLFormElement>("baseline-form");
  const timeInput = el<HTMLInputElement>("meas-time");
  const valueInput = el<HTMLInputElement>("meas-value");
  const addButton = el<HTMLButtonElement>("meas-add");
  const horizonInput = el<HTMLInputElement>("horizon-time");
  const horizonButton = el<HTMLButtonElement>("horizon-set");
  const exportButton = el<HTMLButtonElement>("export-csv");
  const chart = document.getElementById("survival-chart") as unknown as SVGElement;
  const table = el<HTMLTableElement>("prob-table");
  const readout = el<HTMLDivElement>("readout");
  const weightsList = el<HTMLUListElement>("weights");

  const models = await api.listModels();
  for (const m of models) {
    const opt = document.createElement("option");
    opt.value = m.model_id;
    opt.textContent = `${m.model_id} (${m.family}, ${m.association})`;
    modelSelect.appendChild(opt);
  }
  if (models.length) {
    modelSelect.value = models[0].model_id;
    await session.selectModels([models[0].model_id]);
  }

  modelSelect.addEventListener("change", () => {
    const picked = Array.from(modelSelect.selectedOptions).map((o) => o.value);
    void session.selectModels(picked);
  });
  bmaToggle.addEventListener("change", () => session.setBmaEnabled(bmaToggle.checked));

  baselineForm.addEventListener("change", () => {
    const data = new FormData(baselineForm);
    const baseline: Record<string, number> = {};
    for (const [k, v] of data.entries()) {
      const num = Number(v);
      if (v !== "" && Number.isFinite(num)) baseline[k] = num;
    }
    session.setBaseline(baseline);
  });

  addButton.addEventListener("click", () => {
    const t = Number(timeInput.value);
    const y = Number(valueInput.value);
    if (!Number.isFinite(t) || !Number.isFinite(y)) return;
    if (session.addMeasurement(t, y)) {
      timeInput.value = "";
      valueInput.value = "";
    }
  });

  horizonButton.addEventListener("click", () => {
    const u = Number(horizonInput.value);
    if (Number.isFinite(u)) session.setHorizon(u);
  });

  exportButton.addEventListener("click", () => {
    const view = session.getView();
    if (!view.survival) return;
    const csv = gridToCsv(view.survival);
    const blob = new Blob([csv], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "survival_predictions.csv";
    a.click();
    URL.revokeObjectURL(a.href);
  });

  session.onChange((view) => {
    renderSurvival(chart, view);
    renderTable(table, view.survival);
    renderReadout(readout, view);
    renderWeights(weightsList, view.weights);
    exportButton.disabled = !view.survival;
  });
  exportButton.disabled = true;
}

void boot();
