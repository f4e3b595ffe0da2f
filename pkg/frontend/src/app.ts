// DOM wiring for the explorer. All numbers on screen come from the
// service; this file only routes values between widgets and the pure
// rendering helpers.

import {
  ProtoshotClient,
  decodeArray,
  type AblationResult,
  type AdversarialResult,
  type AttributionResult,
  type SweepResult,
} from "./api";
import { TabRunner, SupersededError } from "./jobs";
import { MaskGrid } from "./mask";
import { formatScore, renderGrayscale, renderHeatmap, scaleRaster, type Raster } from "./palette";
import { SessionState, type ExperimentTab } from "./state";
import { chartGeometry, classPolyline, highlightFor, predictionSteps, previewRotation } from "./sweep";

const CELL = 8; // on-screen pixels per map cell
const TRACE_COLORS = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"];

const client = new ProtoshotClient("");
const session = new SessionState();
const runners: Record<ExperimentTab, TabRunner> = {
  attribute: new TabRunner(client),
  sweep: new TabRunner(client),
  ablate: new TabRunner(client),
  adversarial: new TabRunner(client),
  train: new TabRunner(client),
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function canvasCtx(id: string): [HTMLCanvasElement, CanvasRenderingContext2D] {
  const canvas = el<HTMLCanvasElement>(id);
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error(`no 2d context on #${id}`);
  return [canvas, ctx];
}

function blit(id: string, raster: Raster): void {
  const [canvas, ctx] = canvasCtx(id);
  canvas.width = raster.width;
  canvas.height = raster.height;
  ctx.putImageData(new ImageData(raster.pixels, raster.width, raster.height), 0, 0);
}

function setStatus(tab: ExperimentTab, text: string): void {
  el<HTMLSpanElement>(`${tab}-status`).textContent = text;
}

function numberInput(id: string): number {
  return Number(el<HTMLInputElement>(id).value);
}

// --- query sample browser ---------------------------------------------------

let queryImage: { data: Float64Array; height: number; width: number } | null = null;
const brush = new MaskGrid(28, 28);

async function refreshSamples(): Promise<void> {
  if (!session.datasetId) return;
  const cls = numberInput("support-class");
  const seed = numberInput("support-seed");
  const res = await client.samples(session.datasetId, { class: cls, seed, n: 9 });
  const decoded = decodeArray(res.images);
  const [, h, w] = [decoded.shape[0], decoded.shape[1], decoded.shape[2]];
  const strip = el<HTMLDivElement>("sample-strip");
  strip.textContent = "";
  res.indices.forEach((datasetIndex, i) => {
    const canvas = document.createElement("canvas");
    canvas.className = "sample";
    canvas.title = `index ${datasetIndex}`;
    const raster = scaleRaster(
      renderGrayscale(decoded.data.subarray(i * h * w, (i + 1) * h * w), h, w),
      3,
    );
    canvas.width = raster.width;
    canvas.height = raster.height;
    canvas.getContext("2d")?.putImageData(new ImageData(raster.pixels, raster.width), 0, 0);
    canvas.addEventListener("click", () => selectQuery(datasetIndex, decoded.data.subarray(i * h * w, (i + 1) * h * w), h, w));
    strip.appendChild(canvas);
  });
}

function selectQuery(datasetIndex: number, data: Float64Array, h: number, w: number): void {
  session.queryIndex = datasetIndex;
  queryImage = { data: Float64Array.from(data), height: h, width: w };
  el<HTMLSpanElement>("query-label").textContent = `query index ${datasetIndex}`;
  blit("query-canvas", scaleRaster(renderGrayscale(data, h, w), CELL));
  drawBrushCanvas();
  void refreshScore();
}

async function refreshScore(): Promise<void> {
  if (!session.modelId || !session.datasetId || session.queryIndex === null) return;
  const res = await client.score({
    model_id: session.modelId,
    class_index: session.support.classIndex,
    support: { n: session.support.n, seed: session.support.seed },
    dataset_id: session.datasetId,
    query_index: session.queryIndex,
  });
  el<HTMLSpanElement>("score-value").textContent =
    formatScore(res.score) + (res.degenerate ? " (degenerate)" : "");
}

// --- attribution tab ---------------------------------------------------------

async function runAttribution(): Promise<void> {
  const params = session.attributionParams({
    patchSize: numberInput("attr-patch"),
    referenceValue: numberInput("attr-reference"),
  });
  let result = session.cached<AttributionResult>("attribution", params);
  if (!result) {
    setStatus("attribute", "running...");
    result = await runners.attribute.run<AttributionResult>("attribution", params, (p) =>
      setStatus("attribute", `running ${(p * 100).toFixed(0)}%`),
    );
    session.store("attribution", params, result);
  }
  const map = decodeArray(result.map);
  const [h, w] = map.shape;
  blit("attr-canvas", scaleRaster(renderHeatmap(map.data, h, w, result.color_bound), CELL));
  setStatus(
    "attribute",
    `z_ref ${formatScore(result.z_ref)}, color bound ${formatScore(result.color_bound)}`,
  );
}

// --- sweep tab ----------------------------------------------------------------

let sweepTrace: SweepResult | null = null;

async function runSweep(): Promise<void> {
  const classes = el<HTMLInputElement>("sweep-classes").value
    .split(",")
    .map((s) => Number(s.trim()))
    .filter((v) => Number.isFinite(v));
  const params = session.sweepParams({ classes, stepDegrees: numberInput("sweep-step") });
  let result = session.cached<SweepResult>("sweep", params);
  if (!result) {
    setStatus("sweep", "running...");
    result = await runners.sweep.run<SweepResult>("sweep", params, (p) =>
      setStatus("sweep", `running ${(p * 100).toFixed(0)}%`),
    );
    session.store("sweep", params, result);
  }
  sweepTrace = result;
  const slider = el<HTMLInputElement>("sweep-slider");
  slider.max = String(result.parameter.length - 1);
  slider.value = "0";
  setStatus(
    "sweep",
    `agreement: protoshot ${formatScore(result.agreement.protoshot)}, ` +
      `exmatchina ${formatScore(result.agreement.exmatchina)}`,
  );
  drawSweep();
}

function drawSweep(): void {
  if (!sweepTrace) return;
  const trace = sweepTrace;
  const [canvas, ctx] = canvasCtx("sweep-canvas");
  const geom = chartGeometry(trace, canvas.width, canvas.height);
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // axes
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(geom.xFor(trace.parameter[0]), geom.yFor(0));
  ctx.lineTo(geom.xFor(trace.parameter[trace.parameter.length - 1]), geom.yFor(0));
  ctx.stroke();

  // one line per class score
  trace.classes.forEach((cls, col) => {
    ctx.strokeStyle = TRACE_COLORS[col % TRACE_COLORS.length];
    ctx.beginPath();
    classPolyline(trace, geom, col).forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
  });

  // step line for the model prediction, drawn along the bottom band
  ctx.strokeStyle = "#222";
  predictionSteps(trace).forEach((step) => {
    const y = geom.height - geom.pad / 2 - (step.predicted % 10);
    ctx.beginPath();
    ctx.moveTo(geom.xFor(step.fromAngle), y);
    ctx.lineTo(geom.xFor(step.toAngle), y);
    ctx.stroke();
  });

  // slider-linked highlight
  const idx = Number(el<HTMLInputElement>("sweep-slider").value);
  const hl = highlightFor(trace, idx);
  ctx.fillStyle = "#000";
  hl.scores.forEach((score) => {
    ctx.beginPath();
    ctx.arc(geom.xFor(hl.angle), geom.yFor(score), 3, 0, 2 * Math.PI);
    ctx.fill();
  });
  el<HTMLSpanElement>("sweep-readout").textContent =
    `${hl.angle.toFixed(1)} deg, predicted ${hl.predicted}, scores ` +
    trace.classes.map((c, col) => `${c}: ${formatScore(hl.scores[col])}`).join(", ");
  drawPreview(hl.angle);
}

function drawPreview(angle: number): void {
  if (!queryImage) return;
  const raster = scaleRaster(
    renderGrayscale(queryImage.data, queryImage.height, queryImage.width),
    CELL,
  );
  const [canvas, ctx] = canvasCtx("sweep-preview");
  canvas.width = raster.width;
  canvas.height = raster.height;
  const transform = previewRotation(angle);
  ctx.save();
  if (!transform.identity) {
    ctx.translate(raster.width / 2, raster.height / 2);
    ctx.rotate((transform.rotateDegrees * Math.PI) / 180);
    ctx.translate(-raster.width / 2, -raster.height / 2);
  }
  const off = document.createElement("canvas");
  off.width = raster.width;
  off.height = raster.height;
  off.getContext("2d")?.putImageData(new ImageData(raster.pixels, raster.width), 0, 0);
  ctx.drawImage(off, 0, 0);
  ctx.restore();
}

// --- ablation tab ---------------------------------------------------------------

function drawBrushCanvas(): void {
  if (!queryImage) return;
  const raster = scaleRaster(
    renderGrayscale(queryImage.data, queryImage.height, queryImage.width),
    CELL,
  );
  brush.overlayOnto(raster.pixels, CELL, [220, 60, 60, 140]);
  blit("ablate-canvas", raster);
}

function wireBrush(): void {
  const [canvas] = canvasCtx("ablate-canvas");
  let painting = false;
  const apply = (ev: MouseEvent) => {
    const rect = canvas.getBoundingClientRect();
    const row = Math.floor(((ev.clientY - rect.top) / rect.height) * brush.height);
    const col = Math.floor(((ev.clientX - rect.left) / rect.width) * brush.width);
    const radius = numberInput("ablate-radius");
    if (el<HTMLInputElement>("ablate-erase").checked) brush.erase(row, col, radius);
    else brush.paint(row, col, radius);
    drawBrushCanvas();
  };
  canvas.addEventListener("mousedown", (ev) => {
    painting = true;
    apply(ev);
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (painting) apply(ev);
  });
  window.addEventListener("mouseup", () => (painting = false));
}

async function runAblation(): Promise<void> {
  if (brush.count() === 0) {
    setStatus("ablate", "paint a region first");
    return;
  }
  const params = session.ablationParams([brush.toJobMask("brush")], numberInput("attr-reference"));
  let result = session.cached<AblationResult>("ablation", params);
  if (!result) {
    setStatus("ablate", "running...");
    result = await runners.ablate.run<AblationResult>("ablation", params);
    session.store("ablation", params, result);
  }
  const baseline = result.scores[0];
  const lines = result.scores
    .slice(1)
    .map((row) => `${row.id}: ${formatScore(row.score)} (delta ${formatScore(baseline.score - row.score)})`);
  setStatus("ablate", `baseline ${formatScore(baseline.score)}; ` + lines.join("; "));
}

// --- adversarial tab --------------------------------------------------------------

async function runAdversarial(): Promise<void> {
  const params = session.adversarialParams({
    n: numberInput("adv-n"),
    seed: numberInput("adv-seed"),
    epsilon: numberInput("adv-epsilon"),
  });
  let result = session.cached<AdversarialResult>("adversarial", params);
  if (!result) {
    setStatus("adversarial", "running...");
    result = await runners.adversarial.run<AdversarialResult>("adversarial", params, (p) =>
      setStatus("adversarial", `running ${(p * 100).toFixed(0)}%`),
    );
    session.store("adversarial", params, result);
  }
  setStatus(
    "adversarial",
    `mean benign ${formatScore(result.mean_benign)}, mean adversarial ` +
      `${formatScore(result.mean_adversarial)}, AUC ${formatScore(result.auc)}`,
  );
  const [canvas, ctx] = canvasCtx("adv-canvas");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#2980b9";
  ctx.beginPath();
  result.roc_points.forEach(([fpr, tpr], i) => {
    const x = fpr * (canvas.width - 2) + 1;
    const y = (1 - tpr) * (canvas.height - 2) + 1;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

// --- train tab ----------------------------------------------------------------------

async function runTrain(): Promise<void> {
  if (!session.datasetId) return;
  const params = {
    dataset_id: session.datasetId,
    arch: "compact",
    epochs: numberInput("train-epochs"),
    learning_rate: numberInput("train-lr"),
    seed: numberInput("train-seed"),
  };
  setStatus("train", "training...");
  try {
    const result = await runners.train.run<{ model_id: string; history: number[]; train_accuracy: number }>(
      "train",
      params,
      (p) => setStatus("train", `training ${(p * 100).toFixed(0)}%`),
    );
    setStatus(
      "train",
      `model ${result.model_id}: loss ${formatScore(result.history[result.history.length - 1])}, ` +
        `train accuracy ${formatScore(result.train_accuracy)}`,
    );
    await refreshRegistry();
  } catch (err) {
    if (!(err instanceof SupersededError)) throw err;
  }
}

// --- registry / wiring ------------------------------------------------------------

async function refreshRegistry(): Promise<void> {
  const [{ models }, { datasets }] = await Promise.all([client.listModels(), client.listDatasets()]);
  const modelSel = el<HTMLSelectElement>("model-select");
  modelSel.textContent = "";
  models.forEach((m) => {
    const opt = document.createElement("option");
    opt.value = m.id;
    opt.textContent = `${m.id} (${m.parameters.total.toLocaleString()} params)`;
    modelSel.appendChild(opt);
  });
  const dataSel = el<HTMLSelectElement>("dataset-select");
  dataSel.textContent = "";
  datasets.forEach((d) => {
    const opt = document.createElement("option");
    opt.value = d.id;
    opt.textContent = `${d.id} (${d.size} samples)`;
    dataSel.appendChild(opt);
  });
  session.modelId = modelSel.value || null;
  session.datasetId = dataSel.value || null;
}

function switchTab(tab: ExperimentTab): void {
  session.tab = tab;
  document.querySelectorAll<HTMLElement>(".tab-body").forEach((node) => {
    node.style.display = node.id === `tab-${tab}` ? "block" : "none";
  });
  document.querySelectorAll<HTMLButtonElement>(".tab-button").forEach((btn) => {
    btn.classList.toggle("active", btn.dataset.tab === tab);
  });
}

function guard(fn: () => Promise<void>): () => void {
  return () => {
    fn().catch((err) => {
      if (err instanceof SupersededError) return;
      console.error(err);
      setStatus(session.tab, String(err instanceof Error ? err.message : err));
    });
  };
}

export function main(): void {
  el<HTMLSelectElement>("model-select").addEventListener("change", (ev) => {
    session.modelId = (ev.target as HTMLSelectElement).value;
    void refreshScore();
  });
  el<HTMLSelectElement>("dataset-select").addEventListener("change", (ev) => {
    session.datasetId = (ev.target as HTMLSelectElement).value;
    void refreshSamples();
  });
  (["support-class", "support-seed", "support-n"] as const).forEach((id) => {
    el<HTMLInputElement>(id).addEventListener("change", () => {
      session.support = {
        classIndex: numberInput("support-class"),
        seed: numberInput("support-seed"),
        n: numberInput("support-n"),
      };
      void refreshSamples().then(refreshScore);
    });
  });
  document.querySelectorAll<HTMLButtonElement>(".tab-button").forEach((btn) => {
    btn.addEventListener("click", () => switchTab(btn.dataset.tab as ExperimentTab));
  });
  el<HTMLButtonElement>("attr-run").addEventListener("click", guard(runAttribution));
  el<HTMLButtonElement>("sweep-run").addEventListener("click", guard(runSweep));
  el<HTMLInputElement>("sweep-slider").addEventListener("input", drawSweep);
  el<HTMLButtonElement>("ablate-run").addEventListener("click", guard(runAblation));
  el<HTMLButtonElement>("ablate-clear").addEventListener("click", () => {
    brush.clear();
    drawBrushCanvas();
  });
  el<HTMLButtonElement>("adv-run").addEventListener("click", guard(runAdversarial));
  el<HTMLButtonElement>("train-run").addEventListener("click", guard(runTrain));
  wireBrush();
  switchTab("attribute");
  void refreshRegistry().then(refreshSamples);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  main();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", main);
}
