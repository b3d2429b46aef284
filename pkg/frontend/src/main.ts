// Two-panel analysis tool: attack/visualization on top, trigger workbench
// and evaluation below. The analyst picks a model, generates smoothed
// adversarial examples, builds triggers by pixel-picking or cropping, and
// records a poisoned/clean verdict per model.

import { ApiClient, ApiError, Meta, ModelSummary } from "./api.js";
import { decodeBase64Png } from "./png.js";
import {
  dragToRect, formatAsr, getPixel, loupeWindow, rgbHex, screenToImage,
  snapRect,
} from "./pixels.js";
import { GridItem, Session, WorkbenchTrigger } from "./session.js";
import { clear, drawImage, drawLoupe, el, imageCanvas } from "./ui.js";

const api = new ApiClient("");
const session = new Session();
let meta: Meta;

const $ = (id: string) => document.getElementById(id)!;
const status = (msg: string) => { $("status").textContent = msg; };

function showError(err: unknown): void {
  const msg = err instanceof ApiError ? `${err.status}: ${err.message}`
    : String(err);
  const bar = $("status");
  bar.textContent = `error - ${msg}`;
  bar.classList.add("error");
  setTimeout(() => bar.classList.remove("error"), 4000);
}

// ---------------------------------------------------------------------------
// model picker + attack form

async function loadModels(): Promise<void> {
  const models = await api.models();
  const select = $("model-select") as HTMLSelectElement;
  clear(select);
  for (const m of models) {
    select.append(el("option", { value: m.id },
                     [`${m.id} (${m.num_classes} classes)`]));
  }
  if (models.length) pickModel(models[0]);
  select.onchange = () => {
    const m = models.find((x) => x.id === select.value);
    if (m) pickModel(m);
  };
}

function pickModel(m: ModelSummary): void {
  session.selectModel(m);
  const target = $("eval-target") as HTMLSelectElement;
  clear(target);
  for (let c = 0; c < m.num_classes; c++) {
    target.append(el("option", { value: String(c) }, [`class ${c}`]));
  }
  target.value = String(Math.min(1, m.num_classes - 1));
  status(`model ${m.id} selected`);
}

function attackParams() {
  const eps = $("attack-eps") as HTMLSelectElement;
  return {
    model_id: session.model!.id,
    sigma: Number(($("attack-sigma") as HTMLInputElement).value),
    epsilon: Number(eps.value),
    steps: Number(($("attack-steps") as HTMLInputElement).value),
    mc: Number(($("attack-mc") as HTMLInputElement).value),
    regularizer: ($("attack-reg") as HTMLSelectElement).value || null,
    num_images: Number(($("attack-count") as HTMLInputElement).value),
    seed: Number(($("attack-seed") as HTMLInputElement).value),
  };
}

async function runAttack(): Promise<void> {
  if (!session.model) return;
  const btn = $("attack-run") as HTMLButtonElement;
  btn.disabled = true;
  try {
    const { job_id } = await api.startAttack(attackParams());
    session.attackJobId = job_id;
    const result = await api.waitFor(
      (id) => api.attackJob(id), job_id,
      (frac) => status(`attacking... ${(frac * 100).toFixed(0)}%`));
    session.attackResult = result;
    session.grid = await Promise.all(result.items.map(async (item) => ({
      index: item.index,
      basePred: item.base_pred,
      smoothedPred: item.smoothed_pred,
      achievedL2: item.achieved_l2,
      image: await decodeBase64Png(item.image_png),
      source: await decodeBase64Png(item.source_png),
    })));
    session.selected = session.grid[0] ?? null;
    status(`attack done: ${session.grid.length} adversarial examples`);
    session.notify();
  } catch (err) {
    showError(err);
  } finally {
    btn.disabled = false;
  }
}

// ---------------------------------------------------------------------------
// grid + workbench rendering

function renderGrid(): void {
  const grid = $("adv-grid");
  clear(grid);
  for (const item of session.grid) {
    const cell = el("figure", {
      class: item === session.selected ? "cell selected" : "cell",
    });
    cell.append(imageCanvas(item.image, 3));
    cell.append(el("figcaption", {}, [
      `pred: class ${item.basePred}`,
      el("small", {}, [` smoothed ${item.smoothedPred} | l2 ${item.achievedL2.toFixed(2)}`]),
    ]));
    cell.onclick = () => {
      session.selected = item;
      session.notify();
    };
    grid.append(cell);
  }
}

const ZOOM = 8;
let dragStart: { x: number; y: number } | null = null;

function renderWorkbench(): void {
  const host = $("work-canvas-host");
  clear(host);
  const item = session.selected;
  if (!item) return;
  const canvas = el("canvas", { class: "work-canvas" });
  drawImage(canvas, item.image, ZOOM);
  const overlay = el("div", { class: "crop-overlay" });
  host.append(canvas, overlay);

  const toImage = (ev: MouseEvent) => {
    const r = canvas.getBoundingClientRect();
    return screenToImage(ev.clientX - r.left, ev.clientY - r.top, ZOOM,
                         item.image);
  };

  canvas.onmousemove = (ev) => {
    const p = toImage(ev);
    if (!p) return;
    const { origin, size } = loupeWindow(item.image, p.x, p.y, 4);
    drawLoupe($("loupe") as HTMLCanvasElement, item.image, origin.x, origin.y,
              size, 14, p.x, p.y);
    const rgb = getPixel(item.image, p.x, p.y);
    $("loupe-info").textContent =
      `(${p.x},${p.y}) ${rgbHex(rgb)} = ${rgb.r},${rgb.g},${rgb.b}`;
    if (dragStart) {
      let rect = dragToRect(dragStart.x, dragStart.y, p.x, p.y, item.image);
      if (($("snap-toggle") as HTMLInputElement).checked) {
        rect = snapRect(rect, meta.candidate_size, item.image);
      }
      overlay.style.display = "block";
      overlay.style.left = `${rect.x * ZOOM}px`;
      overlay.style.top = `${rect.y * ZOOM}px`;
      overlay.style.width = `${rect.w * ZOOM}px`;
      overlay.style.height = `${rect.h * ZOOM}px`;
    }
  };
  canvas.onmousedown = (ev) => {
    dragStart = toImage(ev);
  };
  canvas.onmouseup = async (ev) => {
    const start = dragStart;
    dragStart = null;
    overlay.style.display = "none";
    const end = toImage(ev);
    if (!start || !end) return;
    const moved = Math.abs(end.x - start.x) > 1 || Math.abs(end.y - start.y) > 1;
    try {
      if (!moved) {
        await createColorTrigger(item, start.x, start.y);
      } else {
        let rect = dragToRect(start.x, start.y, end.x, end.y, item.image);
        if (($("snap-toggle") as HTMLInputElement).checked) {
          rect = snapRect(rect, meta.candidate_size, item.image);
        }
        await createCropTrigger(item, rect.x, rect.y, rect.h, rect.w);
      }
    } catch (err) {
      showError(err);
    }
  };
}

async function createColorTrigger(item: GridItem, x: number,
                                  y: number): Promise<void> {
  const size = meta.candidate_size;
  const res = await api.createTrigger({
    source: { attack_job: session.attackJobId!, image_index: item.index },
    kind: "color", pixel: [x, y], size: [size, size],
  });
  session.addTrigger({
    triggerId: res.trigger_id, kind: "color",
    image: await decodeBase64Png(res.png),
  });
  status(`color trigger from (${x},${y})`);
}

async function createCropTrigger(item: GridItem, x: number, y: number,
                                 h: number, w: number): Promise<void> {
  const res = await api.createTrigger({
    source: { attack_job: session.attackJobId!, image_index: item.index },
    kind: "crop", bbox: [x, y, h, w],
  });
  session.addTrigger({
    triggerId: res.trigger_id, kind: "crop",
    image: await decodeBase64Png(res.png),
  });
  status(`crop trigger ${w}x${h} at (${x},${y})`);
}

// ---------------------------------------------------------------------------
// evaluation + comparison

async function evaluateTrigger(t: WorkbenchTrigger): Promise<void> {
  const target = Number(($("eval-target") as HTMLSelectElement).value);
  const placement = ($("eval-placement") as HTMLSelectElement).value;
  status(`evaluating ${t.triggerId}...`);
  const { job_id } = await api.startEval({
    model_id: session.model!.id, trigger_id: t.triggerId,
    target_class: target, placement,
  });
  const report = await api.waitFor((id) => api.evalJob(id), job_id);
  session.setReport(t.triggerId, report);
  status(`ASR ${formatAsr(report.asr)} for ${t.triggerId}`);
}

function renderTriggers(): void {
  const list = $("trigger-list");
  clear(list);
  for (const t of session.triggers) {
    const row = el("div", { class: "trigger-row" });
    row.append(imageCanvas(t.image, 6, "trigger-thumb"));
    row.append(el("span", { class: `tag ${t.kind}` }, [t.kind]));
    const btn = el("button", {}, ["evaluate"]) as HTMLButtonElement;
    btn.onclick = () => evaluateTrigger(t).catch(showError);
    row.append(btn);
    row.append(el("span", { class: "asr" },
                  [t.report ? formatAsr(t.report.asr) : "-"]));
    list.append(row);
  }
}

function renderCompare(): void {
  const tbody = $("compare-body");
  clear(tbody);
  for (const t of session.compareRows()) {
    const r = t.report!;
    const row = el("tr", { class: t.kind === "original" ? "original" : "" });
    const cell = el("td");
    cell.append(imageCanvas(t.image, 4, "trigger-thumb"));
    row.append(cell);
    row.append(el("td", {}, [t.kind]));
    row.append(el("td", {}, [formatAsr(r.asr)]));
    row.append(el("td", {}, [formatAsr(r.clean_accuracy)]));
    row.append(el("td", {}, [`${r.num_evaluated}`]));
    tbody.append(row);
  }
}

// ---------------------------------------------------------------------------
// verdicts

async function postVerdict(verdict: "poisoned" | "clean"): Promise<void> {
  if (!session.model) return;
  session.verdicts.set(session.model.id, verdict);  // optimistic
  session.notify();
  try {
    await api.postVerdict({
      model_id: session.model.id, verdict, session: session.sessionTag,
      overwrite: true,
    });
    status(`verdict recorded: ${session.model.id} is ${verdict}`);
  } catch (err) {
    session.verdicts.delete(session.model.id);
    session.notify();
    showError(err);
  }
}

async function revealAccuracy(): Promise<void> {
  const out = await api.verdicts(session.sessionTag, true);
  session.revealed = true;
  const acc = out.session_accuracy;
  $("verdict-accuracy").textContent = acc == null
    ? "no verdicts yet"
    : `session accuracy: ${(acc * 100).toFixed(0)}% (${out.verdicts.length} verdicts)`;
  const log = $("verdict-log");
  clear(log);
  for (const v of out.verdicts) {
    log.append(el("li", {}, [
      `${v.model_id}: ${v.verdict}`,
      v.ground_truth ? ` (truth: ${v.ground_truth})` : "",
    ]));
  }
  // debrief mode: add the original trigger to the comparison when known
  const models = await api.models(true);
  const mine = models.find((m) => m.id === session.model?.id);
  if (mine?.trigger_id
      && !session.triggers.some((t) => t.triggerId === mine.trigger_id)) {
    const trig = await api.trigger(mine.trigger_id);
    session.addTrigger({
      triggerId: trig.trigger_id, kind: "original",
      image: await decodeBase64Png(trig.png),
    });
  }
}

// ---------------------------------------------------------------------------
// boot

async function boot(): Promise<void> {
  meta = await api.meta();
  ($("attack-sigma") as HTMLInputElement).value = String(meta.sigma_default);
  ($("attack-steps") as HTMLInputElement).value =
    String(meta.attack_defaults.steps);
  ($("attack-mc") as HTMLInputElement).value = String(meta.attack_defaults.mc);
  const eps = $("attack-eps") as HTMLSelectElement;
  for (const preset of meta.epsilon_presets) {
    eps.append(el("option", { value: String(preset.value) }, [preset.label]));
  }
  $("attack-run").onclick = () => { void runAttack(); };
  $("verdict-poisoned").onclick = () => { void postVerdict("poisoned"); };
  $("verdict-clean").onclick = () => { void postVerdict("clean"); };
  $("verdict-reveal").onclick = () => { revealAccuracy().catch(showError); };
  session.onChange(() => {
    renderGrid();
    renderWorkbench();
    renderTriggers();
    renderCompare();
  });
  await loadModels();
  status("ready");
}

boot().catch(showError);
