// Workbench state: what the analyst has loaded, built and concluded.
// Pure state + change notification; all numbers shown in the UI come from
// backend reports stored here verbatim.

import type { AttackResult, EvalReport, ModelSummary } from "./api.js";
import type { DecodedImage } from "./png.js";

export interface WorkbenchTrigger {
  triggerId: string;
  kind: "color" | "crop" | "original";
  image: DecodedImage;
  report?: EvalReport;
}

export interface GridItem {
  index: number;
  basePred: number;
  smoothedPred: number;
  achievedL2: number;
  image: DecodedImage;
  source: DecodedImage;
}

export class Session {
  model: ModelSummary | null = null;
  attackJobId: string | null = null;
  attackResult: AttackResult | null = null;
  grid: GridItem[] = [];
  selected: GridItem | null = null;
  triggers: WorkbenchTrigger[] = [];
  verdicts = new Map<string, "poisoned" | "clean">();
  sessionTag = "default";
  revealed = false;

  private listeners: (() => void)[] = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  notify(): void {
    for (const fn of this.listeners) fn();
  }

  selectModel(model: ModelSummary): void {
    this.model = model;
    this.attackJobId = null;
    this.attackResult = null;
    this.grid = [];
    this.selected = null;
    this.triggers = [];
    this.notify();
  }

  addTrigger(t: WorkbenchTrigger): void {
    this.triggers.push(t);
    this.notify();
  }

  setReport(triggerId: string, report: EvalReport): void {
    const t = this.triggers.find((x) => x.triggerId === triggerId);
    if (t) t.report = report;
    this.notify();
  }

  /** Rows for the comparison panel: evaluated triggers sorted by ASR
   *  descending, the original (when revealed) flagged. */
  compareRows(): WorkbenchTrigger[] {
    return this.triggers
      .filter((t) => t.report)
      .sort((a, b) => (b.report!.asr - a.report!.asr));
  }
}
