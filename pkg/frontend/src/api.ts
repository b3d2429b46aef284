// Typed client for the analysis service (/api/v1). The UI never computes
// metrics itself: every ASR/accuracy it renders is a backend EvalReport
// field fetched through here.

export interface Meta {
  trigger_size: number;
  candidate_size: number;
  sigma_default: number;
  sigma_reference: number;
  attack_defaults: { steps: number; mc: number };
  epsilon_presets: { label: string; value: number }[];
}

export interface ModelSummary {
  id: string;
  num_classes: number;
  val_acc: number | null;
  image_size: number;
  poisoning?: string;
  trigger_id?: string | null;
}

export interface AttackItem {
  index: number;
  label: number;
  base_pred: number;
  smoothed_pred: number;
  achieved_l2: number;
  image_png: string; // base64
  source_png: string;
}

export interface AttackResult {
  run_id: string;
  model_id: string;
  items: AttackItem[];
}

export interface Job<T> {
  job_id: string;
  kind: string;
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  result: T | null;
  error: string | null;
}

export interface AttackParams {
  model_id: string;
  sigma?: number;
  epsilon?: number;
  steps?: number;
  mc?: number;
  mode?: string;
  regularizer?: string | null;
  num_images?: number;
  seed?: number;
}

export interface EvalReport {
  model_id: string;
  trigger_id: string;
  target_class: number;
  asr: number;
  clean_accuracy: number;
  num_evaluated: number;
  histogram: number[];
  placement: string;
  seed: number;
}

export interface Verdict {
  session: string;
  model_id: string;
  verdict: "poisoned" | "clean";
  ground_truth?: string;
}

export interface VerdictList {
  session: string;
  verdicts: Verdict[];
  session_accuracy?: number | null;
}

export class ApiClient {
  constructor(public base: string = "") {}

  private async req<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(`${this.base}/api/v1${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        detail = (await res.json()).detail ?? detail;
      } catch { /* not json */ }
      throw new ApiError(res.status, detail);
    }
    return res.json() as Promise<T>;
  }

  meta(): Promise<Meta> {
    return this.req("/meta");
  }

  async models(reveal = false): Promise<ModelSummary[]> {
    const q = reveal ? "?reveal=true" : "";
    return (await this.req<{ models: ModelSummary[] }>(`/models${q}`)).models;
  }

  startAttack(params: AttackParams): Promise<{ job_id: string }> {
    return this.req("/attacks", { method: "POST", body: JSON.stringify(params) });
  }

  attackJob(jobId: string): Promise<Job<AttackResult>> {
    return this.req(`/attacks/${jobId}`);
  }

  createTrigger(body: {
    source: { attack_job: string; image_index: number };
    kind: "color" | "crop";
    pixel?: [number, number];
    bbox?: [number, number, number, number];
    size?: [number, number];
  }): Promise<{ trigger_id: string; kind: string; png: string }> {
    return this.req("/triggers", { method: "POST", body: JSON.stringify(body) });
  }

  trigger(id: string): Promise<{ trigger_id: string; png: string; placement: string; name: string }> {
    return this.req(`/triggers/${id}`);
  }

  startEval(body: {
    model_id: string;
    trigger_id: string;
    target_class: number;
    placement?: string;
    seed?: number;
  }): Promise<{ job_id: string }> {
    return this.req("/evaluations", { method: "POST", body: JSON.stringify(body) });
  }

  evalJob(jobId: string): Promise<Job<EvalReport>> {
    return this.req(`/evaluations/${jobId}`);
  }

  postVerdict(body: {
    model_id: string;
    verdict: "poisoned" | "clean";
    session?: string;
    overwrite?: boolean;
  }): Promise<Verdict> {
    return this.req("/verdicts", { method: "POST", body: JSON.stringify(body) });
  }

  verdicts(session: string, reveal = false): Promise<VerdictList> {
    return this.req(`/verdicts?session=${encodeURIComponent(session)}&reveal=${reveal}`);
  }

  /** Poll a job until it finishes. */
  async waitFor<T>(
    fetchJob: (id: string) => Promise<Job<T>>, jobId: string,
    onProgress?: (frac: number) => void, intervalMs = 300, timeoutMs = 600_000,
  ): Promise<T> {
    const t0 = Date.now();
    for (;;) {
      const job = await fetchJob(jobId);
      onProgress?.(job.progress);
      if (job.status === "done") return job.result as T;
      if (job.status === "failed") throw new Error(job.error ?? "job failed");
      if (Date.now() - t0 > timeoutMs) throw new Error(`job ${jobId} timed out`);
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}
