/** Single-patient session state and request orchestration.
 *
 * Holds the accumulating measurement history, issues debounced prediction
 * requests against the service, and keeps previous curves as ghost traces
 * so the dynamic update after each new measurement stays visible.
 */

import {
  ApiClient,
  BMAResponse,
  ModelDetail,
  PredictionGrid,
  SubjectPayload,
  SurvfitResponse,
} from "./api.js";

export interface Measurement {
  time: number;
  value: number;
}

export interface GhostTrace {
  conditioningTime: number;
  times: number[];
  mean: number[];
}

export interface HorizonReadout {
  time: number;
  mean: number;
  lower: number;
  upper: number;
}

export interface SessionView {
  /** Latest served survival grid, or the BMA combination when toggled. */
  survival: (SurvfitResponse & Partial<BMAResponse>) | null;
  longitudinal: PredictionGrid | null;
  ghosts: GhostTrace[];
  horizon: HorizonReadout | null;
  weights: Record<string, number> | null;
  validationMessage: string | null;
}

export interface SessionOptions {
  debounceMs?: number;
  /** Max ghost traces retained for comparison. */
  maxGhosts?: number;
  M?: number;
  seed?: number | null;
  mode?: string;
}

const DEFAULTS = { debounceMs: 300, maxGhosts: 5, M: 200, seed: null, mode: "mc" };

export class PatientSession {
  baseline: Record<string, number> = {};
  measurements: Measurement[] = [];
  selectedModels: string[] = [];
  bmaEnabled = false;
  horizonTime: number | null = null;

  private opts: Required<SessionOptions>;
  private details = new Map<string, ModelDetail>();
  private view: SessionView = {
    survival: null,
    longitudinal: null,
    ghosts: [],
    horizon: null,
    weights: null,
    validationMessage: null,
  };
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inflight: AbortController | null = null;
  private listeners: Array<(v: SessionView) => void> = [];
  private pendingRefresh: Promise<void> = Promise.resolve();

  constructor(
    private api: ApiClient,
    options: SessionOptions = {},
  ) {
    this.opts = { ...DEFAULTS, ...options } as Required<SessionOptions>;
  }

  onChange(fn: (v: SessionView) => void): void {
    this.listeners.push(fn);
  }

  getView(): SessionView {
    return this.view;
  }

  setBaseline(baseline: Record<string, number>): void {
    this.baseline = { ...baseline };
    if (this.measurements.length) this.scheduleRefresh();
  }

  async selectModels(modelIds: string[]): Promise<void> {
    this.selectedModels = [...modelIds];
    for (const id of modelIds) {
      if (!this.details.has(id)) {
        this.details.set(id, await this.api.modelDetail(id));
      }
    }
    if (this.measurements.length) this.scheduleRefresh();
  }

  setBmaEnabled(on: boolean): void {
    this.bmaEnabled = on;
    if (this.measurements.length) this.scheduleRefresh();
  }

  get conditioningTime(): number | null {
    const s = this.view.survival;
    if (s) return s.conditioning_time;
    const n = this.measurements.length;
    return n ? this.measurements[n - 1].time : null;
  }

  /** Append one biomarker measurement; times must strictly increase. */
  addMeasurement(time: number, value: number): boolean {
    const n = this.measurements.length;
    if (n && time <= this.measurements[n - 1].time) {
      this.emit({
        ...this.view,
        validationMessage:
          `measurement time ${time} is not after the last entered ` +
          `time ${this.measurements[n - 1].time}`,
      });
      return false;
    }
    if (!this.selectedModels.length) {
      this.emit({
        ...this.view,
        validationMessage: "select at least one model before prediction",
      });
      return false;
    }
    this.measurements.push({ time, value });
    this.emit({ ...this.view, validationMessage: null });
    this.scheduleRefresh();
    return true;
  }

  /** Highlight the survival probability at horizon u (must exceed the
   *  conditioning time). Extends the request grid when u is beyond it. */
  setHorizon(u: number): boolean {
    const t = this.conditioningTime;
    if (t === null || u <= t) {
      this.emit({
        ...this.view,
        validationMessage: `horizon ${u} must exceed the conditioning time`,
      });
      return false;
    }
    this.horizonTime = u;
    const s = this.view.survival;
    if (s && s.times.includes(u)) {
      const i = s.times.indexOf(u);
      this.emit({
        ...this.view,
        horizon: { time: u, mean: s.mean[i], lower: s.lower[i], upper: s.upper[i] },
        validationMessage: null,
      });
    } else {
      this.scheduleRefresh();
    }
    return true;
  }

  /** CSV of the current prediction grid, exactly as served. */
  exportTable(): string | null {
    const s = this.view.survival;
    if (!s) return null;
    return gridToCsv(s);
  }

  /** Wait for any scheduled or in-flight refresh to settle (test hook). */
  async settle(): Promise<void> {
    while (this.timer !== null) {
      await new Promise((r) => setTimeout(r, this.opts.debounceMs + 5));
    }
    await this.pendingRefresh;
  }

  private emit(v: SessionView): void {
    this.view = v;
    for (const fn of this.listeners) fn(v);
  }

  private subjectPayload(): SubjectPayload {
    const detail = this.details.get(this.selectedModels[0]);
    const timeCol = detail?.columns?.time ?? "time";
    const respCol = detail?.columns?.response ?? "y";
    return {
      rows: this.measurements.map((m) => ({ [timeCol]: m.time, [respCol]: m.value })),
      baseline: Object.keys(this.baseline).length ? this.baseline : null,
      last_known_alive: null,
    };
  }

  private requestTimes(): number[] | null {
    if (this.horizonTime === null) return null;
    const detail = this.details.get(this.selectedModels[0]);
    const grid = detail?.default_times ?? [];
    const t = this.conditioningTime ?? 0;
    const times = grid.filter((u) => u > t && u < this.horizonTime!);
    times.push(this.horizonTime);
    return times;
  }

  private scheduleRefresh(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.pendingRefresh = this.refresh();
    }, this.opts.debounceMs);
  }

  private async refresh(): Promise<void> {
    if (!this.selectedModels.length || !this.measurements.length) return;
    this.inflight?.abort();
    const ctrl = new AbortController();
    this.inflight = ctrl;
    const subject = this.subjectPayload();
    const times = this.requestTimes();
    const common = { M: this.opts.M, mode: this.opts.mode, seed: this.opts.seed, times };
    try {
      let surv: SurvfitResponse & Partial<BMAResponse>;
      let weights: Record<string, number> | null = null;
      if (this.bmaEnabled && this.selectedModels.length > 1) {
        const res = await this.api.bmaSurvfit(
          { model_ids: this.selectedModels, subject, ...common },
          ctrl.signal,
        );
        const last = this.measurements[this.measurements.length - 1].time;
        surv = { ...res, conditioning_time: last };
        weights = res.weights;
      } else {
        surv = await this.api.survfit(this.selectedModels[0], { subject, ...common }, ctrl.signal);
      }
      const futureTimes = (this.details.get(this.selectedModels[0])?.default_times ?? surv.times)
        .filter((u) => u >= surv.conditioning_time);
      const long = futureTimes.length
        ? await this.api.predictLong(
            this.selectedModels[0],
            { subject, times: futureTimes, M: this.opts.M, seed: this.opts.seed },
            ctrl.signal,
          )
        : null;
      if (ctrl.signal.aborted) return;

      const ghosts = [...this.view.ghosts];
      const prev = this.view.survival;
      if (prev && prev.conditioning_time !== surv.conditioning_time) {
        ghosts.push({
          conditioningTime: prev.conditioning_time,
          times: prev.times,
          mean: prev.mean,
        });
        while (ghosts.length > this.opts.maxGhosts) ghosts.shift();
      }
      let horizon: HorizonReadout | null = null;
      if (this.horizonTime !== null) {
        const i = surv.times.indexOf(this.horizonTime);
        if (i >= 0) {
          horizon = {
            time: this.horizonTime,
            mean: surv.mean[i],
            lower: surv.lower[i],
            upper: surv.upper[i],
          };
        }
      }
      this.emit({
        survival: surv,
        longitudinal: long,
        ghosts,
        horizon,
        weights,
        validationMessage: null,
      });
    } catch (err: unknown) {
      if (ctrl.signal.aborted) return;
      const msg = err instanceof Error ? err.message : String(err);
      this.emit({ ...this.view, validationMessage: msg });
    } finally {
      if (this.inflight === ctrl) this.inflight = null;
    }
  }
}

/** Canonical CSV of a served prediction grid: exactly the served numbers,
 *  shortest round-trip decimal form, one row per grid time. */
export function gridToCsv(grid: PredictionGrid): string {
  const lines = ["times,mean,median,lower,upper"];
  for (let i = 0; i < grid.times.length; i++) {
    lines.push(
      [grid.times[i], grid.mean[i], grid.median[i], grid.lower[i], grid.upper[i]]
        .map(formatNumber)
        .join(","),
    );
  }
  return lines.join("\n") + "\n";
}

/** Shortest decimal that round-trips the float (matches JSON serialization
 *  of the served value). */
export function formatNumber(x: number): string {
  return JSON.stringify(x);
}
