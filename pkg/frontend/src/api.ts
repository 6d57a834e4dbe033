/** Typed client for the jointsurv prediction service.
 *
 * The UI never computes statistics itself: every number it displays comes
 * verbatim from one of these response payloads.
 */

export interface SubjectPayload {
  rows: Record<string, number>[];
  baseline?: Record<string, number> | null;
  last_known_alive?: number | null;
}

export interface ModelSummary {
  model_id: string;
  n_subjects: number | null;
  n_long_rows: number | null;
  family: string;
  association: string;
  columns: Record<string, string>;
}

export interface ModelDetail extends ModelSummary {
  fingerprint: Record<string, unknown>;
  default_times: number[] | null;
  n_draws: number;
  warnings: string[];
}

export interface PredictionGrid {
  times: number[];
  mean: number[];
  median: number[];
  lower: number[];
  upper: number[];
  M: number;
  kind: string;
}

export interface SurvfitResponse extends PredictionGrid {
  conditioning_time: number;
}

export interface BMAResponse extends PredictionGrid {
  weights: Record<string, number>;
}

export interface SurvfitRequest {
  subject: SubjectPayload;
  times?: number[] | null;
  M?: number;
  mode?: string;
  seed?: number | null;
}

export interface PredictLongRequest {
  subject: SubjectPayload;
  times: number[];
  type?: string;
  interval?: string;
  M?: number;
  seed?: number | null;
}

export interface BMARequest {
  model_ids: string[];
  subject: SubjectPayload;
  times?: number[] | null;
  M?: number;
  mode?: string;
  seed?: number | null;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public kind: string,
    detail: string,
  ) {
    super(detail);
  }
}

/** Minimal transport seam so tests can substitute a recorded contract. */
export interface Transport {
  (path: string, init?: RequestInit): Promise<Response>;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private transport: Transport = (p, init) => fetch(p, init),
  ) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.transport(this.base + path, init);
    const body = await res.json();
    if (!res.ok) {
      throw new ServiceError(
        res.status,
        (body && body.kind) || "HTTPError",
        (body && body.detail) || `request failed with ${res.status}`,
      );
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown, signal?: AbortSignal): Promise<T> {
    return this.call<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
      signal,
    });
  }

  listModels(): Promise<ModelSummary[]> {
    return this.call<ModelSummary[]>("/models");
  }

  modelDetail(modelId: string): Promise<ModelDetail> {
    return this.call<ModelDetail>(`/models/${encodeURIComponent(modelId)}`);
  }

  survfit(modelId: string, req: SurvfitRequest, signal?: AbortSignal): Promise<SurvfitResponse> {
    return this.post(`/models/${encodeURIComponent(modelId)}/survfit`, req, signal);
  }

  predictLong(
    modelId: string,
    req: PredictLongRequest,
    signal?: AbortSignal,
  ): Promise<PredictionGrid> {
    return this.post(`/models/${encodeURIComponent(modelId)}/predict-long`, req, signal);
  }

  bmaSurvfit(req: BMARequest, signal?: AbortSignal): Promise<BMAResponse> {
    return this.post("/bma/survfit", req, signal);
  }
}
