// Client for the decision endpoint. The UI never computes probabilities
// itself; every displayed number comes from these calls.

export interface DecideRequest {
  stratum: string;
  x1: number;
  x2?: number;
  cutoff?: number;
}

export interface DecisionResponse {
  stratum: string;
  x1: number;
  x2: number | null;
  cutoff: number;
  probability_eligible: number;
  posterior_mean: number;
  posterior_sd: number;
  recommendation: 'accept' | 'defer' | 'retest-informative';
  band: [number, number];
  grid: number[];
  prior_density: number[];
  likelihood_density: number[];
  posterior_density: number[];
  averaged_over_draws: boolean;
  n_draws: number;
  warnings: string[];
}

export interface ModelInfo {
  kind: string;
  strata: string[];
  cutoffs: Record<string, number>;
  converged?: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number | null,
    public readonly fields?: Record<string, string>,
  ) {
    super(message);
  }
}

export class DecisionApi {
  constructor(
    public baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  async model(): Promise<ModelInfo> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}/model`);
    } catch (err) {
      throw new ApiError(`endpoint unreachable: ${String(err)}`, null);
    }
    if (!resp.ok) {
      throw new ApiError(`GET /model failed (${resp.status})`, resp.status);
    }
    return (await resp.json()) as ModelInfo;
  }

  async decide(req: DecideRequest, signal?: AbortSignal): Promise<DecisionResponse> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}/decide`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(req),
        signal,
      });
    } catch (err) {
      if (err instanceof DOMException && err.name === 'AbortError') throw err;
      throw new ApiError(`endpoint unreachable: ${String(err)}`, null);
    }
    const body = await resp.json().catch(() => null);
    if (!resp.ok) {
      const fields = body && typeof body === 'object' ? body.fields : undefined;
      const msg = body && body.error ? String(body.error) : `HTTP ${resp.status}`;
      throw new ApiError(msg, resp.status, fields);
    }
    return body as DecisionResponse;
  }
}
