/** Typed client for the proofgen HTTP JSON API. */

export interface TheoremSummary {
  id: number;
  title: string;
  has_gold: boolean;
}

export interface TheoremPage {
  items: TheoremSummary[];
  total: number;
  offset: number;
  limit: number;
}

export interface TheoremDetail {
  id: number;
  title: string;
  content: string;
  gold_titles: string[];
  gold_steps: string[] | null;
}

export interface Suggestion {
  text: string;
  logprob: number;
  covered_titles: string[];
  terminated: boolean;
}

export interface SuggestResult {
  suggestions: Suggestion[];
  cost: number;
}

export interface SuggestParams {
  theorem_id: number;
  proof_so_far: string[];
  setting?: string;
  constraint_titles?: string[];
  k?: number;
  temperature?: number;
  seed?: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function readDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === 'string') return body.detail;
  } catch {
    // Non-JSON error body; fall through to the generic message.
  }
  return `request failed with status ${response.status}`;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path);
    if (!response.ok) throw new ApiError(response.status, await readDetail(response));
    return response.json() as Promise<T>;
  }

  async health(): Promise<{ status: string }> {
    return this.get('/health');
  }

  async listTheorems(query = ''): Promise<TheoremPage> {
    const qs = query ? `?query=${encodeURIComponent(query)}` : '';
    return this.get(`/v1/theorems${qs}`);
  }

  async getTheorem(id: number): Promise<TheoremDetail> {
    return this.get(`/v1/theorems/${id}`);
  }

  async suggest(params: SuggestParams): Promise<SuggestResult> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/suggest`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(params),
    });
    if (!response.ok) throw new ApiError(response.status, await readDetail(response));
    return response.json() as Promise<SuggestResult>;
  }
}
