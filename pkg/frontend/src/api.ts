// Typed client for the challenge service's three JSON endpoints.

export interface ChallengePayload {
  id: string;
  imageBase64: string;
}

export interface VerifyResult {
  correct: boolean;
}

export interface SessionStats {
  session: string;
  attempts: number;
  accuracy: number | null;
  mean_elapsed_ms: number | null;
  confusion: Record<string, Record<string, number>>;
}

export class ApiError extends Error {
  constructor(public code: string, public status: number) {
    super(`${code} (${status})`);
  }
}

export interface Api {
  createChallenge(length: number, session: string): Promise<ChallengePayload>;
  verify(id: string, answer: string, elapsedMs: number): Promise<VerifyResult>;
  stats(session: string): Promise<SessionStats>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError((body as { error?: string }).error ?? "http_error", resp.status);
  }
  return body as T;
}

export class HttpApi implements Api {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    }).then((r) => parse<T>(r));
  }

  async createChallenge(length: number, session: string): Promise<ChallengePayload> {
    const raw = await this.post<{ id: string; image_base64: string }>("/api/challenge", {
      length,
      session,
    });
    return { id: raw.id, imageBase64: raw.image_base64 };
  }

  verify(id: string, answer: string, elapsedMs: number): Promise<VerifyResult> {
    return this.post<VerifyResult>("/api/verify", { id, answer, elapsed_ms: elapsedMs });
  }

  stats(session: string): Promise<SessionStats> {
    return this.fetchFn(`/api/stats?session=${encodeURIComponent(session)}`).then((r) =>
      parse<SessionStats>(r),
    );
  }
}
