// Session state machine for the timed solving flow: fetch a challenge,
// start the clock when its image is painted, accept exactly one submission,
// then move on. The correct answer never reaches this side; correctness
// comes only from verify responses.

import { Api, ApiError, ChallengePayload } from "./api.js";

export interface Attempt {
  challengeId: string;
  correct: boolean;
  elapsedMs: number;
}

export interface SummaryNumbers {
  attempts: number;
  correctCount: number;
  accuracy: number;
  meanElapsedMs: number;
}

export interface SessionView {
  showChallenge(challenge: ChallengePayload, index: number, total: number): void;
  showResult(correct: boolean, runningAccuracy: number, runningMeanMs: number): void;
  showSummary(summary: SummaryNumbers): void;
  showError(message: string, retry: () => void): void;
}

export class SessionController {
  readonly attempts: Attempt[] = [];
  private current: ChallengePayload | null = null;
  private paintedAt: number | null = null;
  private submitted = false;
  private replaced = 0;
  private finished = false;

  constructor(
    private api: Api,
    private view: SessionView,
    private total: number,
    private session: string = "usability",
    private clock: () => number = () => performance.now(),
    private length: number = 4,
  ) {}

  get replacedCount(): number {
    return this.replaced;
  }

  get isFinished(): boolean {
    return this.finished;
  }

  async start(): Promise<void> {
    await this.nextChallenge();
  }

  // called by the view when the challenge image has actually been painted
  markPainted(): void {
    if (this.paintedAt === null) {
      this.paintedAt = this.clock();
    }
  }

  summary(): SummaryNumbers {
    const n = this.attempts.length;
    const correctCount = this.attempts.filter((a) => a.correct).length;
    const meanElapsedMs = n === 0 ? 0 : this.attempts.reduce((s, a) => s + a.elapsedMs, 0) / n;
    return { attempts: n, correctCount, accuracy: n === 0 ? 0 : correctCount / n, meanElapsedMs };
  }

  private async nextChallenge(): Promise<void> {
    if (this.attempts.length >= this.total) {
      this.finished = true;
      this.view.showSummary(this.summary());
      return;
    }
    try {
      this.current = await this.api.createChallenge(this.length, this.session);
    } catch (err) {
      this.view.showError(String(err), () => void this.nextChallenge());
      return;
    }
    this.paintedAt = null;
    this.submitted = false;
    this.view.showChallenge(this.current, this.attempts.length + 1, this.total);
  }

  async submit(answer: string): Promise<void> {
    if (this.current === null || this.submitted || this.finished) {
      return; // one submission per challenge; no edits after submit
    }
    const started = this.paintedAt ?? this.clock();
    const elapsedMs = this.clock() - started;
    this.submitted = true;
    try {
      const verdict = await this.api.verify(this.current.id, answer, elapsedMs);
      this.attempts.push({ challengeId: this.current.id, correct: verdict.correct, elapsedMs });
      const s = this.summary();
      this.view.showResult(verdict.correct, s.accuracy, s.meanElapsedMs);
      await this.nextChallenge();
    } catch (err) {
      if (err instanceof ApiError && (err.code === "consumed" || err.code === "expired")) {
        // stale challenge: log it and fetch a replacement, no attempt recorded
        this.replaced += 1;
        await this.nextChallenge();
        return;
      }
      this.submitted = false; // allow re-submission after a transient failure
      this.view.showError(String(err), () => void this.submit(answer));
    }
  }
}
