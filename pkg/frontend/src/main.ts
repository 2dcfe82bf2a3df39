// DOM wiring: keyboard-first single-page flow over the session controller.

import { HttpApi, ChallengePayload } from "./api.js";
import { SessionController, SessionView, SummaryNumbers } from "./session.js";

const N_CHALLENGES = 10;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class DomView implements SessionView {
  private image = el<HTMLImageElement>("challenge-image");
  private input = el<HTMLInputElement>("answer-input");
  private progress = el<HTMLElement>("progress");
  private result = el<HTMLElement>("result");
  private summaryBox = el<HTMLElement>("summary");
  private errorBox = el<HTMLElement>("error");

  constructor(private controller: () => SessionController) {}

  showChallenge(challenge: ChallengePayload, index: number, total: number): void {
    this.errorBox.hidden = true;
    this.summaryBox.hidden = true;
    this.progress.textContent = `challenge ${index} / ${total}`;
    this.input.value = "";
    this.input.disabled = false;
    this.image.onload = () => this.controller().markPainted();
    this.image.src = `data:image/png;base64,${challenge.imageBase64}`;
    this.input.focus();
  }

  showResult(correct: boolean, runningAccuracy: number, runningMeanMs: number): void {
    this.result.textContent =
      `${correct ? "correct" : "wrong"} - accuracy ${(runningAccuracy * 100).toFixed(1)}%` +
      ` - mean time ${(runningMeanMs / 1000).toFixed(1)}s`;
    this.result.className = correct ? "good" : "bad";
  }

  showSummary(summary: SummaryNumbers): void {
    this.input.disabled = true;
    this.summaryBox.hidden = false;
    this.summaryBox.textContent =
      `session done: ${summary.correctCount}/${summary.attempts} correct ` +
      `(accuracy ${(summary.accuracy * 100).toFixed(2)}%), ` +
      `average time per challenge ${(summary.meanElapsedMs / 1000).toFixed(2)}s`;
  }

  showError(message: string, retry: () => void): void {
    this.errorBox.hidden = false;
    this.errorBox.textContent = `request failed: ${message} `;
    const button = document.createElement("button");
    button.textContent = "retry";
    button.onclick = () => retry();
    this.errorBox.appendChild(button);
  }
}

function boot(): void {
  let controller: SessionController;
  const view = new DomView(() => controller);
  controller = new SessionController(new HttpApi(""), view, N_CHALLENGES);

  const input = el<HTMLInputElement>("answer-input");
  const submit = el<HTMLButtonElement>("submit-button");
  const send = () => {
    if (input.value.length > 0) {
      input.disabled = true;
      void controller.submit(input.value).then(() => {
        if (!controller.isFinished) input.disabled = false;
      });
    }
  };
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") send();
  });
  submit.addEventListener("click", send);
  void controller.start();
}

document.addEventListener("DOMContentLoaded", boot);
