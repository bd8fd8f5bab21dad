// Annotation session state machine, free of DOM concerns so it can run
// under tests and against a live service alike.

import { ApiClient, Choice, Task, VoteOutcome } from "./api.js";

export type SideChoice = "left" | "right" | "equal" | "unsure";

export interface PairView {
  // both urls rendered at equal height; buttons stay disabled until loaded
  showPair(leftUrl: string, rightUrl: string): void;
  showDone(completed: number): void;
  showRetry(message: string): void;
  setBusy(busy: boolean): void;
  updateCount(completed: number): void;
}

interface CurrentTask {
  task: Task;
  swapped: boolean; // true when image B is displayed on the left
}

export class Session {
  completed = 0;
  drained = false;
  current: CurrentTask | null = null;
  private submitting = false;

  constructor(
    readonly api: ApiClient,
    readonly view: PairView,
    readonly annotatorId: string,
    // injectable for deterministic tests; defaults to real randomness
    readonly random: () => number = Math.random,
  ) {}

  // Left/right order is randomized per display to cancel position bias;
  // the mapping is resolved back to (a, b) before posting.
  async fetchAndRenderNext(): Promise<void> {
    this.view.setBusy(true);
    try {
      const resp = await this.api.nextTask(this.annotatorId);
      if (resp.status === "drained" || resp.task === null) {
        this.drained = true;
        this.current = null;
        this.view.showDone(this.completed);
        return;
      }
      const swapped = this.random() < 0.5;
      this.current = { task: resp.task, swapped };
      const urlA = this.api.imageUrl(resp.task, "a");
      const urlB = this.api.imageUrl(resp.task, "b");
      this.view.showPair(swapped ? urlB : urlA, swapped ? urlA : urlB);
    } catch (err) {
      this.view.showRetry(`could not load the next pair: ${err}`);
    } finally {
      this.view.setBusy(false);
    }
  }

  resolveChoice(side: SideChoice): Choice {
    if (side === "equal" || side === "unsure") return side;
    if (this.current === null) throw new Error("no task displayed");
    const leftIsA = !this.current.swapped;
    const pickedLeft = side === "left";
    return pickedLeft === leftIsA ? "a_higher" : "b_higher";
  }

  async submitChoice(side: SideChoice): Promise<VoteOutcome | null> {
    if (this.current === null || this.submitting) return null;
    const { task } = this.current;
    const choice = this.resolveChoice(side);
    this.submitting = true;
    this.view.setBusy(true);
    try {
      // idempotency rests on the (task_id, annotator_id) key server-side:
      // a duplicate replay acks without double counting
      const outcome = await this.api.submitVote(task.task_id, this.annotatorId, choice);
      this.completed += 1;
      this.view.updateCount(this.completed);
      this.current = null;
      await this.fetchAndRenderNext();
      return outcome;
    } catch (err) {
      this.view.showRetry(`vote not stored yet: ${err}`);
      return null;
    } finally {
      this.submitting = false;
      this.view.setBusy(false);
    }
  }
}

export const KEY_BINDINGS: Record<string, SideChoice> = {
  ArrowLeft: "left",
  ArrowRight: "right",
  e: "equal",
  E: "equal",
  u: "unsure",
  U: "unsure",
};
