// DOM rendering for the pairwise annotation screen.

import { PairView } from "./session.js";

export class DomView implements PairView {
  private leftImg: HTMLImageElement;
  private rightImg: HTMLImageElement;
  private status: HTMLElement;
  private counter: HTMLElement;
  private buttons: HTMLButtonElement[];
  private pane: HTMLElement;
  private donePane: HTMLElement;
  private pendingLoads = 0;

  constructor(root: Document) {
    this.leftImg = root.getElementById("img-left") as HTMLImageElement;
    this.rightImg = root.getElementById("img-right") as HTMLImageElement;
    this.status = root.getElementById("status")!;
    this.counter = root.getElementById("counter")!;
    this.pane = root.getElementById("pair-pane")!;
    this.donePane = root.getElementById("done-pane")!;
    this.buttons = Array.from(
      root.querySelectorAll<HTMLButtonElement>("button[data-choice]"),
    );
    for (const img of [this.leftImg, this.rightImg]) {
      img.addEventListener("load", () => this.onImageLoad());
      img.addEventListener("error", () => this.onImageLoad());
    }
  }

  private setButtonsEnabled(enabled: boolean) {
    for (const b of this.buttons) b.disabled = !enabled;
  }

  private onImageLoad() {
    this.pendingLoads = Math.max(0, this.pendingLoads - 1);
    if (this.pendingLoads === 0) {
      this.pane.classList.remove("loading");
      this.setButtonsEnabled(true);
    }
  }

  showPair(leftUrl: string, rightUrl: string): void {
    this.donePane.hidden = true;
    this.pane.hidden = false;
    this.pane.classList.add("loading"); // skeleton until both images arrive
    this.setButtonsEnabled(false);
    this.status.textContent = "Which image shows the higher water level?";
    this.pendingLoads = 2;
    this.leftImg.src = leftUrl;
    this.rightImg.src = rightUrl;
  }

  showDone(completed: number): void {
    this.pane.hidden = true;
    this.donePane.hidden = false;
    this.donePane.textContent =
      `All done - no pairs left for you. You judged ${completed} pair` +
      (completed === 1 ? "." : "s.");
  }

  showRetry(message: string): void {
    this.status.textContent = `${message} - press any answer again to retry.`;
    this.setButtonsEnabled(true);
  }

  setBusy(busy: boolean): void {
    if (busy) this.setButtonsEnabled(false);
  }

  updateCount(completed: number): void {
    this.counter.textContent = `${completed} judged`;
  }
}
