// Entry point: wires the session to the DOM and keyboard.

import { ApiClient } from "./api.js";
import { KEY_BINDINGS, Session, SideChoice } from "./session.js";
import { DomView } from "./view.js";

function annotatorId(): string {
  const key = "floodlevel-annotator-id";
  let id = localStorage.getItem(key);
  if (!id) {
    id = "ann-" + Math.random().toString(36).slice(2, 10);
    localStorage.setItem(key, id);
  }
  return id;
}

function serviceBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("service") ?? "";
}

window.addEventListener("DOMContentLoaded", () => {
  const api = new ApiClient(serviceBaseUrl());
  const view = new DomView(document);
  const session = new Session(api, view, annotatorId());

  document.querySelectorAll<HTMLButtonElement>("button[data-choice]").forEach((btn) => {
    btn.addEventListener("click", () => {
      void session.submitChoice(btn.dataset.choice as SideChoice);
    });
  });

  document.addEventListener("keydown", (ev) => {
    const choice = KEY_BINDINGS[ev.key];
    if (choice && !session.drained) {
      ev.preventDefault();
      void session.submitChoice(choice);
    }
  });

  void session.fetchAndRenderNext();
});
