// Pure view: UiState in, DOM subtree out. Buttons call back into the app
// through the handlers object; no view code talks to the socket directly.

import { canSubmit } from "./keypad.js";
import { UiState } from "./state.js";

export interface Handlers {
  action(name: "pressEmployee" | "pressGuest" | "pressDelivery" | "recordDone"): void;
  digit(d: string): void;
  backspace(): void;
  submit(): void;
  confirm(yes: boolean): void;
}

function el(tag: string, className: string, text = ""): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text) {
    node.textContent = text;
  }
  return node;
}

function button(label: string, className: string, onClick: () => void): HTMLButtonElement {
  const node = el("button", className, label) as HTMLButtonElement;
  node.addEventListener("click", onClick);
  return node;
}

function screenShell(title: string): HTMLElement {
  const root = el("div", "screen");
  root.appendChild(el("h1", "title", title));
  return root;
}

function renderMainMenu(handlers: Handlers): HTMLElement {
  const root = screenShell("Welcome");
  root.appendChild(el("div", "logo", "◼ doorkeep"));
  const menu = el("div", "menu");
  menu.appendChild(button("Employee", "action-button employee", () => handlers.action("pressEmployee")));
  menu.appendChild(button("Guest", "action-button guest", () => handlers.action("pressGuest")));
  menu.appendChild(button("Delivery", "action-button delivery", () => handlers.action("pressDelivery")));
  root.appendChild(menu);
  return root;
}

function renderPromptCode(state: UiState, handlers: Handlers): HTMLElement {
  const root = screenShell("Enter the code we just sent you");
  if (state.attemptsLeft !== null) {
    root.appendChild(el("p", "attempts", `${state.attemptsLeft} attempts left`));
  }
  const dots = el("div", "code-display");
  dots.textContent = "●".repeat(state.keypadBuffer.length).padEnd(4, "○");
  root.appendChild(dots);
  const pad = el("div", "keypad");
  for (const digit of ["1", "2", "3", "4", "5", "6", "7", "8", "9"]) {
    pad.appendChild(button(digit, "key digit", () => handlers.digit(digit)));
  }
  pad.appendChild(button("⌫", "key backspace", () => handlers.backspace()));
  pad.appendChild(button("0", "key digit", () => handlers.digit("0")));
  const submit = button("OK", "key submit", () => handlers.submit());
  submit.disabled = !canSubmit(state);
  pad.appendChild(submit);
  root.appendChild(pad);
  return root;
}

function renderAskConfirm(state: UiState, handlers: Handlers): HTMLElement {
  const root = screenShell("Did you mean:");
  root.appendChild(el("p", "candidate", state.candidateName));
  const row = el("div", "confirm-row");
  row.appendChild(button("Yes", "confirm yes", () => handlers.confirm(true)));
  row.appendChild(button("No", "confirm no", () => handlers.confirm(false)));
  root.appendChild(row);
  return root;
}

export function render(state: UiState, handlers: Handlers): HTMLElement {
  let root: HTMLElement;
  switch (state.screen) {
    case "MainMenu":
      root = renderMainMenu(handlers);
      break;
    case "PromptCapture":
      root = screenShell("Look at the camera");
      root.appendChild(el("p", "hint", "Hold still while we take your picture…"));
      break;
    case "PromptCode":
      root = renderPromptCode(state, handlers);
      break;
    case "Welcome":
      root = screenShell("Welcome to the office");
      root.appendChild(el("p", "employee-name", state.employeeName));
      break;
    case "Denied":
      root = screenShell("Access denied");
      root.appendChild(el("p", "hint", "Returning to the main menu."));
      break;
    case "PromptSpeak":
      root = screenShell("Who are you here to meet?");
      root.appendChild(el("p", "hint", "Say the employee's full name, then press done."));
      root.appendChild(button("Done speaking", "action-button record-done", () => handlers.action("recordDone")));
      break;
    case "AskConfirm":
      root = renderAskConfirm(state, handlers);
      break;
    case "Notified":
      root = screenShell("The employee has been notified");
      root.appendChild(el("p", "hint", "Please wait by the door."));
      break;
    case "Retry":
      root = screenShell("Sorry, we didn't catch that");
      root.appendChild(el("p", "hint", "Let's try once more."));
      break;
    case "Error":
      root = screenShell("Out of service");
      root.appendChild(el("p", "error-reason", state.errorReason));
      break;
  }
  root.dataset.screen = state.screen;
  const status = el("div", `conn-status ${state.connected ? "online" : "offline"}`);
  status.textContent = state.connected ? "●" : "○ reconnecting";
  root.appendChild(status);
  return root;
}

export function mount(container: HTMLElement, state: UiState, handlers: Handlers): void {
  container.replaceChildren(render(state, handlers));
}
