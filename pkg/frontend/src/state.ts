// UI state machine. Screens change only through received ToUi events (or
// local keypad edits); unknown events land on the Error screen instead of
// being dropped, so a contract drift is immediately visible on the device.

import { KioskEvent, isToUiName } from "./events.js";

export type Screen =
  | "MainMenu"
  | "PromptCapture"
  | "PromptCode"
  | "Welcome"
  | "Denied"
  | "PromptSpeak"
  | "AskConfirm"
  | "Notified"
  | "Retry"
  | "Error";

export interface UiState {
  screen: Screen;
  employeeName: string;
  candidateName: string;
  attemptsLeft: number | null;
  errorReason: string;
  keypadBuffer: string; // always 0..4 digits
  connected: boolean;
}

export function initialState(): UiState {
  return {
    screen: "MainMenu",
    employeeName: "",
    candidateName: "",
    attemptsLeft: null,
    errorReason: "",
    keypadBuffer: "",
    connected: false,
  };
}

const SCREEN_FOR_EVENT: Record<string, Screen> = {
  showMainMenu: "MainMenu",
  promptCapture: "PromptCapture",
  promptCode: "PromptCode",
  showWelcome: "Welcome",
  showDenied: "Denied",
  promptSpeak: "PromptSpeak",
  askConfirm: "AskConfirm",
  showNotified: "Notified",
  showRetry: "Retry",
  showError: "Error",
};

export function applyToUi(state: UiState, event: KioskEvent): UiState {
  if (event.direction !== "ToUi" || !isToUiName(event.name)) {
    return {
      ...state,
      screen: "Error",
      errorReason: `unexpected event ${JSON.stringify(event.name)}`,
      keypadBuffer: "",
    };
  }
  const next: UiState = { ...state, screen: SCREEN_FOR_EVENT[event.name], keypadBuffer: "" };
  const payload = event.payload ?? {};
  switch (event.name) {
    case "showWelcome":
      next.employeeName = String(payload["name"] ?? "");
      break;
    case "promptCode":
      next.attemptsLeft = typeof payload["attemptsLeft"] === "number" ? payload["attemptsLeft"] : null;
      break;
    case "askConfirm":
      next.candidateName = String(payload["candidate"] ?? "");
      break;
    case "showError":
      next.errorReason = String(payload["reason"] ?? "unknown error");
      break;
  }
  return next;
}

export function setConnected(state: UiState, connected: boolean): UiState {
  return { ...state, connected };
}
