// PIN keypad rules: the buffer holds at most four digits and the submit
// action only exists once all four are present. Submission empties the
// buffer so nothing of the code lingers on screen.

import { KioskEvent, fromUi } from "./events.js";
import { UiState } from "./state.js";

export const CODE_LENGTH = 4;

export function pressDigit(state: UiState, digit: string): UiState {
  if (state.screen !== "PromptCode" || !/^[0-9]$/.test(digit)) {
    return state;
  }
  if (state.keypadBuffer.length >= CODE_LENGTH) {
    return state;
  }
  return { ...state, keypadBuffer: state.keypadBuffer + digit };
}

export function backspace(state: UiState): UiState {
  return { ...state, keypadBuffer: state.keypadBuffer.slice(0, -1) };
}

export function canSubmit(state: UiState): boolean {
  return state.screen === "PromptCode" && state.keypadBuffer.length === CODE_LENGTH;
}

export function submitCode(state: UiState): { state: UiState; event: KioskEvent | null } {
  if (!canSubmit(state)) {
    return { state, event: null };
  }
  return {
    state: { ...state, keypadBuffer: "" },
    event: fromUi("keypadSubmit", { code: state.keypadBuffer }),
  };
}
