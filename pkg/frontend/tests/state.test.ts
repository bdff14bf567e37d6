import { describe, expect, it } from "vitest";

import { KioskEvent } from "../src/events.js";
import { applyToUi, initialState, Screen } from "../src/state.js";

function toUi(name: string, payload: Record<string, unknown> = {}): KioskEvent {
  return { direction: "ToUi", name, payload };
}

describe("ui state machine", () => {
  it("walks a scripted event sequence through all ten screens", () => {
    const script: Array<[KioskEvent, Screen]> = [
      [toUi("showMainMenu"), "MainMenu"],
      [toUi("promptCapture"), "PromptCapture"],
      [toUi("promptCode", { attemptsLeft: 3 }), "PromptCode"],
      [toUi("showDenied"), "Denied"],
      [toUi("showMainMenu"), "MainMenu"],
      [toUi("promptSpeak"), "PromptSpeak"],
      [toUi("askConfirm", { candidate: "Anna Lindberg" }), "AskConfirm"],
      [toUi("showRetry"), "Retry"],
      [toUi("showNotified"), "Notified"],
      [toUi("showWelcome", { name: "Anna Lindberg" }), "Welcome"],
      [toUi("showError", { reason: "link down" }), "Error"],
    ];
    let state = initialState();
    const visited = new Set<Screen>();
    for (const [event, expected] of script) {
      state = applyToUi(state, event);
      expect(state.screen).toBe(expected);
      visited.add(state.screen);
    }
    expect(visited.size).toBe(10);
  });

  it("carries screen context from payloads", () => {
    let state = applyToUi(initialState(), toUi("showWelcome", { name: "Bo Ek" }));
    expect(state.employeeName).toBe("Bo Ek");
    state = applyToUi(state, toUi("askConfirm", { candidate: "Cilla Sund" }));
    expect(state.candidateName).toBe("Cilla Sund");
    state = applyToUi(state, toUi("promptCode", { attemptsLeft: 2 }));
    expect(state.attemptsLeft).toBe(2);
    state = applyToUi(state, toUi("showError", { reason: "boom" }));
    expect(state.errorReason).toBe("boom");
  });

  it("surfaces unknown events as the Error screen instead of dropping them", () => {
    const state = applyToUi(initialState(), toUi("teleportHome"));
    expect(state.screen).toBe("Error");
    expect(state.errorReason).toContain("teleportHome");
  });

  it("rejects FromUi-direction events arriving inbound", () => {
    const bogus: KioskEvent = { direction: "FromUi", name: "showMainMenu", payload: {} };
    expect(applyToUi(initialState(), bogus).screen).toBe("Error");
  });

  it("clears the keypad buffer on every screen change", () => {
    let state = { ...initialState(), screen: "PromptCode" as Screen, keypadBuffer: "12" };
    state = applyToUi(state, toUi("showMainMenu"));
    expect(state.keypadBuffer).toBe("");
  });

  it("never stores image or audio bytes", () => {
    const state = applyToUi(initialState(), toUi("promptCapture", { sneaky: "ZGF0YQ==" }));
    expect(Object.keys(state)).toEqual([
      "screen",
      "employeeName",
      "candidateName",
      "attemptsLeft",
      "errorReason",
      "keypadBuffer",
      "connected",
    ]);
  });
});
