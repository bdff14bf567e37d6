// Kiosk wire contract: JSON events over the door unit's /kiosk WebSocket.
// The vocabulary is owned by the gateway; anything outside it is an error.

export const TO_UI_EVENTS = [
  "showMainMenu",
  "promptCapture",
  "promptCode",
  "showWelcome",
  "showDenied",
  "promptSpeak",
  "askConfirm",
  "showNotified",
  "showRetry",
  "showError",
] as const;

export const FROM_UI_EVENTS = [
  "pressEmployee",
  "pressGuest",
  "pressDelivery",
  "keypadSubmit",
  "confirmYes",
  "confirmNo",
  "recordDone",
] as const;

export type ToUiName = (typeof TO_UI_EVENTS)[number];
export type FromUiName = (typeof FROM_UI_EVENTS)[number];

export interface KioskEvent {
  direction: "ToUi" | "FromUi";
  name: string;
  payload: Record<string, unknown>;
}

export function fromUi(name: FromUiName, payload: Record<string, unknown> = {}): KioskEvent {
  return { direction: "FromUi", name, payload };
}

export function isToUiName(name: string): name is ToUiName {
  return (TO_UI_EVENTS as readonly string[]).includes(name);
}
