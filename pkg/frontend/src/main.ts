import { fromUi } from "./events.js";
import { backspace, pressDigit, submitCode } from "./keypad.js";
import { Handlers, mount } from "./render.js";
import { applyToUi, initialState, setConnected, UiState } from "./state.js";
import { KioskSocket } from "./socket.js";

const container = document.getElementById("app");
if (container === null) {
  throw new Error("missing #app container");
}

let state: UiState = initialState();

function update(next: UiState): void {
  state = next;
  mount(container!, state, handlers);
}

const socket = new KioskSocket(
  `ws://${window.location.host}/kiosk`,
  (event) => update(applyToUi(state, event)),
  (connected) => update(setConnected(state, connected)),
);

const handlers: Handlers = {
  action(name) {
    socket.send(fromUi(name));
  },
  digit(d) {
    update(pressDigit(state, d));
  },
  backspace() {
    update(backspace(state));
  },
  submit() {
    const { state: next, event } = submitCode(state);
    update(next);
    if (event !== null) {
      socket.send(event);
    }
  },
  confirm(yes) {
    socket.send(fromUi(yes ? "confirmYes" : "confirmNo"));
  },
};

update(state);
socket.connect();
