"""Trace validators: a captured message or UI-event sequence must follow a
path in its kind's state machine. Used by the protocol and kiosk tests."""


class TraceError(AssertionError):
    pass


def _step(label, state, table, trace_entry):
    key = (state, trace_entry)
    if key not in table:
        raise TraceError(f"{label}: no edge from {state!r} on {trace_entry!r}")
    return table[key]


# wire traces are (message type, discriminator) pairs from the door's view;
# the discriminator is the payload field that picks the branch, or None
EMPLOYEE_WIRE = {
    ("start", ("SESSION_START", None)): "started",
    ("started", ("CAPTURE_UPLOAD", None)): "uploaded",
    ("uploaded", ("AUTH_RESULT", "denied")): "end",
    ("uploaded", ("CODE_CHALLENGE", None)): "code_entry",
    ("uploaded", ("ERROR", None)): "end",
    ("code_entry", ("CODE_SUBMIT", None)): "submitted",
    ("submitted", ("CODE_RESULT", "ok")): "unlocking",
    ("submitted", ("CODE_RESULT", "retry")): "code_entry",
    ("submitted", ("CODE_RESULT", "locked_out")): "end",
    ("submitted", ("ERROR", None)): "end",
    ("unlocking", ("UNLOCK_EVENT", None)): "end",
}

GUEST_WIRE = {
    ("start", ("SESSION_START", None)): "listening",
    ("listening", ("GUEST_AUDIO", None)): "heard",
    ("heard", ("GUEST_RESULT", "notified")): "end",
    ("heard", ("GUEST_MATCH", "confirm")): "confirming",
    ("heard", ("GUEST_MATCH", "retry")): "listening",
    ("heard", ("ERROR", None)): "end",
    ("confirming", ("GUEST_CONFIRM", None)): "confirmed",
    ("confirmed", ("GUEST_RESULT", "notified")): "end",
    ("confirmed", ("GUEST_RESULT", "ask_again")): "listening",
    ("confirmed", ("ERROR", None)): "end",
}

DELIVERY_WIRE = {
    ("start", ("SESSION_START", None)): "requested",
    ("requested", ("DELIVERY", None)): "posted",
    ("posted", ("DELIVERY", "notified")): "end",
    ("posted", ("ERROR", None)): "end",
}

WIRE_TABLES = {"employee": EMPLOYEE_WIRE, "guest": GUEST_WIRE, "delivery": DELIVERY_WIRE}


def validate_wire_trace(kind, trace):
    """trace: list of (message_type, discriminator or None). Raises unless
    the sequence ends in a terminal node of the kind's machine."""
    state = "start"
    for entry in trace:
        if state == "end":
            raise TraceError(f"{kind}: trace continues past terminal state with {entry!r}")
        state = _step(kind, state, WIRE_TABLES[kind], entry)
    if state != "end":
        raise TraceError(f"{kind}: trace stopped in non-terminal state {state!r}")


# kiosk traces: ToUi event names as shown on the screen, one session's worth
UI_EDGES = {
    ("MainMenu", "promptCapture"): "Capture",
    ("MainMenu", "promptSpeak"): "Speak",
    ("MainMenu", "showNotified"): "Done",      # delivery result
    ("MainMenu", "showError"): "Errored",
    ("Capture", "promptCode"): "Code",
    ("Capture", "showDenied"): "Done",
    ("Capture", "showError"): "Errored",
    ("Code", "promptCode"): "Code",            # retry with a fresh code
    ("Code", "showWelcome"): "Done",
    ("Code", "showMainMenu"): "MainMenu",      # lockout return
    ("Code", "showError"): "Errored",
    ("Speak", "askConfirm"): "Confirm",
    ("Speak", "showRetry"): "Retrying",
    ("Speak", "showNotified"): "Done",
    ("Speak", "showError"): "Errored",
    ("Retrying", "promptSpeak"): "Speak",
    ("Confirm", "showNotified"): "Done",
    ("Confirm", "promptSpeak"): "Speak",       # pressed "No"
    ("Confirm", "showError"): "Errored",
    ("Done", "showMainMenu"): "MainMenu",
    ("Errored", "showMainMenu"): "MainMenu",
}


def validate_ui_trace(events, start="MainMenu"):
    """events: ToUi names in emission order, starting after the connect-time
    showMainMenu. Ends anywhere (screens are stable between sessions)."""
    state = start
    for name in events:
        key = (state, name)
        if key not in UI_EDGES:
            raise TraceError(f"ui: no edge from {state!r} on {name!r}")
        state = UI_EDGES[key]
    return state
