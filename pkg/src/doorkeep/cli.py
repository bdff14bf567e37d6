"""Command-line entry points for the two nodes, the notifier, and the
replay harness."""

from __future__ import annotations

import json
import logging
import sys
import time

import click

from . import harness
from .crypto import CipherKey
from .directory import DirectoryConfig, TemplateStore, load_directory_file
from .doorunit import DoorUnit, DoorUnitConfig, build_kiosk_app
from .flows import AccessController, FlowConfig
from .notify import NotifierClient, RecordingSink, WebhookSink
from .recognition import RecognitionConfig, ScriptedFaceProvider
from .server import ControllerServer, RemoteNotifierSink
from .transcription import ScriptedSpeechProvider, TranscriptionConfig


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected HOST:PORT, got {addr!r}")
    return host, int(port)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """doorkeep: face-gated office door with guest and delivery handling."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.group()
def controller():
    """Indoor node: recognition, challenges, and the lock line."""


CONTROLLER_DEFAULTS = {
    "bind": "127.0.0.1:9800",
    "accept_threshold": 90.0,
    "notify_threshold": 80,
    "retry_threshold": 30,
    "language_tag": "sv-SE",
    "unlock_window_ms": 5000,
    "max_attempts": 3,
    "challenge_expiry_s": 120,
    "delivery_channel": "#deliveries",
}


def resolve_controller_settings(config: dict, **flag_overrides) -> dict:
    """Defaults < config file < CLI flags (None means 'flag not given')."""
    unknown = set(config) - set(CONTROLLER_DEFAULTS) - {
        "cipher_key_hex", "directory_file", "face_script", "speech_script", "store_root",
    }
    if unknown:
        raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
    settings = dict(CONTROLLER_DEFAULTS)
    settings.update({"cipher_key_hex": None, "directory_file": None,
                     "face_script": None, "speech_script": None, "store_root": None})
    settings.update(config)
    settings.update({k: v for k, v in flag_overrides.items() if v is not None})
    for required in ("cipher_key_hex", "directory_file", "face_script", "speech_script"):
        if not settings[required]:
            raise click.ClickException(f"{required} must come from --config or a flag")
    return settings


@controller.command("run")
@click.option("--config", "config_file", type=click.Path(exists=True),
              help="JSON config file; flags below override it.")
@click.option("--bind", default=None, help=f"Listen address [default: {CONTROLLER_DEFAULTS['bind']}].")
@click.option("--directory", "directory_file", type=click.Path(exists=True))
@click.option("--store-root", type=click.Path(), help="Template store root (optional).")
@click.option("--key-hex", "cipher_key_hex", help="Shared cipher key, hex.")
@click.option("--face-script", type=click.Path(exists=True))
@click.option("--speech-script", type=click.Path(exists=True))
@click.option("--accept-threshold", type=float, default=None)
@click.option("--delivery-channel", default=None)
def controller_run(
    config_file, bind, directory_file, store_root, cipher_key_hex, face_script,
    speech_script, accept_threshold, delivery_channel,
):
    """Serve the door unit and notifier clients."""
    config = {}
    if config_file:
        with open(config_file, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    settings = resolve_controller_settings(
        config,
        bind=bind,
        directory_file=directory_file,
        store_root=store_root,
        cipher_key_hex=cipher_key_hex,
        face_script=face_script,
        speech_script=speech_script,
        accept_threshold=accept_threshold,
        delivery_channel=delivery_channel,
    )
    host, port = _parse_addr(settings["bind"])
    directory = load_directory_file(settings["directory_file"])
    store = None
    if settings["store_root"]:
        store = TemplateStore(settings["store_root"], directory, DirectoryConfig())
    sink = RemoteNotifierSink()
    ctl = AccessController(
        directory=directory,
        face_provider=ScriptedFaceProvider.from_script_file(settings["face_script"]),
        speech_provider=ScriptedSpeechProvider.from_script_file(settings["speech_script"]),
        sink=sink,
        cipher_key=CipherKey.from_hex(settings["cipher_key_hex"]),
        template_store=store,
        recognition_cfg=RecognitionConfig(accept_threshold=settings["accept_threshold"]),
        transcription_cfg=TranscriptionConfig(
            notify_threshold=settings["notify_threshold"],
            retry_threshold=settings["retry_threshold"],
            language_tag=settings["language_tag"],
        ),
        flow_cfg=FlowConfig(
            unlock_window_ms=settings["unlock_window_ms"],
            max_attempts=settings["max_attempts"],
            challenge_expiry_s=settings["challenge_expiry_s"],
            delivery_channel=settings["delivery_channel"],
        ),
    )
    server = ControllerServer(ctl, sink=sink, host=host, port=port)
    click.echo(f"controller listening on {host}:{port}")
    server.serve_forever()


@main.group()
def doorunit():
    """Outdoor node: kiosk gateway, capture devices, uploads."""


@doorunit.command("run")
@click.option("--controller-addr", default="127.0.0.1:9800", show_default=True)
@click.option("--http-port", default=8080, show_default=True)
@click.option("--camera-dir", type=click.Path(exists=True), help="Directory of probe image files.")
@click.option("--audio-dir", type=click.Path(exists=True), help="Directory of audio tag files.")
@click.option("--key-hex", required=True, help="Shared cipher key, hex.")
@click.option("--ui-dir", type=click.Path(exists=True), help="Built kiosk UI to serve.")
def doorunit_run(controller_addr, http_port, camera_dir, audio_dir, key_hex, ui_dir):
    """Run the kiosk gateway and connect to the controller."""
    import uvicorn

    host, port = _parse_addr(controller_addr)
    config = DoorUnitConfig(
        controller_host=host,
        controller_port=port,
        cipher_key=CipherKey.from_hex(key_hex),
        camera_dir=camera_dir,
        audio_dir=audio_dir,
    )
    unit = DoorUnit(config)
    try:
        unit.connect()
    except ConnectionError as exc:
        # serve the kiosk anyway (it shows an out-of-service error on use)
        # and keep retrying the controller in the background
        click.echo(f"controller unreachable, retrying in background: {exc}", err=True)
        import threading

        def keep_trying():
            while unit.client is None:
                try:
                    unit.connect()
                except ConnectionError:
                    time.sleep(5)

        threading.Thread(target=keep_trying, daemon=True).start()
    app = build_kiosk_app(unit, static_dir=ui_dir)
    uvicorn.run(app, host="0.0.0.0", port=http_port, log_level="warning")


@main.group()
def notifier():
    """Notifier node: relays controller notifications to a webhook."""


@notifier.command("run")
@click.option("--controller-addr", default="127.0.0.1:9800", show_default=True)
@click.option("--webhook-url", help="Forward notifications to this URL; prints them when unset.")
def notifier_run(controller_addr, webhook_url):
    host, port = _parse_addr(controller_addr)
    if webhook_url:
        sink = WebhookSink(webhook_url)
    else:
        sink = RecordingSink()
    client = NotifierClient(host, port, sink)
    click.echo(f"notifier connected to {host}:{port}")
    try:
        seen = 0
        while True:
            time.sleep(0.5)
            if isinstance(sink, RecordingSink) and len(sink.sent) > seen:
                for notification in sink.sent[seen:]:
                    click.echo(f"[{notification.target_kind}] {notification.target}: {notification.text}")
                seen = len(sink.sent)
    except KeyboardInterrupt:
        client.close()


@main.group()
def scenario():
    """Replay scripted trials through the full loopback stack."""


@scenario.command("run")
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def scenario_run(scenario_file, seed, fmt):
    """Run SCENARIO_FILE; exit non-zero if any trial misses its expectation."""
    try:
        spec = harness.load_scenario_file(scenario_file)
    except (harness.ScenarioError, json.JSONDecodeError) as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(2)
    report = harness.run_scenario(spec, seed=seed)
    click.echo(harness.report_render(report, fmt), nl=False)
    sys.exit(1 if report.mismatches else 0)


@main.group()
def directory():
    """Employee directory utilities."""


@directory.command("load")
@click.argument("directory_file", type=click.Path(exists=True))
def directory_load(directory_file):
    """Validate DIRECTORY_FILE and print a summary."""
    try:
        loaded = load_directory_file(directory_file)
    except ValueError as exc:
        click.echo(f"invalid directory: {exc}", err=True)
        sys.exit(1)
    click.echo(f"{len(loaded)} employees")
    for record in loaded:
        handle = record.notify_handle or "-"
        click.echo(f"  {record.id}  {record.full_name}  {handle}")


if __name__ == "__main__":
    main()
