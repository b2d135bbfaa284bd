"""Command-line interface.

``simulate`` and ``validate`` run locally; ``serve`` starts the HTTP
service; the ``session`` subcommands are thin clients of a running service
so interactive sessions have exactly one engine of record.
"""

from __future__ import annotations

import json
import logging
import sys

import click
import httpx

from .config import parse_experiment_spec, validate_config_file
from .errors import SeqDesignError
from .experiment import run_experiment, write_steps_csv
from .smc import HistoryStep
from .util import RNG_KIND

DEFAULT_SERVER = "http://127.0.0.1:8765"


@click.group()
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.option("--seed", type=int, default=None, help="Base seed override for simulate.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker processes for batch runs.")
@click.pass_context
def main(ctx, log_level, seed, threads):
    """Sequential design of band-filtered photon-count observations."""
    logging.basicConfig(level=getattr(logging, log_level.upper()))
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["threads"] = threads


@main.command()
@click.argument("spec_file", type=click.Path(exists=True))
@click.option("--output-dir", default=None, help="Override the spec's output directory.")
@click.pass_context
def simulate(ctx, spec_file, output_dir):
    """Run the batch replication experiment described by SPEC_FILE."""
    spec = parse_experiment_spec(spec_file)
    if ctx.obj["seed"] is not None:
        seeds = tuple(ctx.obj["seed"] + i for i in range(len(spec.seeds)))
        spec = type(spec)(**{**spec.__dict__, "seeds": seeds})
    summary = run_experiment(spec, output_dir=output_dir, threads=ctx.obj["threads"])
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.argument("config_file", type=click.Path(exists=True))
def validate(config_file):
    """Lint a model config or experiment spec."""
    try:
        for note in validate_config_file(config_file):
            click.echo(f"ok: {note}")
    except SeqDesignError as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)


@main.command()
@click.option("--bind", default="127.0.0.1:8765", show_default=True)
@click.option("--state-dir", default="./sessions", show_default=True)
@click.option("--frontend-dir", default=None, help="Static UI bundle to serve at /ui.")
def serve(bind, state_dir, frontend_dir):
    """Run the session service (blocks)."""
    import uvicorn

    from .service import create_app

    host, _, port = bind.partition(":")
    app = create_app(state_dir, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8765), log_level="info")


class _Client:
    def __init__(self, server: str):
        self.server = server.rstrip("/")
        self.http = httpx.Client(base_url=self.server, timeout=600.0)

    def request(self, method: str, path: str, **kwargs) -> dict | list:
        resp = self.http.request(method, path, **kwargs)
        if resp.status_code >= 400:
            try:
                body = resp.json()
                msg = f"{body.get('code')}: {body.get('message')}"
            except Exception:
                msg = resp.text
            click.echo(f"server error ({resp.status_code}) {msg}", err=True)
            sys.exit(1)
        return resp.json()


@main.group()
@click.option("--server", default=DEFAULT_SERVER, show_default=True,
              help="Base URL of a running service (start one with `seqdesign serve`).")
@click.pass_context
def session(ctx, server):
    """Drive a live observing session over HTTP."""
    ctx.obj["client"] = _Client(server)


@session.command("new")
@click.argument("config_file", type=click.Path(exists=True))
@click.option("--strategy", default="smcs", show_default=True,
              type=click.Choice(["smcs", "trs", "gs"]))
@click.option("--t-max", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--design-file", type=click.Path(exists=True), default=None,
              help="JSON with design settings (particles, thresholds).")
@click.pass_context
def session_new(ctx, config_file, strategy, t_max, seed, design_file):
    """Create a session from a model CONFIG_FILE."""
    model_config = json.loads(open(config_file, encoding="utf-8").read())
    design = json.loads(open(design_file, encoding="utf-8").read()) if design_file else {}
    body = {
        "model": model_config,
        "design": design,
        "strategy": strategy,
        "seed": seed,
        "t_max": t_max,
    }
    out = ctx.obj["client"].request("POST", "/sessions", json=body)
    click.echo(json.dumps(out, indent=2))


@session.command("recommend")
@click.argument("session_id")
@click.pass_context
def session_recommend(ctx, session_id):
    """Fetch (or compute) the pending filter recommendation."""
    out = ctx.obj["client"].request("GET", f"/sessions/{session_id}/recommendation")
    click.echo(json.dumps(out, indent=2))


@session.command("observe")
@click.argument("session_id")
@click.option("--filter", "filter_id", required=True, help="Filter id observed through.")
@click.option("--count", required=True, type=int)
@click.pass_context
def session_observe(ctx, session_id, filter_id, count):
    """Submit an observed photon count."""
    body = {"filter_id": filter_id, "count": count}
    out = ctx.obj["client"].request("POST", f"/sessions/{session_id}/observations", json=body)
    click.echo(json.dumps(out, indent=2))


@session.command("status")
@click.argument("session_id")
@click.pass_context
def session_status(ctx, session_id):
    out = ctx.obj["client"].request("GET", f"/sessions/{session_id}")
    click.echo(json.dumps(out, indent=2))


@session.command("export")
@click.argument("session_id")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def session_export(ctx, session_id, out_path):
    """Write the session history as a versioned CSV."""
    client = ctx.obj["client"]
    summary = client.request("GET", f"/sessions/{session_id}")
    hist = client.request("GET", f"/sessions/{session_id}/history")
    steps = [HistoryStep.from_dict(s) for s in hist["steps"]]
    filter_ids = list(summary["filter_ids"])  # stable schema: full bank order
    m = len(hist["template_names"])
    from .experiment import step_csv_row

    rows = [step_csv_row(s, s.strategy, None, filter_ids, m) for s in steps]
    write_steps_csv(out_path, rows, filter_ids, m)
    click.echo(f"wrote {out_path} ({len(rows)} steps, generator {RNG_KIND})")


if __name__ == "__main__":
    main()
