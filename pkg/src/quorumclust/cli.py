"""Command-line client.

All heavy work goes through the HTTP service layer; by default the app
is mounted in-process (no socket), and --server points the same
commands at a remote instance.  Exit codes: 0 success, 1 bad input or
missing data, 2 numeric blowup (diagnostic snapshot written next to
the outputs).
"""

from __future__ import annotations

import asyncio
import csv
import json
import sys
from pathlib import Path

import click
import httpx
import yaml

from . import presets as presets_mod

ENGINE_KEYS = ("a", "b", "alpha", "beta", "gamma", "dt", "epsilon",
               "merge_threshold", "claim_floor", "max_steps", "seed")


def _request(server: str | None, method: str, path: str, payload=None):
    if server:
        try:
            with httpx.Client(base_url=server, timeout=None) as client:
                r = client.request(method, path, json=payload)
                return r.status_code, r.json()
        except httpx.HTTPError as exc:
            click.echo(f"error: cannot reach {server}: {exc}", err=True)
            sys.exit(1)

    async def go():
        from .service import app
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://service",
                                     timeout=None) as client:
            r = await client.request(method, path, json=payload)
            return r.status_code, r.json()

    return asyncio.run(go())


def _fail(body: dict, out_dir: Path | None = None):
    detail = body.get("detail", body)
    if isinstance(detail, dict) and detail.get("type") == "NumericBlowupError":
        target = (out_dir or Path(".")) / "blowup.json"
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(detail.get("diagnostic", {}), indent=2))
        click.echo(f"numeric blowup: {detail.get('message', '')}", err=True)
        click.echo(f"diagnostic snapshot: {target}", err=True)
        sys.exit(2)
    if isinstance(detail, dict):
        message = detail.get("message", json.dumps(detail))
    else:
        message = json.dumps(detail) if isinstance(detail, list) else str(detail)
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config file {path} must hold a mapping")
    return cfg


def _merge_overrides(config: dict, flags: dict, keys=ENGINE_KEYS) -> dict:
    # precedence: preset (server side) < config file < explicit flag
    merged = {k: config[k] for k in keys if k in config}
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _preset_epilog() -> str:
    lines = ["\b", "Shipped presets:"]
    for name in presets_mod.available():
        p = presets_mod.load(name)
        mark = "" if p.tuned else " (needs local data)"
        lines.append(f"  {name:<14} {p.kind}{mark}")
    return "\n".join(lines)


def _write_run_outputs(out: Path, payload: dict, stream: bool) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "assignment.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "label"])
        for cid, lab in zip(payload["cell_ids"], payload["labels"]):
            w.writerow([cid, lab])
    written.append(path)

    path = out / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(payload["resolved"], sort_keys=False))
    written.append(path)

    if "score" in payload:
        path = out / "score.json"
        path.write_text(json.dumps(payload["score"], indent=2))
        written.append(path)

    history = payload.get("history")
    if history is not None:
        path = out / "history.jsonl"
        with open(path, "w") as fh:
            for snap in history:
                fh.write(json.dumps(snap) + "\n")
        written.append(path)

    if stream:
        path = out / "colony_count.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "k"])
            w.writerows(payload["colony_count_series"])
        written.append(path)

        if history and any("sigma" in snap for snap in history):
            path = out / "traces.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "cell_id", "sigma", "density", "label"])
                for snap in history:
                    if "sigma" not in snap:
                        continue
                    rows = zip(snap["cell_ids"], snap["sigma"],
                               snap["density"], snap["labels"])
                    for cid, s, d, lab in rows:
                        w.writerow([snap["step"], cid, s, d, lab])
            written.append(path)

    return written


def _summarize_run(payload: dict, out: Path):
    bits = [f"k={payload['k']}"]
    if "score" in payload:
        bits.append(f"accuracy={payload['score']['accuracy']:.3f}")
    bits.append(f"outliers={payload['outliers']}")
    bits.append(f"steps={payload['steps_used']}")
    bits.append("converged" if payload["converged"] else "not converged")
    bits.append(f"({payload['elapsed_seconds']:.2f} s)")
    click.echo(" ".join(bits) + f"  ->  {out}")


def _run_command(ctx, kind: str, preset, config_path, flags, data_dir,
                 out, no_history):
    config = _load_config(config_path)
    preset = preset or config.get("preset")
    body = {
        "preset": preset,
        "dataset": config.get("dataset"),
        "engine": config.get("engine"),
        "overrides": _merge_overrides(config, flags),
        "include_history": not no_history,
        "data_dirs": list(data_dir) + list(config.get("data_dirs", [])),
    }
    if kind == "stream":
        body["scenario"] = config.get("scenario")
    out = Path(out or config.get("out") or f"runs/{preset or 'adhoc'}")
    status, payload = _request(ctx.obj["server"], "POST", f"/{kind}", body)
    if status != 200:
        _fail(payload, out)
    files = _write_run_outputs(out, payload, stream=(kind == "stream"))
    _summarize_run(payload, out)
    for f in files:
        click.echo(f"  wrote {f}")


def _engine_flags(fn):
    opts = [
        click.option("--a", type=float, default=None,
                     help="density setpoint for radius tuning"),
        click.option("--b", type=float, default=None,
                     help="colony growth quorum threshold"),
        click.option("--alpha", type=float, default=None,
                     help="radius leak rate"),
        click.option("--beta", type=float, default=None,
                     help="radius consensus gain"),
        click.option("--gamma", type=float, default=None,
                     help="colony growth rate"),
        click.option("--dt", type=float, default=None,
                     help="integration step for radius tuning"),
        click.option("--epsilon", type=float, default=None,
                     help="influence sparsification cutoff"),
        click.option("--merge-threshold", type=float, default=None),
        click.option("--claim-floor", type=float, default=None),
        click.option("--max-steps", type=int, default=None),
        click.option("--seed", type=int, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
@click.option("--server", metavar="URL", default=None,
              envvar="QUORUMCLUST_SERVER",
              help="Send commands to a running service instead of "
                   "executing in-process.")
@click.version_option(package_name="quorumclust")
@click.pass_context
def main(ctx, server):
    """Quorum-based dynamical clustering."""
    ctx.obj = {"server": server}


@main.command(epilog=_preset_epilog())
@click.option("--preset", default=None, help="Named preset to run.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True),
              help="YAML file mirroring the flags (plus dataset/engine "
                   "specs); explicit flags win.")
@_engine_flags
@click.option("--data-dir", multiple=True,
              help="Extra directory searched for dataset files.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--no-history", is_flag=True, help="Skip history.jsonl.")
@click.pass_context
def cluster(ctx, preset, config_path, data_dir, out, no_history, **flags):
    """Cluster a static dataset and write the assignment."""
    if preset is None and config_path is None:
        raise click.UsageError("pass --preset or --config")
    _run_command(ctx, "cluster", preset, config_path, flags, data_dir,
                 out, no_history)


@main.command(epilog=_preset_epilog())
@click.option("--preset", default=None, help="Named stream preset to run.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True),
              help="YAML file mirroring the flags (plus dataset/engine/"
                   "scenario specs); explicit flags win.")
@_engine_flags
@click.option("--data-dir", multiple=True,
              help="Extra directory searched for dataset files.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--no-history", is_flag=True,
              help="Skip history.jsonl and traces.csv.")
@click.pass_context
def stream(ctx, preset, config_path, data_dir, out, no_history, **flags):
    """Run a scripted event stream and write the colony-count curve."""
    if preset is None and config_path is None:
        raise click.UsageError("pass --preset or --config")
    _run_command(ctx, "stream", preset, config_path, flags, data_dir,
                 out, no_history)


@main.command()
@click.argument("kind")
@click.option("--n", type=int, default=200)
@click.option("--noise", type=float, default=0.05)
@click.option("--seed", type=int, default=0)
@click.option("--scale", type=float, default=1.0)
@click.option("--out", default=None, help="Output CSV path.")
@click.pass_context
def synth(ctx, kind, n, noise, seed, scale, out):
    """Generate a synthetic dataset (two_moons, two_spirals, ...)."""
    status, payload = _request(ctx.obj["server"], "POST", "/synth", {
        "kind": kind, "n": n, "noise": noise, "seed": seed, "scale": scale})
    if status != 200:
        _fail(payload)
    path = Path(out or f"{kind}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dims = len(payload["coords"][0])
        w.writerow([f"f{j}" for j in range(dims)] + ["label"])
        for point, lab in zip(payload["coords"], payload["labels"]):
            w.writerow([f"{v:.10g}" for v in point] + [lab])
    click.echo(f"wrote {path} ({len(payload['coords'])} points)")


@main.command()
@click.option("--preset", "names", multiple=True,
              help="Preset to include (repeatable); default: all static.")
@click.option("--data-dir", multiple=True,
              help="Extra directory searched for dataset files.")
@click.option("--out", default="runs/bench", help="Output directory.")
@click.pass_context
def bench(ctx, names, data_dir, out):
    """Run the preset benchmark table."""
    status, payload = _request(ctx.obj["server"], "POST", "/bench", {
        "names": list(names) or None, "data_dirs": list(data_dir)})
    if status != 200:
        _fail(payload, Path(out))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.md").write_text(payload["markdown"])
    (out / "bench.csv").write_text(payload["csv"])
    click.echo(payload["markdown"])
    for item in payload["skipped"]:
        click.echo(f"skipped {item['name']}: {item['reason']}", err=True)
    click.echo(f"wrote {out / 'bench.md'} and {out / 'bench.csv'}")


@main.command()
@click.option("--preset", default="three_nominals",
              help="Named controller preset.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True),
              help="YAML file of config field overrides.")
@click.option("--seed", type=int, default=None,
              help="Plant scatter seed override.")
@click.option("--t-end", type=float, default=None,
              help="Simulation end time override.")
@click.option("--out", default=None, help="Output directory.")
@click.pass_context
def multimodel(ctx, preset, config_path, seed, t_end, out):
    """Supervised multicontroller run; writes the d_r/mode time series."""
    config = _load_config(config_path)
    preset = config.get("preset", preset)
    from .switching import MultiModelConfig
    keys = tuple(MultiModelConfig.__dataclass_fields__)
    overrides = _merge_overrides(config, {"seed": seed, "t_end": t_end},
                                 keys=keys)
    out = Path(out or config.get("out") or f"runs/{preset}")
    status, payload = _request(ctx.obj["server"], "POST", "/multimodel", {
        "preset": preset, "overrides": overrides})
    if status != 200:
        _fail(payload, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "multimodel.csv").write_text(payload["csv"])
    (out / "switches.json").write_text(json.dumps({
        "switch_times": payload["switch_times"],
        "resolved": payload["resolved"]}, indent=2))
    for t, mode, found in payload["switch_times"]:
        tag = f" identified {tuple(found)}" if found else ""
        click.echo(f"t={t:7.2f}  ->  {mode}{tag}")
    final = payload["identified"][-1]
    final_tag = tuple(final) if final else "none"
    click.echo(f"final mode {payload['mode'][-1] and 'robust' or 'adaptive'}"
               f", identified {final_tag}"
               f"  ({payload['elapsed_seconds']:.2f} s)")
    click.echo(f"wrote {out / 'multimodel.csv'}")


@main.command(name="presets")
@click.option("--json", "as_json", is_flag=True, help="Machine readable.")
@click.pass_context
def presets_cmd(ctx, as_json):
    """List the shipped presets."""
    status, payload = _request(ctx.obj["server"], "GET", "/presets")
    if status != 200:
        _fail(payload)
    if as_json:
        click.echo(json.dumps(payload["presets"], indent=2))
    else:
        click.echo(payload["catalogue"])


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
