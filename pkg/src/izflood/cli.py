"""Command-line interface: ``izflood {preprocess,run,serve,render}``.

Exit codes: 0 ok, 2 input error, 3 numerical failure, 4 peer or protocol
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_PEER = 0, 2, 3, 4

log = logging.getLogger("izflood")


def _fail(message, code=EXIT_INPUT):
    print(f"izflood: error: {message}", file=sys.stderr)
    return code


def cmd_preprocess(args):
    from .izmesh import delineate_zones, mesh_stats, save_mesh
    from .scenario import ScenarioConfig
    from .terrain import read_ascii_grid

    merge_eps, headroom = args.merge_eps, args.headroom
    if args.dtm is not None:
        dtm_path = Path(args.dtm)
    elif args.config is not None:
        cfg = ScenarioConfig.load(args.config, {"coupling": "off"})
        dtm_path = cfg.path("dtm")
        s = cfg.data["surface"]
        merge_eps = s["merge_eps"] if merge_eps is None else merge_eps
        headroom = s["headroom"] if headroom is None else headroom
    else:
        return _fail("preprocess needs a DTM path or --config")
    if not dtm_path.is_file():
        return _fail(f"DTM file not found: {dtm_path}")
    dtm = read_ascii_grid(dtm_path)
    mesh = delineate_zones(dtm, merge_eps, 10.0 if headroom is None else headroom)
    out = Path(args.out) if args.out else dtm_path.with_suffix(".mesh.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out)
    stats = mesh_stats(mesh)
    stats["mesh"] = str(out)
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_run(args):
    from .scenario import ScenarioConfig, run_scenario

    coupling = args.coupling
    if args.connect:
        coupling = f"connect {args.connect}"
    cfg = ScenarioConfig.load(args.config)
    status, run = run_scenario(cfg, args.out, coupling, args.until, args.output_interval)
    out = args.out or cfg.output_dir()
    if status:
        return _fail(f"run stopped at t={run.times[-1] if run.times else 0:g} s: {run.message}", status)
    print(f"run complete: {len(run.times)} output times written to {out}")
    return EXIT_OK


def cmd_serve(args):
    from .scenario import ScenarioConfig, serve_scenario

    cfg = ScenarioConfig.load(args.config, {"coupling": "in_process"})

    def ready(port):
        print(f"listening on port {port}", flush=True)

    return serve_scenario(cfg, args.listen, on_ready=ready, out_dir=args.out)


def cmd_render(args):
    from .render import render_run

    paths = render_run(args.run_dir, args.out)
    print(f"{len(paths)} images written to {paths[0].parent}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="izflood", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"izflood {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="delineate Impact Zones and write a mesh file")
    pp.add_argument("dtm", nargs="?", help="ESRI ASCII grid (or use --config)")
    pp.add_argument("--config", help="scenario config; its DTM and surface options are used")
    pp.add_argument("--out", help="mesh file to write (default: <dtm>.mesh.json)")
    pp.add_argument("--merge-eps", type=float, default=None, help="merge zones shallower than this (m)")
    pp.add_argument("--headroom", type=float, default=None, help="table height above spill (m)")
    pp.set_defaults(func=cmd_preprocess)

    pr = sub.add_parser("run", help="run a scenario")
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", help="output directory (overrides output.dir)")
    pr.add_argument("--coupling", choices=("off", "in_process"), help="override the coupling mode")
    pr.add_argument("--connect", metavar="HOST:PORT", help="couple to a running subsurface service")
    pr.add_argument("--until", type=float, metavar="SECONDS", help="override schedule.end_time")
    pr.add_argument("--output-interval", type=float, metavar="SECONDS", help="override output.interval")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("serve", help="serve the subsurface model over TCP")
    ps.add_argument("--config", required=True)
    ps.add_argument("--listen", required=True, metavar="HOST:PORT", help="port 0 picks a free port")
    ps.add_argument("--out", help="directory for h_filtr frames and the solver log")
    ps.set_defaults(func=cmd_serve)

    pn = sub.add_parser("render", help="render run frames as PPM images")
    pn.add_argument("run_dir")
    pn.add_argument("--out", help="image directory (default: <run_dir>/images)")
    pn.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .render import RenderError
    from .scenario import ConfigError
    from .solvers import SolverError

    try:
        return args.func(args)
    except (ConfigError, RenderError, OSError, ValueError) as exc:
        return _fail(str(exc))
    except SolverError as exc:
        return _fail(str(exc), EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
