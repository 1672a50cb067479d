"""Run the island scenario with the subsurface served over a TCP socket.

The subsurface peer listens on an ephemeral port in a background thread,
the surface side connects to it, and the result is compared with the
in-process run. The two must agree bit for bit.
"""
import csv
import tempfile
import threading
from pathlib import Path

from izflood.scenario import ScenarioConfig, run_scenario, serve_scenario, write_island_scenario


def levels(run_dir):
    with open(run_dir / "zones.csv") as f:
        return [float(r["level"]) for r in csv.DictReader(f)]


with tempfile.TemporaryDirectory() as tmp:
    work = Path(tmp)
    config = ScenarioConfig.load(write_island_scenario(work, end_time=3600.0))
    ready = threading.Event()
    port = {}

    def on_ready(p):
        port["n"] = p
        ready.set()

    server = threading.Thread(target=serve_scenario, args=(config, "127.0.0.1:0"),
                              kwargs={"on_ready": on_ready}, daemon=True)
    server.start()
    ready.wait(30)
    status, _ = run_scenario(config, out_dir=work / "socket", coupling=f"connect 127.0.0.1:{port['n']}")
    server.join(30)
    run_scenario(config, out_dir=work / "local", coupling="in_process")
    same = levels(work / "socket") == levels(work / "local")
    print(f"socket run exit {status}; identical to in-process run: {same}")
