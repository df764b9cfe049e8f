#!/usr/bin/env python3
"""Gas-sensor mask detection: eCO2/TVOC windowed means vs thresholds.

Exhaled breath trapped by a worn mask pushes both readings well above
ambient.  The detector averages the last ten samples and emits one mask
bit per sample once warm.  This script also writes ``replay.csv`` next to
itself, ready for ``masksim hil-replay``.

Run:  python3 demos/05_gas_detector.py
"""

from pathlib import Path

import numpy as np

from masksim import DetectorConfig, GasSample, MaskDetector, synth_stream

cfg = DetectorConfig()    # window 10, thresholds 500 ppm / 50 ppb, AND
rng = np.random.default_rng(8)

# %% A wear schedule: off for 30 samples, on for 60, off for 30.
schedule = [(30, False), (60, True), (30, False)]
samples = synth_stream(schedule, rng)
detector = MaskDetector(cfg)

transitions = []
last = None
for s in samples:
    bit = detector.push_and_detect(s)
    if bit is not None and bit != last:
        transitions.append((s.t, bit))
        last = bit

print(f"schedule edges at t=30 (on) and t=90 (off); window = {cfg.window}")
print("detector transitions:")
for t, bit in transitions:
    print(f"  t={t:>3}  M -> {bit}")

# %% The bit depends only on the window means: show them around an edge.
detector = MaskDetector(cfg)
print("\n  t   eco2(ppm)  tvoc(ppb)  win_eco2  win_tvoc  M")
for s in samples[24:44]:
    bit = detector.push_and_detect(s)
    means = detector.window_means()
    shown = (f"{means[0]:>8.1f}  {means[1]:>8.1f}" if means
             else f"{'(warming)':>18}")
    print(f"{s.t:>4}  {s.eco2:>9.1f}  {s.tvoc:>9.1f}  {shown}  {bit}")

# %% Write a replay capture for the hardware-in-the-loop runner.
out = Path(__file__).resolve().parent / "replay.csv"
with open(out, "w", newline="") as fh:
    fh.write("t,eco2_ppm,tvoc_ppb\n")
    for s in samples:
        fh.write(f"{s.t},{s.eco2!r},{s.tvoc!r}\n")
print(f"\nwrote {out.name} ({len(samples)} samples) for: "
      f"masksim hil-replay <config> {out.name}")
