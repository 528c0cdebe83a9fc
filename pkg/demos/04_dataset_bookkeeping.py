"""Timestamp pairing, 1 Hz subsampling and per-environment counts."""
# %%
from rgbtkit.dataset import (DatasetManifest, SequenceRecord, dataset_stats, format_stats_table,
                             pair_by_timestamp, sequence_pairs, subsample_1hz)
from rgbtkit.thermalproc import FfcEvent

S = 1_000_000_000


def stream(hz, seconds, offset=0):
    return [offset + round(i * S / hz) for i in range(int(hz * seconds))]


# %% Greedy one-to-one pairing within a tolerance.
rgb_ts, thr_ts = stream(30, 2), stream(9, 2, offset=3_000_000)
pairs = pair_by_timestamp(rgb_ts, thr_ts, tol_ns=10_000_000)
print(f"{len(pairs)} pairs; first {pairs[0]}")

# %% 1 Hz subsampling picks the frame closest to each whole second.
print("slots:", subsample_1hz(stream(30, 5.5)))

# %% A whole manifest: subsample thermal, drop shutter-event frames, pair with RGB.
def seq(name, env, seconds, ffc=()):
    return SequenceRecord(name, env, rgb=[(f"{name}/rgb/{i}", t) for i, t in enumerate(stream(30, seconds))],
                          thermal=[(f"{name}/thr/{i}", t) for i, t in enumerate(stream(30, seconds))],
                          ffc=[FfcEvent(a, b) for a, b in ffc])


manifest = DatasetManifest("demo", [
    seq("lab", "indoor", 10, [(int(3.2 * S), int(4.5 * S))]),
    seq("trail", "offroad", 20),
    seq("street", "urban-drive", 8),
])
print("pairs in 'lab':", len(sequence_pairs(manifest.sequences[0])))
print(format_stats_table(dataset_stats(manifest)))
