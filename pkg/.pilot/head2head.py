import sys, time, torch, numpy as np
from dataclasses import replace
from scenegrid.training import TrainConfig, init_train_state, prepare_real_batch, train_step
from scenegrid.data import generate_dataset
from scenegrid.geometry import Intrinsics
from scenegrid.evaluation import RandomConvEmbedder, fid_proxy

mode = sys.argv[1]
steps = int(sys.argv[2])
torch.set_num_threads(2)
cfg = TrainConfig.desk()
cfg = replace(cfg, generator=replace(cfg.generator, conditioning=mode))
intr = Intrinsics.from_fov(53.0, 32, 32, near=0.1, far=12.0)
ds = generate_dataset(8, 2, 20, seed=0, intr=intr, n_cells=16)
state = init_train_state(cfg)
emb = RandomConvEmbedder()
print(f"{mode} fid step0:", fid_proxy(state.ema_generator, ds, n=200, embedder=emb, seed=0), flush=True)
t0 = time.time()
for i in range(steps):
    real, cands = prepare_real_batch(ds, cfg, state.rng)
    m = train_step(state, real, cands, ds.intrinsics)
    if state.step % 250 == 0:
        fid = fid_proxy(state.ema_generator, ds, n=200, embedder=emb, seed=0)
        print(f"{mode} step {state.step} fid {fid:.3f} d {m['d_loss']:.2f} g {m['g_loss']:.2f} ({time.time()-t0:.0f}s)", flush=True)
