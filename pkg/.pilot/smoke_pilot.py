import time, json, torch, numpy as np
from scenegrid.training import TrainConfig, init_train_state, prepare_real_batch, train_step
from scenegrid.data import generate_dataset
from scenegrid.geometry import Intrinsics
from scenegrid.evaluation import RandomConvEmbedder, fid_proxy
from scenegrid.checkpoint import save_checkpoint

torch.set_num_threads(2)
cfg = TrainConfig.desk()
intr = Intrinsics.from_fov(53.0, 32, 32, near=0.1, far=12.0)
ds = generate_dataset(8, 2, 20, seed=0, intr=intr, n_cells=16)
state = init_train_state(cfg)
emb = RandomConvEmbedder()
fid0 = fid_proxy(state.ema_generator, ds, n=128, embedder=emb, seed=0)
print("fid step0:", fid0, flush=True)
t0 = time.time()
for i in range(900):
    real, cands = prepare_real_batch(ds, cfg, state.rng)
    m = train_step(state, real, cands, ds.intrinsics)
    if state.step % 100 == 0:
        fid = fid_proxy(state.ema_generator, ds, n=128, embedder=emb, seed=0)
        recent = np.mean([h["recon"] for h in state.history[-50:]])
        print(f"step {state.step} d {m['d_loss']:.3f} g {m['g_loss']:.3f} recon(avg50) {recent:.3f} fid {fid:.2f} elapsed {time.time()-t0:.0f}s", flush=True)
save_checkpoint(".pilot/smoke_pilot.npz", state.generator, state.ema_generator, state.critic, state.decoder, step=state.step)
early = np.mean([h["recon"] for h in state.history[:20]])
late = np.mean([h["recon"] for h in state.history[-50:]])
print("recon early/late ratio:", early/late)
print(json.dumps({"fid0": fid0}))
