"""Why a causal video VAE can be run clip by clip.

Encodes a 13-frame clip once, then encodes its 1-, 5- and 9-frame prefixes:
every prefix reproduces the leading latents of the full encode. The last
part perturbs one frame and lists the latent times that changed.

    python3 demos/causal_vae_streaming.py
"""

import torch

from swinvr.data import synth_video
from swinvr.vae import CausalVideoVAE

torch.manual_seed(0)
vae = CausalVideoVAE().eval()
with torch.no_grad():
    # the zero-initialised output convs would leave only the linear shortcut active
    for conv in (vae.encoder.conv_out, vae.decoder.conv_out):
        conv.conv.weight.normal_(0, 0.02)

video = synth_video(3, 13, 32, 32)
with torch.no_grad():
    full, _ = vae.encode(video)
    print(f"{tuple(video.shape)} -> latent {tuple(full.shape)}")
    for k in range(3):
        part, _ = vae.encode(video[: 4 * k + 1])
        err = (full[: k + 1] - part).abs().max().item()
        print(f"prefix of {4 * k + 1:2d} frames: {part.shape[0]} latents, max |diff| vs full {err:.1e}")

    for j in (0, 3, 6, 12):
        bumped = video.clone()
        bumped[j] = 1.0 - bumped[j]
        z, _ = vae.encode(bumped)
        changed = [i for i in range(z.shape[0]) if not torch.equal(z[i], full[i])]
        print(f"inverting frame {j:2d} changes latent times {changed}")
