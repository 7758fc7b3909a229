"""Stable Diffusion U-Net feature backend.

Runs one denoising forward pass at a small time step and captures the
activations of a decoder (up) block via a forward hook. The decoder
block index maps to a downsampling factor of the input image:

    block 1 -> 8, block 2 -> 16, block 3 -> 32, block 4 -> 64

torch and diffusers are imported lazily so the rest of the package
works without them; a missing dependency or checkpoint surfaces as
CheckpointError with an actionable message.
"""

from __future__ import annotations

import numpy as np

from .backends import BLOCK_FACTORS, CheckpointError, FeatureBackend

DEFAULT_CHECKPOINT = "stabilityai/stable-diffusion-2-1"


class StableDiffusionBackend(FeatureBackend):
    name = "diffusion"

    def __init__(self, checkpoint: str = DEFAULT_CHECKPOINT, device: str = "cpu"):
        try:
            import torch
            from diffusers import AutoencoderKL, DDPMScheduler, UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer
        except ImportError as exc:
            raise CheckpointError(
                "the diffusion backend needs torch, diffusers, and transformers; "
                f"install them or use --model stub ({exc})"
            ) from exc

        self._torch = torch
        self._device = torch.device(device)
        try:
            self.vae = AutoencoderKL.from_pretrained(checkpoint, subfolder="vae")
            self.unet = UNet2DConditionModel.from_pretrained(checkpoint, subfolder="unet")
            self.scheduler = DDPMScheduler.from_pretrained(checkpoint, subfolder="scheduler")
            tokenizer = CLIPTokenizer.from_pretrained(checkpoint, subfolder="tokenizer")
            encoder = CLIPTextModel.from_pretrained(checkpoint, subfolder="text_encoder")
        except Exception as exc:  # hub errors vary by diffusers version
            raise CheckpointError(
                f"could not load checkpoint {checkpoint!r}: {exc}"
            ) from exc

        self.vae.to(self._device).eval()
        self.unet.to(self._device).eval()
        with torch.no_grad():
            tokens = tokenizer(
                "",
                padding="max_length",
                max_length=tokenizer.model_max_length,
                return_tensors="pt",
            )
            # unconditional embedding: the pass is a probe, not generation
            self._empty_embed = encoder(tokens.input_ids)[0].to(self._device)

        bars = self.scheduler.alphas_cumprod
        self._alpha_bars = np.asarray(bars.cpu().numpy(), dtype=np.float64)

    def encode_latent(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        chw = np.transpose(image.astype(np.float32), (2, 0, 1)) * 2.0 - 1.0
        batch = torch.from_numpy(chw[None]).to(self._device)
        with torch.no_grad():
            posterior = self.vae.encode(batch).latent_dist
            latent = posterior.mean * self.vae.config.scaling_factor
        return latent[0].cpu().numpy().astype(np.float32)

    def features(self, z_t: np.ndarray, t: int, block: int) -> np.ndarray:
        if block not in BLOCK_FACTORS:
            raise ValueError(f"block must be one of {sorted(BLOCK_FACTORS)}")
        torch = self._torch
        captured = []

        def on_output(_module, _inputs, output):
            captured.append(output if torch.is_tensor(output) else output[0])

        def on_input(_module, inputs):
            captured.append(inputs[0])

        # up_blocks run coarse to fine, so block 1 (factor 8, full latent
        # resolution) is the LAST up block. A block's own output is taken
        # after its trailing upsampler, one level finer than the block
        # works at, so capture the upsampler input instead.
        up_blocks = self.unet.up_blocks
        target = up_blocks[len(up_blocks) - block]
        if getattr(target, "upsamplers", None):
            handle = target.upsamplers[0].register_forward_pre_hook(on_input)
        else:
            handle = target.register_forward_hook(on_output)
        try:
            batch = torch.from_numpy(z_t[None].astype(np.float32)).to(self._device)
            step = torch.tensor([t], device=self._device)
            with torch.no_grad():
                self.unet(batch, step, encoder_hidden_states=self._empty_embed)
        finally:
            handle.remove()
        if not captured:
            raise CheckpointError(f"decoder block {block} produced no activations")
        return captured[0][0].float().cpu().numpy()

    def alpha_bar(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        return float(self._alpha_bars[min(t, len(self._alpha_bars)) - 1])
