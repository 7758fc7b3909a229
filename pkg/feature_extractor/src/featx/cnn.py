"""VGG19 activation backend, the CNN ablation of the diffusion features.

Features come from a single intermediate activation chosen so the map
is 16x to 32x smaller than the input, matching the working resolution
of the diffusion decoder blocks. No noising is involved; the network
sees the image directly.
"""

from __future__ import annotations

import numpy as np

from .backends import CheckpointError, FeatureBackend

# layer name -> (index past the layer in vgg19().features, downsampling factor)
VGG_LAYERS = {
    "relu5_4": (36, 16),
    "pool5": (37, 32),
}

_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class Vgg19Backend(FeatureBackend):
    name = "cnn"
    uses_noise = False

    def __init__(self, layer: str = "relu5_4", device: str = "cpu",
                 untrained: bool = False, seed: int = 0):
        if layer not in VGG_LAYERS:
            raise ValueError(f"layer must be one of {sorted(VGG_LAYERS)}")
        try:
            import torch
            from torchvision import models
        except ImportError as exc:
            raise CheckpointError(
                "the cnn backend needs torch and torchvision; install them "
                f"or use --model stub ({exc})"
            ) from exc

        self._torch = torch
        self._device = torch.device(device)
        self.layer = layer
        stop, self.factor = VGG_LAYERS[layer]
        if untrained:
            # random but reproducible weights; enough for shape and
            # determinism checks on machines without the download
            torch.manual_seed(seed)
            net = models.vgg19(weights=None)
        else:
            try:
                net = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1)
            except Exception as exc:
                raise CheckpointError(
                    f"could not load pretrained VGG19 weights: {exc}"
                ) from exc
        self._features = net.features[:stop].to(self._device).eval()
        for p in self._features.parameters():
            p.requires_grad_(False)

    def encode_latent(self, image: np.ndarray) -> np.ndarray:
        normed = (image.astype(np.float32) - _IMAGENET_MEAN) / _IMAGENET_STD
        return np.transpose(normed, (2, 0, 1))

    def features(self, z_t: np.ndarray, t: int, block: int) -> np.ndarray:
        torch = self._torch
        batch = torch.from_numpy(z_t[None].astype(np.float32)).to(self._device)
        with torch.no_grad():
            out = self._features(batch)
        return out[0].float().cpu().numpy()
