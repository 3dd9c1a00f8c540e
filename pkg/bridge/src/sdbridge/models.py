"""Backend registry with lazy loading and graceful capability gaps.

A ModelHub answers the six wire ops. Every backend can be injected as a
plain callable (tests do this, and so can embedders wrapping bespoke
models); anything not injected is loaded on first use from the standard
pretrained stacks. A missing dependency or missing weights raises
CapabilityMissing, which the server translates to an UNAVAILABLE reply
instead of an error, so a link client can keep running with its local
toy backends.

Weight loading always passes local_files_only: this process never tries
to download models, it only picks up what the operator pre-fetched.
"""

from __future__ import annotations

import importlib.util
from typing import Callable, Sequence

import numpy as np

from . import scoring
from .proto import Metric, Op

# the denoising ladder both endpoints must agree on: the wire carries a
# step index n, the model runs at base timestep (n * BASE) // STEPS - 1
LADDER_STEPS = 50
LADDER_BASE = 1000

VAE_ID = "stabilityai/sd-vae-ft-mse"
UNET_ID = "runwayml/stable-diffusion-v1-5"
CAPTION_ID = "Salesforce/blip-image-captioning-base"
CLIP_ID = "openai/clip-vit-base-patch32"


class CapabilityMissing(RuntimeError):
    """The op is understood but this process cannot serve it."""


def _has(*modules: str) -> bool:
    return all(importlib.util.find_spec(m) is not None for m in modules)


def _loading(what: str):
    """Context manager turning import and weight errors into capability gaps."""

    class _Ctx:
        def __enter__(self):
            return None

        def __exit__(self, exc_type, exc, tb):
            if exc_type is None:
                return False
            if issubclass(exc_type, (ImportError, OSError, EnvironmentError)):
                raise CapabilityMissing(f"{what}: {exc}") from exc
            return False

    return _Ctx()


class ModelHub:
    def __init__(
        self,
        encoder: Callable[[np.ndarray], np.ndarray] | None = None,
        decoder: Callable[[np.ndarray], np.ndarray] | None = None,
        denoiser: Callable[..., np.ndarray] | None = None,
        captioner: Callable[[np.ndarray], str] | None = None,
        patch_extractor: scoring.FeatureStack | None = None,
        fid_extractor: scoring.FeatureRows | None = None,
        clip_embedder: Callable[[np.ndarray, str], tuple[np.ndarray, np.ndarray]] | None = None,
        device: str = "cpu",
    ):
        self._encoder = encoder
        self._decoder = decoder
        self._denoiser = denoiser
        self._captioner = captioner
        self._patch_extractor = patch_extractor
        self._fid_extractor = fid_extractor
        self._clip_embedder = clip_embedder
        self.device = device

    # --- capability probing (no weights touched) ---

    def can(self, op: Op) -> bool:
        if op == Op.PROBE:
            return True
        if op in (Op.ENCODE, Op.DECODE):
            return self._encoder is not None or self._decoder is not None or _has("torch", "diffusers")
        if op == Op.DENOISE:
            return self._denoiser is not None or _has("torch", "diffusers", "transformers")
        if op == Op.CAPTION:
            return self._captioner is not None or _has("torch", "transformers")
        if op == Op.SCORE:
            injected = (self._patch_extractor, self._fid_extractor, self._clip_embedder)
            return any(x is not None for x in injected) or _has("torch", "torchvision")
        return False

    def supported_ops(self) -> list[Op]:
        return [op for op in Op if self.can(op)]

    # --- model ops ---

    def encode(self, image: np.ndarray) -> np.ndarray:
        if self._encoder is None:
            self._load_vae()
        return self._encoder(image)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        if self._decoder is None:
            self._load_vae()
        return self._decoder(latent)

    def denoise(
        self,
        step: int,
        weight: float,
        caption: str,
        z: np.ndarray,
        masked_latent: np.ndarray,
        mask: np.ndarray,
    ) -> np.ndarray:
        if self._denoiser is None:
            self._denoiser = self._load_denoiser()
        return self._denoiser(step, weight, caption, z, masked_latent, mask)

    def caption(self, image: np.ndarray) -> str:
        if self._captioner is None:
            self._captioner = self._load_captioner()
        return self._captioner(image)

    # --- scoring ops ---

    def score(self, metric: Metric, parts: Sequence) -> float:
        if metric == Metric.LPIPS:
            a, b = parts
            if a.shape != b.shape:
                raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
            return scoring.patch_distance(a, b, self._resolve_patch_extractor())
        if metric == Metric.FID:
            a, b = parts
            return scoring.fid(a, b, self._resolve_fid_extractor())
        if metric == Metric.CLIP:
            image, text = parts
            if self._clip_embedder is None:
                self._clip_embedder = self._load_clip()
            return scoring.cosine_alignment(*self._clip_embedder(image, text))
        raise ValueError(f"unknown metric {metric}")

    def _resolve_patch_extractor(self) -> scoring.FeatureStack:
        if self._patch_extractor is None:
            self._patch_extractor = self._load_patch_extractor()
        return self._patch_extractor

    def _resolve_fid_extractor(self) -> scoring.FeatureRows:
        if self._fid_extractor is None:
            self._fid_extractor = self._load_fid_extractor()
        return self._fid_extractor

    # --- lazy pretrained loaders -------------------------------------------
    #
    # None of these run in an offline test environment; they exist so a
    # GPU box with pre-fetched weights serves real models with zero code
    # changes. Each converts at the boundary: float64 arrays in, float64
    # arrays or str out.

    def _load_vae(self) -> None:
        with _loading("VAE"):
            import torch
            from diffusers import AutoencoderKL

            vae = AutoencoderKL.from_pretrained(VAE_ID, local_files_only=True)
            vae.to(self.device).eval()

            def encoder(image: np.ndarray) -> np.ndarray:
                x = torch.as_tensor(image[None], dtype=torch.float32, device=self.device)
                with torch.no_grad():
                    z = vae.encode(x * 2.0 - 1.0).latent_dist.mean
                return (z[0] * vae.config.scaling_factor).double().cpu().numpy()

            def decoder(latent: np.ndarray) -> np.ndarray:
                z = torch.as_tensor(latent[None], dtype=torch.float32, device=self.device)
                with torch.no_grad():
                    x = vae.decode(z / vae.config.scaling_factor).sample
                return ((x[0] + 1.0) / 2.0).clamp(0, 1).double().cpu().numpy()

            self._encoder = self._encoder or encoder
            self._decoder = self._decoder or decoder

    def _load_denoiser(self):
        with _loading("denoising UNet"):
            import torch
            from diffusers import UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer

            unet = UNet2DConditionModel.from_pretrained(
                UNET_ID, subfolder="unet", local_files_only=True
            ).to(self.device).eval()
            text_model = CLIPTextModel.from_pretrained(
                UNET_ID, subfolder="text_encoder", local_files_only=True
            ).to(self.device).eval()
            tokenizer = CLIPTokenizer.from_pretrained(
                UNET_ID, subfolder="tokenizer", local_files_only=True
            )

            def embed(text: str):
                tokens = tokenizer(
                    text, padding="max_length", truncation=True,
                    max_length=tokenizer.model_max_length, return_tensors="pt",
                ).input_ids.to(self.device)
                with torch.no_grad():
                    return text_model(tokens).last_hidden_state

            def denoiser(step, weight, caption, z, masked_latent, mask):
                t = (step * LADDER_BASE) // LADDER_STEPS - 1
                zt = torch.as_tensor(z[None], dtype=torch.float32, device=self.device)
                ts = torch.tensor([t], device=self.device)
                with torch.no_grad():
                    eps = unet(zt, ts, encoder_hidden_states=embed("")).sample
                    if weight > 0.0:
                        eps_text = unet(zt, ts, encoder_hidden_states=embed(caption)).sample
                        eps = eps + weight * (eps_text - eps)
                return eps[0].double().cpu().numpy()

            return denoiser

    def _load_captioner(self):
        with _loading("caption model"):
            import torch
            from transformers import BlipForConditionalGeneration, BlipProcessor

            processor = BlipProcessor.from_pretrained(CAPTION_ID, local_files_only=True)
            model = BlipForConditionalGeneration.from_pretrained(
                CAPTION_ID, local_files_only=True
            ).to(self.device).eval()

            def captioner(image: np.ndarray) -> str:
                chw = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
                inputs = processor(images=(chw * 255).astype(np.uint8), return_tensors="pt")
                with torch.no_grad():
                    out = model.generate(**inputs.to(self.device), max_new_tokens=30)
                return processor.decode(out[0], skip_special_tokens=True)

            return captioner

    def _load_patch_extractor(self) -> scoring.FeatureStack:
        with _loading("VGG features"):
            import torch
            from torchvision.models import VGG16_Weights, vgg16

            net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features.eval()
            taps = (3, 8, 15, 22, 29)  # relu1_2 .. relu5_3

            def extractor(image: np.ndarray):
                x = torch.as_tensor(image[None], dtype=torch.float32)
                feats = []
                with torch.no_grad():
                    for i, layer in enumerate(net):
                        x = layer(x)
                        if i in taps:
                            feats.append(x[0].double().numpy())
                return feats

            return extractor

    def _load_fid_extractor(self) -> scoring.FeatureRows:
        with _loading("inception features"):
            import torch
            from torchvision.models import Inception_V3_Weights, inception_v3

            net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
            net.fc = torch.nn.Identity()
            net.eval()

            def extractor(images: np.ndarray) -> np.ndarray:
                x = torch.as_tensor(images, dtype=torch.float32)
                x = torch.nn.functional.interpolate(
                    x, size=(299, 299), mode="bilinear", align_corners=False
                )
                with torch.no_grad():
                    return net(x).double().numpy()

            return extractor

    def _load_clip(self):
        with _loading("CLIP"):
            import torch
            from transformers import CLIPModel, CLIPProcessor

            model = CLIPModel.from_pretrained(CLIP_ID, local_files_only=True).eval()
            processor = CLIPProcessor.from_pretrained(CLIP_ID, local_files_only=True)

            def embedder(image: np.ndarray, text: str):
                chw = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
                inputs = processor(
                    text=[text], images=(chw * 255).astype(np.uint8),
                    return_tensors="pt", padding=True,
                )
                with torch.no_grad():
                    out = model(**inputs)
                return (
                    out.image_embeds[0].double().numpy(),
                    out.text_embeds[0].double().numpy(),
                )

            return embedder
