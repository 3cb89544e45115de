"""Segmentation encoders with outputs at 1/4, 1/8, 1/16 and 1/32."""
from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import ConvNormAct


class ShapeError(ValueError):
    pass


def check_input(x: torch.Tensor, channels: int, divisor: int) -> None:
    if x.dim() != 4:
        raise ShapeError(f"expected a (B,C,H,W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ShapeError(f"expected {channels} input channels, got {x.shape[1]}")
    h, w = x.shape[2:]
    if h % divisor or w % divisor:
        raise ShapeError(f"input {h}x{w} is not divisible by {divisor}")


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride, norm):
        super().__init__()
        self.conv1 = ConvNormAct(cin, cout, 3, stride, norm)
        self.conv2 = ConvNormAct(cout, cout, 3, 1, norm, act=False)
        self.shortcut = None if (cin == cout and stride == 1) else ConvNormAct(cin, cout, 1, stride, norm, act=False)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return self.act(self.conv2(self.conv1(x)) + skip)


class TinyEncoder(nn.Module):
    """Two stride-2 stem convs followed by four residual stages."""

    first_conv_key = "stem.0.0.weight"

    def __init__(self, in_channels: int, config: ModelConfig):
        super().__init__()
        self.in_channels = in_channels
        w = config.base_width
        self.stem = nn.Sequential(ConvNormAct(in_channels, w, 3, 2, config.norm), ConvNormAct(w, w, 3, 2, config.norm))
        stages = []
        cin = w
        for i, (cout, n) in enumerate(zip(config.encoder_channels(), config.tiny_blocks)):
            blocks = [BasicBlock(cin, cout, 1 if i == 0 else 2, config.norm)]
            blocks += [BasicBlock(cout, cout, 1, config.norm) for _ in range(n - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        check_input(x, self.in_channels, 32)
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ResNetEncoder(nn.Module):
    """torchvision ResNet-50/101 trunk, first conv widened to ``in_channels``."""

    first_conv_key = "conv1.weight"

    def __init__(self, in_channels: int, depth: int):
        super().__init__()
        import torchvision

        net = {50: torchvision.models.resnet50, 101: torchvision.models.resnet101}[depth](weights=None)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        self.in_channels = in_channels
        self.conv1, self.bn1, self.relu, self.maxpool = net.conv1, net.bn1, net.relu, net.maxpool
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4

    def forward(self, x):
        check_input(x, self.in_channels, 32)
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        f4 = self.layer1(x)
        f8 = self.layer2(f4)
        f16 = self.layer3(f8)
        f32 = self.layer4(f16)
        return [f4, f8, f16, f32]


def build_encoder(in_channels: int, config: ModelConfig) -> nn.Module:
    if config.encoder == "tiny":
        return TinyEncoder(in_channels, config)
    return ResNetEncoder(in_channels, 50 if config.encoder == "resnet50" else 101)


def inflate_first_conv(weight: torch.Tensor) -> torch.Tensor:
    """Three-channel kernels to six by duplication and halving, so a pair of
    identical frames produces the original activations."""
    return torch.cat([weight, weight], dim=1) / 2


def load_three_channel_weights(encoder: nn.Module, state_dict: dict) -> None:
    """Load an encoder state trained on RGB input into a six-channel encoder."""
    state = dict(state_dict)
    key = encoder.first_conv_key
    target = encoder.state_dict()[key]
    if key in state and state[key].shape[1] * 2 == target.shape[1]:
        state[key] = inflate_first_conv(state[key])
    encoder.load_state_dict(state)
