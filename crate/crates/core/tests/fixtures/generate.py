"""Regenerates the reference fixtures with torch, scipy and numpy.

    python3 crates/core/tests/fixtures/generate.py
"""
import json
import pathlib

import numpy as np
import torch
import torch.nn.functional as F
from scipy.interpolate import PchipInterpolator

HERE = pathlib.Path(__file__).parent
rng = np.random.default_rng(20240607)
torch.set_default_dtype(torch.float64)


def flat(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def f32(shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


def conv_cases():
    cases = []
    for dilation in (1, 2, 3, 4):
        for c_in, c_out, h, w in ((1, 1, 7, 9), (2, 3, 9, 11), (3, 2, 12, 6)):
            x = f32((c_in, h, w))
            wt = f32((c_out, c_in, 3, 3))
            b = f32((c_out,))
            y = F.conv2d(
                torch.from_numpy(x.astype(np.float64))[None],
                torch.from_numpy(wt.astype(np.float64)),
                torch.from_numpy(b.astype(np.float64)),
                padding=dilation,
                dilation=dilation,
            )[0]
            cases.append(dict(
                dilation=dilation, c_in=c_in, c_out=c_out, height=h, width=w,
                input=flat(x), weight=flat(wt), bias=flat(b), output=flat(y.numpy()),
            ))
    return cases


def layer_shapes(levels, base, dilations, mode):
    ch = lambda i: base << i
    out = []
    for i in range(levels):
        c_in = 1 if i == 0 else ch(i - 1)
        out.append((f"enc{i}.conv1", (ch(i), c_in, 3, 3)))
        out.append((f"enc{i}.conv2", (ch(i), ch(i), 3, 3)))
    for j, _ in enumerate(dilations):
        c_in = ch(levels) if (mode == "sequential" and j > 0) else ch(levels - 1)
        out.append((f"bottleneck.{j}", (ch(levels), c_in, 3, 3)))
    for i in reversed(range(levels)):
        out.append((f"dec{i}.conv1", (ch(i), ch(i + 1) + ch(i), 3, 3)))
        out.append((f"dec{i}.conv2", (ch(i), ch(i), 3, 3)))
    out.append(("head", (1, ch(0), 1, 1)))
    return out


def unet_forward(x, params, levels, dilations, mode):
    t = lambda name: torch.from_numpy(params[name].astype(np.float64))
    conv = lambda v, name, d=1: F.relu(F.conv2d(v, t(name + ".weight"), t(name + ".bias"), padding=d, dilation=d))
    skips = []
    for i in range(levels):
        x = conv(conv(x, f"enc{i}.conv1"), f"enc{i}.conv2")
        skips.append(x)
        x = F.max_pool2d(x, 2)
    if mode == "sequential":
        for j, d in enumerate(dilations):
            x = conv(x, f"bottleneck.{j}", d)
    else:
        x = sum(conv(x, f"bottleneck.{j}", d) for j, d in enumerate(dilations))
    for i in reversed(range(levels)):
        up = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = torch.cat([up, skips[i]], dim=1)
        x = conv(conv(x, f"dec{i}.conv1"), f"dec{i}.conv2")
    logits = F.conv2d(x, t("head.weight"), t("head.bias"))
    return torch.sigmoid(logits)[0, 0]


def unet_cases():
    cases = []
    for levels, base, dilations, mode, (h, w) in (
        (1, 2, [1], "sequential", (4, 4)),
        (2, 2, [1, 2], "sequential", (8, 12)),
        (2, 3, [1, 2, 4], "parallel", (16, 8)),
    ):
        params = {}
        tensors = []
        for name, shape in layer_shapes(levels, base, dilations, mode):
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            wt = f32(shape, -bound, bound)
            b = f32((shape[0],), -0.1, 0.1)
            params[name + ".weight"] = wt
            params[name + ".bias"] = b
            tensors.append(dict(name=name + ".weight", shape=list(shape), values=flat(wt)))
            tensors.append(dict(name=name + ".bias", shape=[shape[0]], values=flat(b)))
        x = f32((h, w), 0.0, 1.0)
        y = unet_forward(torch.from_numpy(x.astype(np.float64))[None, None], params, levels, dilations, mode)
        cases.append(dict(
            config=dict(encoder_levels=levels, base_channels=base, bottleneck_dilations=dilations,
                        kernel_size=3, bottleneck_mode=mode),
            height=h, width=w, input=flat(x), tensors=tensors, output=flat(y.numpy()),
        ))
    return cases


def pchip_cases():
    cases = []
    for n in (2, 3, 4, 7, 12):
        for monotone in (True, False):
            x = np.sort(rng.choice(np.arange(0, 400), size=n, replace=False)).astype(float)
            x += rng.uniform(0.0, 0.9, size=n)
            x.sort()
            y = rng.uniform(-50, 50, size=n)
            if monotone:
                y = np.sort(y)
            q = np.linspace(x[0], x[-1], 41)
            cases.append(dict(x=flat(x), y=flat(y), query=flat(q), expected=flat(PchipInterpolator(x, y)(q))))
    # flat segments and slope sign changes
    x = np.array([0.0, 10.0, 20.0, 30.0, 40.0, 55.0])
    y = np.array([5.0, 5.0, 9.0, 2.0, 2.0, 7.0])
    q = np.linspace(0.0, 55.0, 56)
    cases.append(dict(x=flat(x), y=flat(y), query=flat(q), expected=flat(PchipInterpolator(x, y)(q))))
    return cases


def cubic_cases():
    cases = []
    for x0, n in ((0, 4), (17, 40), (300, 421)):
        xs = np.arange(x0, x0 + n, dtype=float)
        ys = 200 + 30 * np.sin(xs / 60.0) + rng.normal(0, 2.0, size=n)
        coeffs = np.polyfit(xs, ys, 3)
        cases.append(dict(x_start=x0, ordinates=flat(ys), fitted=flat(np.polyval(coeffs, xs))))
    return cases


if __name__ == "__main__":
    (HERE / "conv_torch.json").write_text(json.dumps(conv_cases()))
    (HERE / "unet_torch.json").write_text(json.dumps(unet_cases()))
    (HERE / "pchip_scipy.json").write_text(json.dumps(pchip_cases()))
    (HERE / "cubic_numpy.json").write_text(json.dumps(cubic_cases()))
