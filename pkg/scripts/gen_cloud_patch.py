#!/usr/bin/env python3
"""Regenerate the default cumulus-cloud RGBA patch asset.

Draws a few overlapping soft white lobes over a transparent background,
wider than tall like a fair-weather cumulus, with a flat-ish base. The
center is fully opaque; edges feather out. 25x25 pixels.
"""

import numpy as np
from PIL import Image

SIZE = 25


def main() -> None:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    # lobes: (cx, cy, rx, ry, weight)
    lobes = [
        (12.0, 14.0, 10.5, 6.0, 1.0),
        (7.5, 12.0, 6.0, 5.0, 0.9),
        (16.5, 11.5, 6.5, 5.5, 0.9),
        (12.0, 9.0, 5.0, 4.5, 0.8),
    ]
    body = np.zeros((SIZE, SIZE))
    for cx, cy, rx, ry, w in lobes:
        d = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        body = np.maximum(body, w * np.clip(1.35 - d, 0.0, 1.0))
    body = np.clip(body, 0.0, 1.0)
    # flat base: fade everything below the cloud floor
    floor = 19.0
    fade = np.clip(1.0 - (yy - floor) / 2.5, 0.0, 1.0)
    body *= fade

    alpha = np.clip(body * 1.6, 0.0, 1.0)
    alpha = (alpha * 255.0).round().astype(np.uint8)
    # ensure a solid opaque core
    core = body > 0.55
    alpha[core] = 255

    # white cloud with faintly gray shading toward the base
    shade = np.clip(1.0 - 0.12 * np.clip((yy - 10.0) / 10.0, 0.0, 1.0), 0.0, 1.0)
    rgb = (255.0 * shade).round().astype(np.uint8)
    rgba = np.dstack([rgb, rgb, rgb, alpha])

    Image.fromarray(rgba, mode="RGBA").save("src/warp/assets/cloud.png")
    opaque = int((alpha == 255).sum())
    print(f"wrote src/warp/assets/cloud.png ({opaque} fully opaque pixels)")


if __name__ == "__main__":
    main()
