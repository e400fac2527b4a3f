"""Compiled inner loops for the cloth simulator and rasterizer."""
import math

import numpy as np
from numba import njit

STOP_NONE = 0
STOP_SETTLED = 1
STOP_LIFTED = 2

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_STOPPED = 2

BLOWUP_LIMIT = 100.0


@njit(cache=True, error_model="numpy")
def advance(x, v, pinned, sp_i, sp_j, rest, stiff, sdamp, clamp, inv_mass,
            pin_idx, pin_from, pin_to, n_steps, dt, gravity, air_damping, mu,
            max_stretch, clamp_iters, stop_mode, stop_value, min_steps):
    """Advance ``x``/``v`` in place for up to ``n_steps`` steps.

    Pinned vertices follow a straight line from ``pin_from`` to ``pin_to``.
    Returns ``(steps_taken, status)``.
    """
    n = x.shape[0]
    ns = sp_i.shape[0]
    npin = pin_idx.shape[0]
    f = np.zeros((n, 3))
    xp = np.empty((n, 3))
    zraw = np.empty(n)
    for step in range(n_steps):
        frac = (step + 1.0) / n_steps
        for a in range(n):
            f[a, 0] = 0.0
            f[a, 1] = 0.0
            f[a, 2] = 0.0
        for s in range(ns):
            i = sp_i[s]
            j = sp_j[s]
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            ln = math.sqrt(dx * dx + dy * dy + dz * dz)
            if ln < 1e-12:
                continue
            ux = dx / ln
            uy = dy / ln
            uz = dz / ln
            rv = (v[j, 0] - v[i, 0]) * ux + (v[j, 1] - v[i, 1]) * uy + (v[j, 2] - v[i, 2]) * uz
            mag = stiff[s] * (ln - rest[s]) + sdamp[s] * rv
            f[i, 0] += mag * ux
            f[i, 1] += mag * uy
            f[i, 2] += mag * uz
            f[j, 0] -= mag * ux
            f[j, 1] -= mag * uy
            f[j, 2] -= mag * uz

        keep = 1.0 - air_damping * dt
        for a in range(n):
            v[a, 0] = (v[a, 0] + f[a, 0] * inv_mass * dt) * keep
            v[a, 1] = (v[a, 1] + f[a, 1] * inv_mass * dt) * keep
            v[a, 2] = (v[a, 2] + (f[a, 2] * inv_mass - gravity) * dt) * keep
            xp[a, 0] = x[a, 0] + v[a, 0] * dt
            xp[a, 1] = x[a, 1] + v[a, 1] * dt
            xp[a, 2] = x[a, 2] + v[a, 2] * dt
        for p in range(npin):
            a = pin_idx[p]
            for c in range(3):
                xp[a, c] = pin_from[p, c] + frac * (pin_to[p, c] - pin_from[p, c])

        # strain limiting; pinned vertices are immovable
        for _ in range(clamp_iters):
            for s in range(ns):
                if not clamp[s]:
                    continue
                i = sp_i[s]
                j = sp_j[s]
                dx = xp[j, 0] - xp[i, 0]
                dy = xp[j, 1] - xp[i, 1]
                dz = xp[j, 2] - xp[i, 2]
                ln = math.sqrt(dx * dx + dy * dy + dz * dz)
                lim = max_stretch * rest[s]
                if ln <= lim:
                    continue
                wi = 0.0 if pinned[i] else 1.0
                wj = 0.0 if pinned[j] else 1.0
                w = wi + wj
                if w == 0.0:
                    continue
                corr = (ln - lim) / (ln * w)
                xp[i, 0] += wi * corr * dx
                xp[i, 1] += wi * corr * dy
                xp[i, 2] += wi * corr * dz
                xp[j, 0] -= wj * corr * dx
                xp[j, 1] -= wj * corr * dy
                xp[j, 2] -= wj * corr * dz

        vmax2 = 0.0
        zmin = 1e30
        bad = False
        for a in range(n):
            zraw[a] = xp[a, 2]
            if xp[a, 2] < 0.0:
                xp[a, 2] = 0.0
            vx = (xp[a, 0] - x[a, 0]) / dt
            vy = (xp[a, 1] - x[a, 1]) / dt
            vz = (xp[a, 2] - x[a, 2]) / dt
            if zraw[a] < 0.0 and not pinned[a]:
                # Coulomb friction from the normal velocity removed by the ground
                dvn = -zraw[a] / dt
                vt = math.sqrt(vx * vx + vy * vy)
                lim = mu * dvn
                if vt <= lim:
                    vx = 0.0
                    vy = 0.0
                else:
                    r = 1.0 - lim / vt
                    vx *= r
                    vy *= r
                xp[a, 0] = x[a, 0] + vx * dt
                xp[a, 1] = x[a, 1] + vy * dt
                if vz < 0.0:
                    vz = 0.0
            v[a, 0] = vx
            v[a, 1] = vy
            v[a, 2] = vz
            x[a, 0] = xp[a, 0]
            x[a, 1] = xp[a, 1]
            x[a, 2] = xp[a, 2]
            if abs(x[a, 0]) > BLOWUP_LIMIT or abs(x[a, 1]) > BLOWUP_LIMIT or abs(x[a, 2]) > BLOWUP_LIMIT:
                bad = True
            if not pinned[a]:
                sp2 = vx * vx + vy * vy + vz * vz
                if sp2 > vmax2:
                    vmax2 = sp2
                if x[a, 2] < zmin:
                    zmin = x[a, 2]
        if bad or not np.isfinite(vmax2):
            return step + 1, STATUS_BLOWUP
        if step + 1 >= min_steps:
            if stop_mode == STOP_SETTLED and vmax2 < stop_value * stop_value:
                return step + 1, STATUS_STOPPED
            if stop_mode == STOP_LIFTED and zmin >= stop_value:
                return step + 1, STATUS_STOPPED
    return n_steps, STATUS_OK


@njit(cache=True, error_model="numpy")
def energy(x, v, sp_i, sp_j, rest, stiff, mass, gravity):
    kin = 0.0
    pot = 0.0
    for a in range(x.shape[0]):
        kin += 0.5 * mass * (v[a, 0] ** 2 + v[a, 1] ** 2 + v[a, 2] ** 2)
        pot += mass * gravity * x[a, 2]
    for s in range(sp_i.shape[0]):
        i = sp_i[s]
        j = sp_j[s]
        ln = math.sqrt((x[j, 0] - x[i, 0]) ** 2 + (x[j, 1] - x[i, 1]) ** 2 + (x[j, 2] - x[i, 2]) ** 2)
        pot += 0.5 * stiff[s] * (ln - rest[s]) ** 2
    return kin + pot


@njit(cache=True, error_model="numpy")
def rasterize(uv, z, tris, width, height, mask, hmap):
    """Rasterize triangles given in pixel coordinates into ``mask``/``hmap``.

    A pixel is covered when its centre lies inside (or on the edge of) a
    triangle. ``hmap`` keeps the maximum interpolated height per pixel.
    """
    for t in range(tris.shape[0]):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        ax = uv[a, 0]
        ay = uv[a, 1]
        bx = uv[b, 0]
        by = uv[b, 1]
        cx = uv[c, 0]
        cy = uv[c, 1]
        den = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        if abs(den) < 1e-18:
            continue
        x0 = max(int(math.floor(min(ax, bx, cx) - 0.5)), 0)
        x1 = min(int(math.ceil(max(ax, bx, cx) - 0.5)), width - 1)
        y0 = max(int(math.floor(min(ay, by, cy) - 0.5)), 0)
        y1 = min(int(math.ceil(max(ay, by, cy) - 0.5)), height - 1)
        for py in range(y0, y1 + 1):
            qy = py + 0.5
            for px in range(x0, x1 + 1):
                qx = px + 0.5
                l1 = ((by - cy) * (qx - cx) + (cx - bx) * (qy - cy)) / den
                l2 = ((cy - ay) * (qx - cx) + (ax - cx) * (qy - cy)) / den
                l3 = 1.0 - l1 - l2
                if l1 >= -1e-9 and l2 >= -1e-9 and l3 >= -1e-9:
                    zz = l1 * z[a] + l2 * z[b] + l3 * z[c]
                    if not mask[py, px] or zz > hmap[py, px]:
                        hmap[py, px] = zz
                    mask[py, px] = True
