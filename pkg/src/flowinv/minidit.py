"""Miniature two-stream transformer velocity network.

Text tokens and data tokens each get their own AdaLN modulation (scale, shift,
gate per sub-layer, computed from the timestep embedding) and per-stream
projections, then attend jointly in a single self-attention over the
concatenated sequence. The post-modulation, pre-attention text-token features
are the hookable replacement point; Q/K/V of the joint attention are hookable
too. Gradients are hand-derived (forward caches every intermediate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fields import VelocityField
from .numerics import RngStream, sinusoidal_embedding

NULL_TOKEN = 0
LN_EPS = 1e-6


@dataclass(frozen=True)
class MiniDiTArch:
    vocab_size: int = 8
    d_model: int = 48
    n_blocks: int = 2
    n_text: int = 2
    data_dim: int = 4
    patch: int = 2
    d_ff: int = 96
    d_time: int = 48

    def __post_init__(self):
        if self.data_dim % self.patch != 0:
            raise InvalidArgumentError("data_dim must be divisible by patch")
        if self.d_time % 2 != 0:
            raise InvalidArgumentError("d_time must be even")

    @property
    def n_img(self) -> int:
        return self.data_dim // self.patch

    def to_dict(self) -> dict:
        return {
            "type": "minidit",
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_blocks": self.n_blocks,
            "n_text": self.n_text,
            "data_dim": self.data_dim,
            "patch": self.patch,
            "d_ff": self.d_ff,
            "d_time": self.d_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MiniDiTArch":
        keys = ("vocab_size", "d_model", "n_blocks", "n_text", "data_dim", "patch", "d_ff", "d_time")
        return cls(**{k: int(d[k]) for k in keys})


def _ln_forward(h: np.ndarray):
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    hn = (h - mu) * inv_std
    return hn, inv_std


def _ln_backward(dn: np.ndarray, hn: np.ndarray, inv_std: np.ndarray) -> np.ndarray:
    m1 = dn.mean(axis=-1, keepdims=True)
    m2 = (dn * hn).mean(axis=-1, keepdims=True)
    return inv_std * (dn - m1 - hn * m2)


class MiniDiT:
    """Parameter container plus forward/backward for the two-stream block stack."""

    STREAMS = ("txt", "img")

    def __init__(self, arch: MiniDiTArch):
        self.arch = arch
        self.param_shapes = self._build_shapes()

    def _build_shapes(self) -> dict[str, tuple[int, ...]]:
        a = self.arch
        shapes: dict[str, tuple[int, ...]] = {
            "embed": (a.vocab_size, a.d_model),
            "w_in": (a.d_model, a.patch),
            "b_in": (a.d_model,),
            # learned position embedding for data patches; without it the
            # patches are permutation-symmetric and cannot be told apart
            "pos_img": (a.n_img, a.d_model),
            "w_t1": (a.d_model, a.d_time),
            "b_t1": (a.d_model,),
            "w_t2": (a.d_model, a.d_model),
            "b_t2": (a.d_model,),
            "w_out": (a.patch, a.d_model),
            "b_out": (a.patch,),
        }
        for b in range(a.n_blocks):
            for s in self.STREAMS:
                p = f"blk{b}.{s}."
                shapes[p + "adaln_w"] = (6 * a.d_model, a.d_model)
                shapes[p + "adaln_b"] = (6 * a.d_model,)
                for name in ("wq", "wk", "wv", "wo"):
                    shapes[p + name] = (a.d_model, a.d_model)
                shapes[p + "w1"] = (a.d_ff, a.d_model)
                shapes[p + "b1"] = (a.d_ff,)
                shapes[p + "w2"] = (a.d_model, a.d_ff)
                shapes[p + "b2"] = (a.d_model,)
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes.values())

    def init_params(self, rng: RngStream) -> dict[str, np.ndarray]:
        """AdaLN projections and the output head start at zero, so every block
        begins as an identity contribution and the initial velocity is zero."""
        params = {}
        for name, shape in self.param_shapes.items():
            if "adaln" in name or name in ("w_out", "b_out") or name.endswith((".b1", ".b2")) or name in ("b_in", "b_t1", "b_t2"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[-1] if len(shape) > 1 else shape[0]
                params[name] = rng.normal(shape) / np.sqrt(fan_in)
        return params

    def flatten(self, params: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([params[k].ravel() for k in self.param_shapes])

    def unflatten(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        params = {}
        off = 0
        for name, shape in self.param_shapes.items():
            size = int(np.prod(shape))
            params[name] = vec[off : off + size].reshape(shape).copy()
            off += size
        if off != vec.size:
            raise InvalidArgumentError("parameter vector has the wrong length")
        return params

    # ------------------------------------------------------------------ forward

    def forward(self, params, x, tokens, sigma, hooks=None, capture=False):
        """Velocity over data tokens.

        x: (n, data_dim); tokens: (n, n_text) int token ids; sigma: scalar or (n,).
        hooks, if given, may expose `text_features(block, M) -> M` and
        `qkv(block, q, k, v) -> (q, k, v)`. Returns (velocity, aux) where aux
        holds the backward cache and, when capture=True, per-block caches of
        the text features and Q/K/V actually used.
        """
        a = self.arch
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.shape[0] == 1 and n > 1:
            tokens = np.repeat(tokens, n, axis=0)
        if tokens.shape != (n, a.n_text):
            raise InvalidArgumentError(f"tokens must have shape ({n}, {a.n_text})")
        if np.any(tokens < 0) or np.any(tokens >= a.vocab_size):
            raise InvalidArgumentError("token id out of range for embedding table")
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))

        cache: dict = {"x": x, "tokens": tokens, "n": n}
        caps: list[dict] = []

        txt = params["embed"][tokens]  # (n, j, D)
        patches = x.reshape(n, a.n_img, a.patch)
        img = patches @ params["w_in"].T + params["b_in"] + params["pos_img"][None]
        cache["patches"] = patches

        temb = sinusoidal_embedding(sig, a.d_time)
        t_pre = temb @ params["w_t1"].T + params["b_t1"]
        t_hid = np.tanh(t_pre)
        c = t_hid @ params["w_t2"].T + params["b_t2"]
        c_act = np.tanh(c)
        cache.update(temb=temb, t_hid=t_hid, c_act=c_act)

        h = {"txt": txt, "img": img}
        cache["blocks"] = []
        for b in range(a.n_blocks):
            bc: dict = {"h_in": {s: h[s] for s in self.STREAMS}}
            mods = {}
            for s in self.STREAMS:
                p = params[f"blk{b}.{s}.adaln_w"]
                mod = c_act @ p.T + params[f"blk{b}.{s}.adaln_b"]
                mods[s] = np.split(mod, 6, axis=-1)  # sc1, sh1, g1, sc2, sh2, g2
            bc["mods"] = mods

            xmod = {}
            for s in self.STREAMS:
                hn, inv_std = _ln_forward(h[s])
                sc1, sh1 = mods[s][0], mods[s][1]
                xm = hn * (1.0 + sc1[:, None, :]) + sh1[:, None, :]
                bc[f"ln1_{s}"] = (hn, inv_std)
                xmod[s] = xm
            if hooks is not None and hasattr(hooks, "text_features"):
                xmod["txt"] = hooks.text_features(b, xmod["txt"])
            bc["xmod"] = xmod

            q = np.concatenate(
                [xmod[s] @ params[f"blk{b}.{s}.wq"].T for s in self.STREAMS], axis=1
            )
            k = np.concatenate(
                [xmod[s] @ params[f"blk{b}.{s}.wk"].T for s in self.STREAMS], axis=1
            )
            v = np.concatenate(
                [xmod[s] @ params[f"blk{b}.{s}.wv"].T for s in self.STREAMS], axis=1
            )
            if hooks is not None and hasattr(hooks, "qkv"):
                q, k, v = hooks.qkv(b, q, k, v)
            scale = 1.0 / np.sqrt(a.d_model)
            scores = np.einsum("nld,nmd->nlm", q, k) * scale
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            o = np.einsum("nlm,nmd->nld", attn, v)
            bc.update(q=q, k=k, v=v, attn=attn, o=o)

            if capture:
                caps.append({"text_features": xmod["txt"].copy(), "q": q.copy(), "k": k.copy(), "v": v.copy()})

            splits = {"txt": o[:, : a.n_text], "img": o[:, a.n_text :]}
            h1 = {}
            for s in self.STREAMS:
                att_out = splits[s] @ params[f"blk{b}.{s}.wo"].T
                g1 = mods[s][2]
                h1[s] = h[s] + g1[:, None, :] * att_out
                bc[f"att_out_{s}"] = att_out
            bc["h1"] = h1

            h2 = {}
            for s in self.STREAMS:
                hn2, inv_std2 = _ln_forward(h1[s])
                sc2, sh2, g2 = mods[s][3], mods[s][4], mods[s][5]
                y = hn2 * (1.0 + sc2[:, None, :]) + sh2[:, None, :]
                z = y @ params[f"blk{b}.{s}.w1"].T + params[f"blk{b}.{s}.b1"]
                u = np.tanh(z)
                f = u @ params[f"blk{b}.{s}.w2"].T + params[f"blk{b}.{s}.b2"]
                h2[s] = h1[s] + g2[:, None, :] * f
                bc[f"ln2_{s}"] = (hn2, inv_std2)
                bc[f"ffn_{s}"] = (y, u, f)
            cache["blocks"].append(bc)
            h = h2

        cache["img_final"] = h["img"]
        vel = (h["img"] @ params["w_out"].T + params["b_out"]).reshape(n, a.data_dim)
        aux = {"cache": cache}
        if capture:
            aux["caches"] = caps
        return vel, aux

    # ----------------------------------------------------------------- backward

    def backward(self, params, cache, dvel):
        """Gradients of a scalar loss w.r.t. all parameters, given dL/dvelocity.

        Only valid for forward passes run without hooks.
        """
        a = self.arch
        n = cache["n"]
        grads = {k: np.zeros_like(params[k]) for k in self.param_shapes}

        dvel = np.asarray(dvel, dtype=np.float64).reshape(n, a.n_img, a.patch)
        img_final = cache["img_final"]
        grads["w_out"] += np.einsum("ntp,ntd->pd", dvel, img_final)
        grads["b_out"] += dvel.sum(axis=(0, 1))
        dh = {"img": dvel @ params["w_out"], "txt": np.zeros((n, a.n_text, a.d_model))}
        dc_act = np.zeros((n, a.d_model))

        for b in range(a.n_blocks - 1, -1, -1):
            bc = cache["blocks"][b]
            mods = bc["mods"]
            dmod = {s: [None] * 6 for s in self.STREAMS}

            # feed-forward sub-layer
            dh1 = {}
            for s in self.STREAMS:
                y, u, f = bc[f"ffn_{s}"]
                g2 = mods[s][5]
                dh2 = dh[s]
                dmod[s][5] = (dh2 * f).sum(axis=1)
                df = dh2 * g2[:, None, :]
                grads[f"blk{b}.{s}.b2"] += df.sum(axis=(0, 1))
                grads[f"blk{b}.{s}.w2"] += np.einsum("ntd,nth->dh", df, u)
                du = df @ params[f"blk{b}.{s}.w2"]
                dz = du * (1.0 - u**2)
                grads[f"blk{b}.{s}.b1"] += dz.sum(axis=(0, 1))
                grads[f"blk{b}.{s}.w1"] += np.einsum("nth,ntd->hd", dz, y)
                dy = dz @ params[f"blk{b}.{s}.w1"]
                hn2, inv_std2 = bc[f"ln2_{s}"]
                sc2 = mods[s][3]
                dmod[s][3] = (dy * hn2).sum(axis=1)
                dmod[s][4] = dy.sum(axis=1)
                dn2 = dy * (1.0 + sc2[:, None, :])
                dh1[s] = dh2 + _ln_backward(dn2, hn2, inv_std2)

            # attention sub-layer
            do_parts = {}
            for s in self.STREAMS:
                att_out = bc[f"att_out_{s}"]
                g1 = mods[s][2]
                dmod[s][2] = (dh1[s] * att_out).sum(axis=1)
                datt_out = dh1[s] * g1[:, None, :]
                o_s = bc["o"][:, : a.n_text] if s == "txt" else bc["o"][:, a.n_text :]
                grads[f"blk{b}.{s}.wo"] += np.einsum("ntd,nte->de", datt_out, o_s)
                do_parts[s] = datt_out @ params[f"blk{b}.{s}.wo"]
            do = np.concatenate([do_parts["txt"], do_parts["img"]], axis=1)

            attn, q, k, v = bc["attn"], bc["q"], bc["k"], bc["v"]
            dattn = np.einsum("nld,nmd->nlm", do, v)
            dv = np.einsum("nlm,nld->nmd", attn, do)
            ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
            scale = 1.0 / np.sqrt(a.d_model)
            dq = np.einsum("nlm,nmd->nld", ds, k) * scale
            dk = np.einsum("nlm,nld->nmd", ds, q) * scale

            for s, sl in (("txt", slice(0, a.n_text)), ("img", slice(a.n_text, None))):
                xm = bc["xmod"][s]
                grads[f"blk{b}.{s}.wq"] += np.einsum("ntd,nte->de", dq[:, sl], xm)
                grads[f"blk{b}.{s}.wk"] += np.einsum("ntd,nte->de", dk[:, sl], xm)
                grads[f"blk{b}.{s}.wv"] += np.einsum("ntd,nte->de", dv[:, sl], xm)
                dxm = (
                    dq[:, sl] @ params[f"blk{b}.{s}.wq"]
                    + dk[:, sl] @ params[f"blk{b}.{s}.wk"]
                    + dv[:, sl] @ params[f"blk{b}.{s}.wv"]
                )
                hn, inv_std = bc[f"ln1_{s}"]
                sc1 = mods[s][0]
                dmod[s][0] = (dxm * hn).sum(axis=1)
                dmod[s][1] = dxm.sum(axis=1)
                dn1 = dxm * (1.0 + sc1[:, None, :])
                dh[s] = dh1[s] + _ln_backward(dn1, hn, inv_std)

            c_act = cache["c_act"]
            for s in self.STREAMS:
                dm = np.concatenate(dmod[s], axis=-1)  # (n, 6D)
                grads[f"blk{b}.{s}.adaln_w"] += dm.T @ c_act
                grads[f"blk{b}.{s}.adaln_b"] += dm.sum(axis=0)
                dc_act += dm @ params[f"blk{b}.{s}.adaln_w"]

        # embeddings and data-token input projection
        np.add.at(grads["embed"], cache["tokens"], dh["txt"])
        patches = cache["patches"]
        grads["w_in"] += np.einsum("ntd,ntp->dp", dh["img"], patches)
        grads["b_in"] += dh["img"].sum(axis=(0, 1))
        grads["pos_img"] += dh["img"].sum(axis=0)

        # timestep-embedding MLP
        c_act = cache["c_act"]
        dc = dc_act * (1.0 - c_act**2)
        grads["b_t2"] += dc.sum(axis=0)
        grads["w_t2"] += dc.T @ cache["t_hid"]
        dt_hid = dc @ params["w_t2"]
        dt_pre = dt_hid * (1.0 - cache["t_hid"] ** 2)
        grads["b_t1"] += dt_pre.sum(axis=0)
        grads["w_t1"] += dt_pre.T @ cache["temb"]
        return grads


class MiniDiTVelocityField(VelocityField):
    """Adapter exposing a parameterized MiniDiT as a conditional velocity field."""

    supports_conditioning = True
    supports_null_condition = True

    def __init__(self, model: MiniDiT, params: dict[str, np.ndarray]):
        self.model = model
        self.params = params

    def velocity(self, x, sigma, cond=None):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        if cond is None:
            tokens = np.full((x2.shape[0], self.model.arch.n_text), NULL_TOKEN, dtype=np.int64)
        else:
            tokens = np.asarray(cond, dtype=np.int64).reshape(1, -1)
        v, _ = self.model.forward(self.params, x2, tokens, sigma)
        return v[0] if squeeze else v
