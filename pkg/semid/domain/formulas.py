"""
Dominant-FLOPs cost model of the tokenization pipeline.

These functions evaluate big-O cost expressions with unit constants: only
the leading multiply-accumulate terms are counted, masking, normalisation
and loss computation are ignored. One estimate per stage:

* FAMAE representation learning (one encoder forward over a window),
* GAOQ quantization (clustering, centering, anchors, matching),
* the downstream T5 generator (reported for comparison only).

All functions are pure and accumulate in Python integers, so large
configurations never overflow.
"""

from math import prod
from typing import Dict, Sequence

from semid.domain.models import FlopShapes


def _positive(**dims: int) -> None:
    for name, value in dims.items():
        if int(value) < 1:
            raise ValueError(f"{name} must be a positive integer, got {value}")


def famae_flops(t_e: int, num_fields: int, d_e: int, l_e: int) -> int:
    """FLOPs of one FAMAE encoder pass.

    Parameters
    ----------
    t_e: int
        Window length (history plus target).
    num_fields: int
        Number of structured fields J summed into each input token.
    d_e: int
        Hidden size.
    l_e: int
        Number of Transformer layers.

    Returns
    -------
    int
        ``T_e*J*d_e + L_e*(T_e^2*d_e + T_e*d_e^2)``: input sum pooling plus
        attention scores and projections/FFN per layer.
    """
    _positive(t_e=t_e, num_fields=num_fields, d_e=d_e, l_e=l_e)
    t_e, j, d, layers = int(t_e), int(num_fields), int(d_e), int(l_e)
    return t_e * j * d + layers * (t_e * t_e * d + t_e * d * d)


def gaoq_flops(
    num_items: int,
    d_q: int,
    branching: Sequence[int],
    iters: Sequence[int],
    anchors: Sequence[int],
) -> int:
    """FLOPs of GAOQ over ``len(branching)`` levels.

    Level 1 only clusters: ``I_1*N*b_1*d_q``. Every level l >= 2 adds
    centering ``P_{l-1}*b_l*d_q``, anchor QR ``d_q*g_l^2`` and matching
    ``P_{l-1}*(b_l*g_l*d_q + b_l^3)``, where ``P_{l-1}`` is the number of
    parent nodes (product of the earlier branching factors).
    """
    levels = len(branching)
    if levels < 1:
        raise ValueError("at least one level is required")
    if len(iters) != levels or len(anchors) != levels:
        raise ValueError("iters and anchors need one entry per level")
    _positive(num_items=num_items, d_q=d_q)
    for b, i, g in zip(branching, iters, anchors):
        _positive(branching=b, iters=i, anchors=g)
    n, d = int(num_items), int(d_q)
    total = sum(int(i) * n * int(b) * d for i, b in zip(iters, branching))
    for l in range(1, levels):
        parents = prod(int(b) for b in branching[:l])
        b, g = int(branching[l]), int(anchors[l])
        total += parents * b * d + d * g * g + parents * (b * g * d + b ** 3)
    return total


def t5_flops(t_enc: int, t_dec: int, d_g: int, l_enc: int, l_dec: int) -> int:
    """FLOPs of an encoder-decoder generator over SID sequences.

    Encoder: ``L_enc*(T_enc^2*d + T_enc*d^2)``. Decoder: causal
    self-attention, cross-attention and FFN,
    ``L_dec*(T_dec^2*d + T_dec*T_enc*d + (T_dec + T_enc)*d^2)``.
    """
    _positive(t_enc=t_enc, t_dec=t_dec, d_g=d_g, l_enc=l_enc, l_dec=l_dec)
    te, td, d = int(t_enc), int(t_dec), int(d_g)
    enc = int(l_enc) * (te * te * d + te * d * d)
    dec = int(l_dec) * (td * td * d + td * te * d + (td + te) * d * d)
    return enc + dec


def estimate_flops(shapes: FlopShapes) -> Dict[str, int]:
    """Dominant FLOPs per stage and their sum."""
    famae = famae_flops(shapes.t_e, shapes.num_fields, shapes.d_e, shapes.l_e)
    gaoq = gaoq_flops(shapes.num_items, shapes.d_q, shapes.branching, shapes.iters, shapes.anchors)
    t5 = t5_flops(shapes.t_enc, shapes.t_dec, shapes.d_g, shapes.l_enc, shapes.l_dec)
    return {"famae": famae, "gaoq": gaoq, "t5": t5, "total": famae + gaoq + t5}
