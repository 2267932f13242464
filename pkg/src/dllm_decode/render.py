"""Offline visualization of trace logs.

Two views, as terminal text (ANSI colors) or a static HTML page:

* decode-order view: the draft after fill-up (or a full vanilla run) with
  each generated token colored by the step that produced it, on a cold-to-
  warm gradient, so the unmasking order is visible at a glance;
* refinement diff view: one line per refinement iteration showing deleted
  tokens (the values destroyed by remasking) struck through in red and
  added tokens in green; resampling that reproduced the old value shows
  as unchanged.
"""

from __future__ import annotations

import html

import numpy as np

from .core import StepTrace, Vocabulary, init_state

RESET = "\x1b[0m"

# Cold-to-warm ANSI 256-color ramp (blue -> cyan -> green -> yellow -> red).
_RAMP = (27, 33, 39, 45, 51, 49, 46, 82, 118, 154, 190, 226, 220, 214, 208, 202, 196)


def _ramp_color(fraction: float) -> int:
    idx = int(round(fraction * (len(_RAMP) - 1)))
    return _RAMP[max(0, min(idx, len(_RAMP) - 1))]


def _ramp_rgb(fraction: float) -> str:
    # Blue (early) to red (late) for the HTML view.
    r = int(round(255 * fraction))
    b = int(round(255 * (1.0 - fraction)))
    return f"rgb({r},80,{b})"


def _token_str(tok: int, symbols=None) -> str:
    if symbols is not None and 0 <= tok < len(symbols):
        return str(symbols[tok])
    return str(tok)


def _split_phases(traces):
    """(fill-or-vanilla records, refinement record pairs)."""
    fill = [t for t in traces if t.kind in ("fillup", "vanilla", "baseline")]
    refine = [t for t in traces if t.kind == "refine"]
    pairs = []
    for i in range(0, len(refine) - 1, 2):
        pairs.append((refine[i], refine[i + 1]))
    return fill, pairs


def _replay_states(prompt, gen_len, vocab, traces):
    """Token buffer snapshots before each record and at the end."""
    state = init_state(prompt, gen_len, vocab)
    tokens = state.tokens.copy()
    snapshots = [tokens.copy()]
    for rec in traces:
        for pos in rec.remasked:
            tokens[pos] = vocab.mask_id
        for pos, tok in rec.decoded:
            tokens[pos] = tok
        snapshots.append(tokens.copy())
    return snapshots


def _decode_step_of(traces, length):
    """For each position, the index of the last non-refine record that decoded it."""
    step_of = np.full(length, -1)
    order = 0
    for rec in traces:
        if rec.kind == "refine":
            continue
        for pos, _tok in rec.decoded:
            step_of[pos] = order
        order += 1
    return step_of, max(order, 1)


def render_text(header, traces, symbols=None) -> str:
    """ANSI rendering of a trace log (header as produced by write_trace)."""
    vocab = _vocab_of(header)
    prompt, gen_len = header["prompt"], header["gen_len"]
    snapshots = _replay_states(prompt, gen_len, vocab, traces)
    fill, pairs = _split_phases(traces)
    n_fill_records = len(fill)
    draft = snapshots[n_fill_records]
    step_of, n_steps = _decode_step_of(traces, len(draft))

    lines = ["decode order (cold = early step, warm = late step):"]
    parts = []
    for pos, tok in enumerate(draft):
        text = _token_str(int(tok), symbols)
        if step_of[pos] < 0:
            parts.append(text)  # prompt token
        else:
            color = _ramp_color(step_of[pos] / max(n_steps - 1, 1))
            parts.append(f"\x1b[38;5;{color}m{text}{RESET}")
    lines.append(" ".join(parts))

    if pairs:
        lines.append("")
        lines.append("refinement edits (red = deleted, green = added):")
    before = draft
    for i, (mask_rec, fill_rec) in enumerate(pairs):
        after = snapshots[n_fill_records + 2 * (i + 1)]
        parts = []
        for pos in range(len(after)):
            old, new = int(before[pos]), int(after[pos])
            if old == new:
                parts.append(_token_str(new, symbols))
            else:
                parts.append(
                    f"\x1b[31;9m{_token_str(old, symbols)}{RESET}"
                    f"\x1b[32m{_token_str(new, symbols)}{RESET}"
                )
        edits = int(np.sum(before != after))
        gamma = f" gamma={mask_rec.gamma:.4f}" if mask_rec.gamma is not None else ""
        lines.append(f"iter {i + 1:3d}{gamma} edits={edits:3d}: " + " ".join(parts))
        before = after
    return "\n".join(lines) + "\n"


def render_html(header, traces, symbols=None) -> str:
    vocab = _vocab_of(header)
    prompt, gen_len = header["prompt"], header["gen_len"]
    snapshots = _replay_states(prompt, gen_len, vocab, traces)
    fill, pairs = _split_phases(traces)
    n_fill_records = len(fill)
    draft = snapshots[n_fill_records]
    step_of, n_steps = _decode_step_of(traces, len(draft))

    def tok_html(tok, style=""):
        return f'<span class="tok" style="{style}">{html.escape(_token_str(int(tok), symbols))}</span>'

    out = [
        "<!doctype html><html><head><meta charset='utf-8'><style>",
        ".tok{display:inline-block;margin:1px;padding:1px 4px;border-radius:3px;"
        "font-family:monospace;}",
        ".del{border:1px dashed #c00;color:#c00;text-decoration:line-through;}",
        ".add{border:1px solid #080;color:#080;}",
        "</style></head><body>",
        "<h3>Decode order (blue = early, red = late)</h3><div>",
    ]
    for pos, tok in enumerate(draft):
        if step_of[pos] < 0:
            out.append(tok_html(tok, "background:#eee;"))
        else:
            out.append(tok_html(tok, f"color:{_ramp_rgb(step_of[pos] / max(n_steps - 1, 1))};"))
    out.append("</div>")

    if pairs:
        out.append("<h3>Refinement iterations</h3>")
    before = draft
    for i, (mask_rec, _fill_rec) in enumerate(pairs):
        after = snapshots[n_fill_records + 2 * (i + 1)]
        gamma = f" (gamma={mask_rec.gamma:.4f})" if mask_rec.gamma is not None else ""
        out.append(f"<h4>iteration {i + 1}{gamma}</h4><div>")
        for pos in range(len(after)):
            old, new = int(before[pos]), int(after[pos])
            if old == new:
                out.append(tok_html(new))
            else:
                out.append(
                    f'<span class="tok del">{html.escape(_token_str(old, symbols))}</span>'
                    f'<span class="tok add">{html.escape(_token_str(new, symbols))}</span>'
                )
        out.append("</div>")
        before = after
    out.append("</body></html>")
    return "".join(out)


def _vocab_of(header) -> Vocabulary:
    v = header["vocab"]
    return Vocabulary(
        size=int(v["size"]),
        mask_id=int(v["mask_id"]),
        eot_id=int(v["eot_id"]),
        pad_id=None if v.get("pad_id") is None else int(v["pad_id"]),
    )
