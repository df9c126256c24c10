#!/usr/bin/env python3
"""Exports GPT-2 small to the files vsalens reads.

    python3 tools/export_gpt2.py --out DIR [--model gpt2]

Writes DIR/gpt2.safetensors (float32, reference tensor names, n_head and
n_layer metadata) and DIR/vocab.json (byte-level BPE token -> id). Needs the
`transformers`, `torch` and `safetensors` packages; the weights come from the
Hugging Face hub (or a local snapshot passed as --model).
"""
import argparse
import json
import os

import torch
from safetensors.torch import save_file
from transformers import GPT2LMHeadModel, GPT2TokenizerFast


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--model", default="gpt2", help="hub id or local directory (default: gpt2)")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    model = GPT2LMHeadModel.from_pretrained(args.model, torch_dtype=torch.float32).eval()
    cfg = model.config
    # attn.bias / attn.masked_bias are causal-mask buffers, not weights.
    state = {k: v.detach().float().contiguous().clone()
             for k, v in model.transformer.state_dict().items()
             if not k.endswith(".attn.bias") and not k.endswith(".attn.masked_bias")}
    meta = {"format": "pt", "n_head": str(cfg.n_head), "n_layer": str(cfg.n_layer), "source": args.model}
    ckpt = os.path.join(args.out, "gpt2.safetensors")
    save_file(state, ckpt, metadata=meta)

    tok = GPT2TokenizerFast.from_pretrained(args.model)
    vocab = tok.get_vocab()
    with open(os.path.join(args.out, "vocab.json"), "w", encoding="utf-8") as f:
        json.dump(vocab, f, ensure_ascii=False)

    print(f"wrote {ckpt} ({len(state)} tensors) and vocab.json ({len(vocab)} tokens)")
    print(f"export VSALENS_CHECKPOINT={ckpt}")
    print(f"export VSALENS_VOCAB={os.path.join(args.out, 'vocab.json')}")


if __name__ == "__main__":
    main()
