"""Reference GPT-2 Small logits for the forward-pass parity check.

Usage: gpt2_parity.py VOCAB_DIR OUT_DIR [WEIGHTS]

With WEIGHTS (a GPT-2 Small safetensors file) the released model is used.
Without it a seeded random GPT-2 Small is built, perturbed so that biases and
layer-norm gains matter, and saved to OUT_DIR/weights.safetensors.

Writes OUT_DIR/cases.json (prompt, token ids, shape) and one float32
little-endian logits file per prompt. Exit code 3 means the reference stack
(torch, transformers, safetensors) is not importable.
"""
import json
import pathlib
import sys

try:
    import torch
    from safetensors.torch import load_file, save_file
    from transformers import GPT2Config, GPT2LMHeadModel, GPT2TokenizerFast
except ImportError as e:
    print(f"reference stack unavailable: {e}", file=sys.stderr)
    sys.exit(3)

PROMPTS = [
    "The quick brown fox jumps over the lazy dog.",
    " = Valkyria Chronicles III = \n\n Senjō no Valkyria 3 : Unrecorded Chronicles",
    "In 1998, the city council voted 7-2 to rebuild the old river bridge.",
    "def add(a, b):\n    return a + b\n",
    "Ünïcödé « naïve » café, 東京, and emoji 🙂 all tokenize to bytes.",
]

vocab_dir = pathlib.Path(sys.argv[1])
out = pathlib.Path(sys.argv[2])
weights = pathlib.Path(sys.argv[3]) if len(sys.argv) > 3 else None
out.mkdir(parents=True, exist_ok=True)

torch.set_num_threads(1)
cfg = GPT2Config(activation_function="gelu_new", resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
model = GPT2LMHeadModel(cfg).eval()
if weights is not None:
    state = load_file(str(weights))
    state = {k.removeprefix("transformer."): v for k, v in state.items()}
    missing, unexpected = model.transformer.load_state_dict(state, strict=False)
    missing = [k for k in missing if not k.endswith(".attn.bias") and not k.endswith("masked_bias")]
    if missing:
        print(f"weights file lacks {missing[:5]}", file=sys.stderr)
        sys.exit(1)
    model.tie_weights()
else:
    torch.manual_seed(2123)
    with torch.no_grad():
        for name, p in model.transformer.named_parameters():
            if name.endswith("bias"):
                p.normal_(0.0, 0.05)
            elif "ln" in name:
                p.normal_(1.0, 0.1)
    state = {k: v.contiguous() for k, v in model.transformer.state_dict().items()
             if not k.endswith(".attn.bias") and not k.endswith("masked_bias")}
    save_file(state, str(out / "weights.safetensors"), metadata={"format": "pt"})

tok = GPT2TokenizerFast(str(vocab_dir / "vocab.json"), str(vocab_dir / "merges.txt"))
cases = []
for i, text in enumerate(PROMPTS):
    ids = tok.encode(text)
    with torch.no_grad():
        logits = model(torch.tensor([ids])).logits[0].float().contiguous()
    (out / f"logits{i}.f32").write_bytes(logits.numpy().astype("<f4").tobytes())
    cases.append({"text": text, "tokens": ids, "rows": logits.shape[0], "cols": logits.shape[1]})

(out / "cases.json").write_text(json.dumps({"released": weights is not None, "cases": cases}))
print("ok")
