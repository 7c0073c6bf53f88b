"""Serve a Hugging Face causal LM over the tsprobe HTTP adapter protocol.

Text-only: bundles that carry images are refused by the adapter before they
reach this server, since /info reports supports_images = false.

    python scripts/hf_model_server.py --model Qwen/Qwen2.5-1.5B-Instruct --port 8088

Then point a model entry at it:

    [[models]]
    name = "qwen2.5-1.5b"
    backend = "http"
    endpoint = "http://127.0.0.1:8088"
"""

import argparse
import json
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from threading import Lock

import torch
from transformers import AutoConfig, AutoModelForCausalLM, AutoTokenizer

ANSWER = re.compile(r"The answer is \[[A-Z]\]")


class Backend:
    def __init__(self, name, device, dtype, max_context):
        self.name = name
        self.device = device
        self.dtype = getattr(torch, dtype)
        self.max_context = max_context
        self.tok = AutoTokenizer.from_pretrained(name)
        self.model = self._load(None)
        self.controls = {}
        self.lock = Lock()
        cfg = self.model.config
        self.spec = {
            "name": name,
            "num_layers": cfg.num_hidden_layers,
            "hidden_dim": cfg.hidden_size,
            "supports_images": False,
        }
        self.version = f"{name}@{getattr(cfg, '_commit_hash', None) or 'local'}"

    def _load(self, seed):
        if seed is None:
            m = AutoModelForCausalLM.from_pretrained(self.name, torch_dtype=self.dtype)
        else:
            torch.manual_seed(seed)
            m = AutoModelForCausalLM.from_config(AutoConfig.from_pretrained(self.name), torch_dtype=self.dtype)
        return m.to(self.device).eval()

    def model_for(self, seed):
        if seed is None:
            return self.model
        if seed not in self.controls:
            self.controls[seed] = self._load(seed)
        return self.controls[seed]

    def encode(self, bundle):
        msgs = [{"role": "system", "content": bundle["system_text"]}]
        for ex in bundle["examples"]:
            msgs.append({"role": "user", "content": ex["user_text"]})
            msgs.append({"role": "assistant", "content": ex["answer_text"]})
        msgs.append({"role": "user", "content": bundle["user_text"]})
        ids = self.tok.apply_chat_template(msgs, add_generation_prompt=True, return_tensors="pt")
        if ids.shape[1] > self.max_context:
            raise OverflowError(ids.shape[1])
        return ids.to(self.device)

    def generate(self, bundle, params, seed):
        ids = self.encode(bundle)
        model = self.model_for(seed)
        torch.manual_seed(params["seed"])
        sample = params["temperature"] > 0
        kw = {"do_sample": sample, "max_new_tokens": params["max_new_tokens"], "pad_token_id": self.tok.eos_token_id}
        if sample:
            kw.update(temperature=params["temperature"], top_p=params["top_p"], num_return_sequences=params["num_samples"])
        with torch.no_grad():
            out = model.generate(ids, attention_mask=torch.ones_like(ids), **kw)
        return [self.tok.decode(o[ids.shape[1]:], skip_special_tokens=True) for o in out]

    def hidden_states(self, bundle, style, seed):
        ids = self.encode(bundle)
        model = self.model_for(seed)
        if style == "post_cot_last_token":
            text = self.generate(bundle, {"seed": 0, "temperature": 0.0, "max_new_tokens": 512}, seed)[0]
            m = ANSWER.search(text)
            reasoning = text[: m.start()] if m else text
            extra = self.tok(reasoning, add_special_tokens=False, return_tensors="pt").input_ids.to(self.device)
            if extra.shape[1] > 0:
                ids = torch.cat([ids, extra], dim=1)
        with torch.no_grad():
            out = model(ids, output_hidden_states=True)
        rows = [h[0, -1].float().cpu() for h in out.hidden_states]
        matrix = torch.stack(rows)
        return {"rows": matrix.shape[0], "cols": matrix.shape[1], "matrix": matrix.flatten().tolist()}


def handler(backend):
    class Handler(BaseHTTPRequestHandler):
        def reply(self, status, body):
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path.rstrip("/") == "/info":
                self.reply(200, {"spec": backend.spec, "version": backend.version, "max_context_tokens": backend.max_context})
            else:
                self.reply(404, {"error": self.path})

        def do_POST(self):
            req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            route = self.path.rstrip("/")
            try:
                with backend.lock:
                    if route == "/generate":
                        body = {"texts": backend.generate(req["bundle"], req["params"], req.get("control_seed"))}
                    elif route == "/hidden_states":
                        body = backend.hidden_states(req["bundle"], req["style"], req.get("control_seed"))
                    else:
                        return self.reply(404, {"error": route})
                self.reply(200, body)
            except OverflowError as e:
                self.reply(413, {"tokens": e.args[0], "limit": backend.max_context})
            except Exception as e:  # surfaced to the harness as a failed cell
                self.reply(500, {"error": repr(e)})

    return Handler


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", required=True)
    ap.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    ap.add_argument("--dtype", default="bfloat16")
    ap.add_argument("--max-context", type=int, default=32768)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8088)
    args = ap.parse_args()
    backend = Backend(args.model, args.device, args.dtype, args.max_context)
    ThreadingHTTPServer((args.host, args.port), handler(backend)).serve_forever()


if __name__ == "__main__":
    main()
