"""HTTP decision endpoint.

POST /decide with ``{"stratum": "M", "x1": 12.8, "x2": 13.2, "cutoff": 13}``
returns the full decision report including the density grid; GET /model
returns the loaded fit's summary. The loaded model is immutable, every
request is stateless, and responses carry permissive CORS headers so the
browser client can run from any static host.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .bayes_engine.sampler import PosteriorDraws, posterior_summary
from .decision import eligibility_probability
from .errors import DomainError, RetestKitError
from .io import load_fit_file

DEFAULT_PORT = 8433


@dataclass
class LoadedModel:
    fit: object                     # PosteriorDraws or (ModelSpec, theta)
    cutoffs: dict[str, float]
    n_draws: int = 500

    @property
    def strata(self) -> list[str]:
        if isinstance(self.fit, PosteriorDraws):
            return list(self.fit.model.strata)
        return list(self.fit[1])

    def summary(self) -> dict:
        if isinstance(self.fit, PosteriorDraws):
            out = posterior_summary(self.fit)
            out["kind"] = "posterior-draws"
        else:
            model, theta = self.fit
            out = {"kind": "point-params", "model_id": model.model_id,
                   "parameters": theta, "converged": True}
        out["strata"] = self.strata
        out["cutoffs"] = self.cutoffs
        return out

    def decide(self, stratum: str, x1: float, x2: float | None,
               cutoff: float | None) -> dict:
        if cutoff is None:
            cutoff = self.cutoffs.get(stratum)
            if cutoff is None:
                raise DomainError(f"no default cutoff for stratum {stratum!r}")
        report = eligibility_probability(x1, x2, cutoff, self.fit, stratum,
                                         n_draws=self.n_draws)
        return report.as_dict(include_grid=True)


def _validate_decide_body(doc: dict) -> tuple[dict, dict]:
    """Returns (parsed fields, field errors)."""
    errors: dict[str, str] = {}
    if not isinstance(doc, dict):
        return {}, {"body": "must be a JSON object"}
    stratum = doc.get("stratum")
    if not isinstance(stratum, str) or not stratum:
        errors["stratum"] = "required string"
    x1 = doc.get("x1")
    if not isinstance(x1, (int, float)) or isinstance(x1, bool) or not np.isfinite(x1):
        errors["x1"] = "required finite number"
    x2 = doc.get("x2")
    if x2 is not None and (not isinstance(x2, (int, float))
                           or isinstance(x2, bool) or not np.isfinite(x2)):
        errors["x2"] = "must be a finite number when present"
    cutoff = doc.get("cutoff")
    if cutoff is not None and (not isinstance(cutoff, (int, float))
                               or isinstance(cutoff, bool)
                               or not np.isfinite(cutoff) or cutoff <= 0):
        errors["cutoff"] = "must be a positive number when present"
    unknown = set(doc) - {"stratum", "x1", "x2", "cutoff"}
    if unknown:
        errors["unknown"] = f"unexpected fields: {sorted(unknown)}"
    return {"stratum": stratum, "x1": x1, "x2": x2, "cutoff": cutoff}, errors


def make_handler(loaded: LoadedModel):
    class Handler(BaseHTTPRequestHandler):
        server_version = "retestkit"

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def do_OPTIONS(self):
            self._send(204, {})

        def do_GET(self):
            if self.path.rstrip("/") == "/model":
                self._send(200, loaded.summary())
            else:
                self._send(404, {"error": "unknown route"})

        def do_POST(self):
            if self.path.rstrip("/") != "/decide":
                self._send(404, {"error": "unknown route"})
                return
            try:
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                doc = json.loads(raw.decode() or "null")
            except (ValueError, UnicodeDecodeError):
                self._send(400, {"error": "malformed JSON body"})
                return
            fields, errors = _validate_decide_body(doc)
            if errors:
                self._send(400, {"error": "invalid request", "fields": errors})
                return
            if fields["stratum"] not in loaded.strata:
                self._send(422, {"error": f"stratum {fields['stratum']!r} not in fit",
                                 "strata": loaded.strata})
                return
            try:
                report = loaded.decide(fields["stratum"], float(fields["x1"]),
                                       None if fields["x2"] is None else float(fields["x2"]),
                                       None if fields["cutoff"] is None else float(fields["cutoff"]))
            except RetestKitError as exc:
                self._send(422, {"error": str(exc)})
                return
            self._send(200, report)

    return Handler


def load_model(params_path: str, n_draws: int = 500) -> LoadedModel:
    fit, cutoffs = load_fit_file(params_path)
    return LoadedModel(fit=fit, cutoffs=cutoffs, n_draws=n_draws)


def make_server(loaded: LoadedModel, port: int = DEFAULT_PORT,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(loaded))


def serve(params_path: str, port: int = DEFAULT_PORT, host: str = "127.0.0.1",
          n_draws: int = 500) -> None:
    loaded = load_model(params_path, n_draws=n_draws)
    httpd = make_server(loaded, port=port, host=host)
    print(f"retestkit decision endpoint on http://{host}:{port} "
          f"(strata: {', '.join(loaded.strata)})")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
