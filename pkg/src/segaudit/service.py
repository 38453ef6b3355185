"""HTTP review service: candidate queue, crops, verdicts, running stats."""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .detect import Candidate, load_candidates

DECISIONS = ("confirmed", "rejected", "unsure")


class BundleError(ValueError):
    """Review bundle missing or malformed."""


class ReviewState:
    """Candidate queue plus the append-only verdict store.

    Verdicts append to a JSONL file and fold into a latest-wins map keyed
    by (reviewer, image, component_id); replaying the file reproduces the
    map, so stats survive restarts. All mutation goes through one lock.
    """

    def __init__(self, bundle_dir, verdicts_path=None):
        self.bundle_dir = Path(bundle_dir)
        candidates_path = self.bundle_dir / "candidates.jsonl"
        if not candidates_path.is_file():
            raise BundleError(f"no candidates.jsonl in {self.bundle_dir}")
        self.candidates: list[Candidate] = load_candidates(candidates_path)
        self.by_key: dict[tuple[str, int], Candidate] = {
            (c.image, c.component.id): c for c in self.candidates}
        bundle_meta = self.bundle_dir / "bundle.json"
        self.classes: dict[str, int] = {}
        if bundle_meta.is_file():
            self.classes = json.loads(bundle_meta.read_text()).get("classes", {})
        self._class_names = {v: k for k, v in self.classes.items()}
        self.verdicts_path = Path(verdicts_path) if verdicts_path is not None \
            else self.bundle_dir / "verdicts.jsonl"
        self.lock = threading.Lock()
        self.latest: dict[tuple[str, str, int], dict] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.verdicts_path.is_file():
            return
        with open(self.verdicts_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._fold(json.loads(line))

    def _fold(self, event: dict) -> None:
        key = (event["reviewer"], event["image"], event["component_id"])
        self.latest[key] = event

    def class_name(self, class_id: int) -> str:
        return self._class_names.get(class_id, str(class_id))

    def record_verdict(self, image: str, component_id: int, decision: str,
                       reviewer: str) -> dict:
        event = {"image": image, "component_id": component_id,
                 "decision": decision, "reviewer": reviewer,
                 "timestamp": time.time()}
        with self.lock:
            with open(self.verdicts_path, "a") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
            self._fold(event)
        return event

    def verdict_for(self, image: str, component_id: int) -> "dict | None":
        """Latest decision on a candidate regardless of reviewer."""
        best = None
        for event in self.latest.values():
            if event["image"] == image and event["component_id"] == component_id:
                if best is None or event["timestamp"] >= best["timestamp"]:
                    best = event
        return best

    def stats(self) -> dict:
        with self.lock:
            counts = {d: 0 for d in DECISIONS}
            for event in self.latest.values():
                counts[event["decision"]] += 1
        reviewed = sum(counts.values())
        precision = counts["confirmed"] / reviewed if reviewed else None
        hard = counts["confirmed"] + counts["rejected"]
        return {
            "confirmed": counts["confirmed"],
            "rejected": counts["rejected"],
            "unsure": counts["unsure"],
            "reviewed": reviewed,
            "total": len(self.candidates),
            "precision": precision,
            "precision_excl_unsure": counts["confirmed"] / hard if hard else None,
        }

    def export(self) -> dict:
        events = []
        if self.verdicts_path.is_file():
            with open(self.verdicts_path) as fh:
                events = [json.loads(line) for line in fh if line.strip()]
        return {"verdicts": events, "stats": self.stats()}


def candidate_payload(state: ReviewState) -> list[dict]:
    out = []
    for rank, c in enumerate(state.candidates, start=1):
        verdict = state.verdict_for(c.image, c.component.id)
        out.append({
            "rank": rank,
            "image": c.image,
            "component_id": c.component.id,
            "class_id": c.class_id,
            "class_name": state.class_name(c.class_id),
            "size": c.size,
            "score": c.score,
            "bbox": list(c.component.bbox),
            "crop_url": f"/api/crop/{c.image}/{c.component.id}",
            "verdict": verdict["decision"] if verdict else None,
        })
    return out


def create_app(bundle_dir, verdicts_path=None, default_reviewer: str = "anonymous",
               static_dir=None) -> FastAPI:
    state = ReviewState(bundle_dir, verdicts_path)
    app = FastAPI(title="segaudit review", docs_url=None, redoc_url=None)
    app.state.review = state
    crop_cache: dict[tuple[str, int], bytes] = {}

    @app.get("/api/candidates")
    def get_candidates():
        return candidate_payload(state)

    @app.get("/api/crop/{image}/{component_id}")
    def get_crop(image: str, component_id: int):
        key = (image, component_id)
        if key not in state.by_key:
            return JSONResponse({"error": "unknown candidate"}, status_code=404)
        if key not in crop_cache:
            path = state.bundle_dir / "crops" / f"{image}_{component_id}.png"
            if not path.is_file():
                return JSONResponse({"error": "crop not rendered"}, status_code=404)
            crop_cache[key] = path.read_bytes()
        return Response(content=crop_cache[key], media_type="image/png")

    @app.post("/api/verdict")
    async def post_verdict(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body is not JSON"}, status_code=409)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be an object"}, status_code=409)
        image = body.get("image")
        component_id = body.get("component_id")
        decision = body.get("decision")
        reviewer = body.get("reviewer", default_reviewer)
        if not isinstance(image, str) or not isinstance(component_id, int) \
                or isinstance(component_id, bool):
            return JSONResponse({"error": "candidate ref must be image (str) "
                                          "and component_id (int)"},
                                status_code=409)
        if decision not in DECISIONS:
            return JSONResponse(
                {"error": f"decision must be one of {list(DECISIONS)}"},
                status_code=409)
        if not isinstance(reviewer, str) or not reviewer:
            return JSONResponse({"error": "reviewer must be a non-empty string"},
                                status_code=409)
        if (image, component_id) not in state.by_key:
            return JSONResponse({"error": "unknown candidate"}, status_code=404)
        event = state.record_verdict(image, component_id, decision, reviewer)
        return {"ok": True, "verdict": event, "stats": state.stats()}

    @app.get("/api/stats")
    def get_stats():
        return state.stats()

    @app.get("/api/export")
    def get_export():
        return state.export()

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return {"service": "segaudit review",
                    "endpoints": ["/api/candidates", "/api/crop/{image}/{id}",
                                  "/api/verdict", "/api/stats", "/api/export"]}

    return app


def serve_review(bundle_dir, port: int = 8000, host: str = "127.0.0.1",
                 verdicts_path=None, default_reviewer: str = "anonymous",
                 static_dir=None) -> None:
    """Run the review service until interrupted; binds localhost by default."""
    import uvicorn

    app = create_app(bundle_dir, verdicts_path, default_reviewer, static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
