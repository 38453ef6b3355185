// DOM glue: one render() pass over the Session after every mutation.
// All review logic lives in state.ts; this file only draws and forwards
// input events.

import { ReviewApi } from "./api.js";
import { Session } from "./state.js";
import type { Decision } from "./types.js";

const KEY_DECISIONS: Record<string, Decision> = {
  y: "confirmed",
  n: "rejected",
  u: "unsure",
};

const BADGE: Record<Decision, string> = {
  confirmed: "Y",
  rejected: "N",
  unsure: "?",
};

const RETRY_INTERVAL_MS = 5000;

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

function pct(value: number | null): string {
  return value === null ? "–" : `${(value * 100).toFixed(1)}%`;
}

function el<K extends keyof HTMLElementTagNameMap>(id: string): HTMLElementTagNameMap[K] {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as HTMLElementTagNameMap[K];
}

function renderStats(session: Session): void {
  const s = session.stats;
  el<"div">("stats").innerHTML = `
    <span class="stat ok">✓ ${s.confirmed}</span>
    <span class="stat bad">✗ ${s.rejected}</span>
    <span class="stat dim">? ${s.unsure}</span>
    <span class="stat">precision ${pct(s.precision)}</span>
    <span class="stat dim">excl. unsure ${pct(s.precision_excl_unsure)}</span>
    <span class="stat">${s.reviewed} / ${s.total} reviewed</span>`;
}

function renderBanner(session: Session): void {
  const box = el<"div">("banner");
  if (session.banner === null) {
    box.hidden = true;
    return;
  }
  box.hidden = false;
  box.className = `banner ${session.banner.kind}`;
  box.textContent = session.banner.text;
}

function renderChips(session: Session, onChange: () => void): void {
  const box = el<"div">("chips");
  box.replaceChildren();
  const mkChip = (label: string, active: boolean, apply: () => void) => {
    const chip = document.createElement("button");
    chip.className = active ? "chip active" : "chip";
    chip.textContent = label;
    chip.addEventListener("click", () => {
      apply();
      onChange();
    });
    box.appendChild(chip);
  };
  mkChip("all", session.filter === null, () => session.setFilter(null));
  for (const g of session.classGroups()) {
    const active = session.filter !== null && session.filter.has(g.class_id);
    mkChip(g.class_name, active, () =>
      session.setFilter(active ? null : [g.class_id]),
    );
  }
}

function renderQueue(session: Session, onJump: (index: number) => void): void {
  const box = el<"div">("queue");
  box.replaceChildren();
  session.visible().forEach((c, i) => {
    const item = document.createElement("button");
    item.className = i === session.cursor ? "qitem current" : "qitem";
    const badge = c.verdict === null ? "·" : BADGE[c.verdict];
    item.innerHTML = `<span class="qrank">#${c.rank}</span>` +
      `<span class="qbadge ${c.verdict ?? "open"}">${badge}</span>`;
    item.title = `${c.image} · ${c.class_name}`;
    item.addEventListener("click", () => onJump(i));
    box.appendChild(item);
  });
}

function renderCard(session: Session, api: ReviewApi): void {
  const card = el<"div">("card");
  const done = el<"div">("done");
  const c = session.current();
  if (session.complete() || c === null) {
    card.hidden = true;
    done.hidden = false;
    const n = session.visible().length;
    done.innerHTML = n === 0
      ? `<h2>No candidates in this group</h2>`
      : `<h2>Queue complete</h2>
         <p>All ${n} candidates reviewed · precision ${pct(session.stats.precision)}</p>
         <p><a href="/api/export" download="review_export.json">Download export</a></p>`;
    return;
  }
  card.hidden = false;
  done.hidden = true;
  el<"div">("meta").innerHTML =
    `<span class="rank">#${c.rank}</span>` +
    `<span>${esc(c.image)}</span>` +
    `<span>component ${c.component_id}</span>` +
    `<span class="cls">${esc(c.class_name)}</span>` +
    `<span>${c.size} px</span>` +
    `<span>score ${c.score.toFixed(3)}</span>` +
    (c.verdict === null ? "" : `<span class="qbadge ${c.verdict}">${BADGE[c.verdict]}</span>`);
  const img = el<"img">("crop");
  const url = api.cropUrl(c);
  if (img.getAttribute("src") !== url) img.src = url;
  img.alt = `candidate ${c.rank}: prediction overlay next to annotation overlay`;
}

function main(): void {
  const reviewer = new URLSearchParams(window.location.search).get("reviewer") ?? undefined;
  const api = new ReviewApi();
  const session = new Session(api, reviewer);

  const render = () => {
    renderStats(session);
    renderBanner(session);
    renderChips(session, render);
    renderQueue(session, (i) => {
      session.goTo(i);
      render();
    });
    renderCard(session, api);
  };

  const act = (fn: () => Promise<void> | void) => {
    void (async () => {
      await fn();
      render();
    })();
  };

  document.addEventListener("keydown", (ev) => {
    if (ev.altKey || ev.ctrlKey || ev.metaKey) return;
    const key = ev.key.toLowerCase();
    if (key in KEY_DECISIONS) act(() => session.submit(KEY_DECISIONS[key]));
    else if (ev.key === "ArrowRight" || key === "j") act(() => session.next());
    else if (ev.key === "ArrowLeft" || key === "k") act(() => session.prev());
    else return;
    ev.preventDefault();
  });

  for (const [btn, decision] of Object.entries({
    "btn-confirm": "confirmed",
    "btn-reject": "rejected",
    "btn-unsure": "unsure",
  } as Record<string, Decision>)) {
    el<"button">(btn).addEventListener("click", () => act(() => session.submit(decision)));
  }

  window.setInterval(() => {
    if (session.pending.length > 0) {
      act(async () => {
        if (await session.retryPending()) await session.reconcile();
      });
    }
  }, RETRY_INTERVAL_MS);

  act(() => session.load());
}

main();
