import init, { partition_plan, reachability, cost_sweep } from "./pkg/lpsim_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const SVG = "http://www.w3.org/2000/svg";

function values(form) {
  const out = {};
  for (const el of form.elements) {
    if (!el.name) continue;
    out[el.name] = el.type === "number" ? Number(el.value) : el.value;
  }
  return out;
}

function guarded(fn) {
  return () => {
    const err = document.getElementById("error");
    try {
      fn();
      err.textContent = "";
    } catch (e) {
      err.textContent = String(e);
    }
  };
}

function drawPlan() {
  const v = values(document.getElementById("plan-form"));
  const view = JSON.parse(partition_plan(v.extent, v.patch, v.workers, v.ratio));
  document.getElementById("plan-json").textContent = JSON.stringify(view.plan, null, 1);

  const svg = document.getElementById("plan-chart");
  svg.replaceChildren();
  const W = svg.width.baseVal.value, H = svg.height.baseVal.value, pad = 24;
  const n = view.totals.length;
  const x = (i) => pad + ((W - 2 * pad) * (i + 0.5)) / n;
  const y = (w) => H - pad - (H - 2 * pad) * (w / 2);

  const poly = (pts, color, width) => {
    const p = document.createElementNS(SVG, "polyline");
    p.setAttribute("points", pts.map(([i, w]) => `${x(i)},${y(w)}`).join(" "));
    p.setAttribute("fill", "none");
    p.setAttribute("stroke", color);
    p.setAttribute("stroke-width", width);
    svg.appendChild(p);
  };
  view.weights.forEach((ws, k) => poly(ws, COLORS[k % COLORS.length], 2));
  poly(view.totals.map((z, i) => [i, z]), "#999", 1);
  for (const level of [1, 2]) {
    const t = document.createElementNS(SVG, "text");
    t.setAttribute("x", 2);
    t.setAttribute("y", y(level) + 4);
    t.setAttribute("font-size", 10);
    t.textContent = level;
    svg.appendChild(t);
  }
}

function drawReach() {
  const v = values(document.getElementById("reach-form"));
  const view = JSON.parse(reachability(v.t, v.h, v.w, v.workers, v.ratio, v.schedule, v.steps));
  const total = v.t * v.h * v.w;
  document.getElementById("reach-verdict").textContent =
    (view.complete_at === null
      ? `not complete within ${v.steps} steps`
      : `every position reaches the whole grid after ${view.complete_at} step(s)`) +
    `; complete positions per step: ${view.complete_positions.join(", ")} of ${total}`;

  const root = document.getElementById("reach-grid");
  root.replaceChildren();
  const [nt, nh, nw] = view.dims;
  for (let t = 0; t < nt; t++) {
    const slice = document.createElement("div");
    slice.className = "slice";
    slice.style.gridTemplateColumns = `repeat(${nw}, 22px)`;
    slice.title = `t = ${t}`;
    for (let h = 0; h < nh; h++) {
      for (let w = 0; w < nw; w++) {
        const s = view.min_steps[(t * nh + h) * nw + w];
        const cell = document.createElement("div");
        cell.textContent = s === null ? "-" : s;
        cell.style.background = s === null ? "#555" : COLORS[(s - 1) % COLORS.length];
        slice.appendChild(cell);
      }
    }
    root.appendChild(slice);
  }
}

function drawCost() {
  const v = values(document.getElementById("cost-form"));
  const points = JSON.parse(cost_sweep(v.frames, v.steps, v.max, v.ratio));
  const mb = (b) => (b / 2 ** 20).toFixed(1);
  const rows = points.map((p) =>
    `<tr><td>${p.workers}</td><td>${mb(p.c_lp)}</td><td>${mb(p.c_nmp)}</td>` +
    `<td>${p.ratio === null ? "" : (100 * p.ratio).toFixed(2) + "%"}</td><td>${p.gamma_mean.toFixed(3)}</td></tr>`);
  document.getElementById("cost-table").innerHTML =
    "<tr><th>K</th><th>LP MiB</th><th>NMP MiB</th><th>LP/NMP</th><th>gamma</th></tr>" + rows.join("");
}

await init();
for (const [id, draw] of [["plan-form", drawPlan], ["reach-form", drawReach], ["cost-form", drawCost]]) {
  const run = guarded(draw);
  document.getElementById(id).addEventListener("input", run);
  run();
}
