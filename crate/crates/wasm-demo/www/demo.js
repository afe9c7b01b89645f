import init, { two_arm_heatmap, solve_policy, simulate, instance_names } from "./pkg/remax_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = { ReMax: "#d62728", Thompson: "#1f77b4", "KL-UCB": "#2ca02c" };

function fail(el, e) {
  el.innerHTML = `<p class="err">${e.message ?? e}</p>`;
}

// viridis-like ramp from dark blue to yellow
function ramp(v) {
  const stops = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
  const x = Math.min(Math.max(v, 0), 1) * (stops.length - 1);
  const i = Math.min(Math.floor(x), stops.length - 2);
  const f = x - i;
  return stops[i].map((c, k) => Math.round(c + f * (stops[i + 1][k] - c)));
}

function drawHeatmap() {
  const info = $("hm-info");
  const gapMax = +$("hm-gap").value, vmin = +$("hm-vmin").value, vmax = +$("hm-vmax").value;
  const cv = $("hm-canvas"), ctx = cv.getContext("2d");
  const nG = 120, nV = 80;
  let grid;
  try {
    grid = two_arm_heatmap(gapMax, nG, vmin, vmax, nV);
  } catch (e) {
    return fail(info, e);
  }
  const img = ctx.createImageData(nG, nV);
  for (let r = 0; r < nV; r++) {
    for (let c = 0; c < nG; c++) {
      // top row is the largest variance
      const [R, G, B] = ramp(grid[(nV - 1 - r) * nG + c] / 0.5);
      const p = 4 * (r * nG + c);
      img.data.set([R, G, B, 255], p);
    }
  }
  const off = new OffscreenCanvas(nG, nV);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, cv.width, cv.height);
  info.textContent = `gap 0 → ${gapMax} (left → right), var ${vmin} → ${vmax} (bottom → top); ` +
    `π₂ ranges ${Math.min(...grid).toFixed(4)} – ${Math.max(...grid).toFixed(4)}`;
}

function parseList(s) {
  return s.split(/[\s,]+/).filter((x) => x.length).map(Number);
}

function solve() {
  const out = $("sv-out");
  const means = parseList($("sv-means").value);
  const counts = parseList($("sv-counts").value);
  let res;
  try {
    res = solve_policy(new Float64Array(means), new Uint32Array(counts), +$("sv-std").value, +$("sv-infl").value);
  } catch (e) {
    return fail(out, e);
  }
  const k = means.length;
  let rows = "";
  for (let i = 0; i < k; i++) {
    rows += `<tr><td>${i + 1}</td><td>${means[i]}</td><td>${counts[i]}</td>` +
      `<td>${res[i].toFixed(6)}</td><td>${res[k + i].toExponential(4)}</td></tr>`;
  }
  out.innerHTML = `<table><tr><th>arm</th><th>mean</th><th>pulls</th><th>π</th><th>s̄ (EI)</th></tr>${rows}</table>` +
    `<p>λ = ${res[2 * k].toFixed(8)}, πᵀGπ = ${res[2 * k + 1].toFixed(8)}, active-set iterations ${res[2 * k + 2]}</p>`;
}

function plot(curves, T) {
  const cv = $("sim-canvas"), ctx = cv.getContext("2d");
  const pad = 40, w = cv.width - 2 * pad, h = cv.height - 2 * pad;
  ctx.clearRect(0, 0, cv.width, cv.height);
  const ymax = Math.max(...Object.values(curves).map((c) => c[c.length - 1])) * 1.05 || 1;
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.fillText("0", pad - 12, pad + h + 4);
  ctx.fillText(ymax.toFixed(2), 2, pad + 4);
  ctx.fillText(`t = ${T}`, pad + w - 40, pad + h + 16);
  for (const [name, ys] of Object.entries(curves)) {
    ctx.strokeStyle = COLORS[name];
    ctx.beginPath();
    const step = Math.max(1, Math.floor(ys.length / w));
    for (let t = 0; t < ys.length; t += step) {
      const x = pad + (w * t) / (ys.length - 1), y = pad + h - (h * ys[t]) / ymax;
      t === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
  $("sim-legend").innerHTML = Object.entries(curves)
    .map(([n, ys]) => `<span style="color:${COLORS[n]}">■ ${n}: ${ys[ys.length - 1].toFixed(3)}</span>`)
    .join("");
}

function runSim() {
  const T = +$("sim-T").value, R = +$("sim-R").value;
  let flat;
  try {
    flat = simulate($("sim-inst").value, T, R, BigInt($("sim-seed").value));
  } catch (e) {
    return fail($("sim-legend"), e);
  }
  plot({ ReMax: flat.slice(0, T), Thompson: flat.slice(T, 2 * T), "KL-UCB": flat.slice(2 * T) }, T);
}

await init();
for (const name of instance_names()) {
  $("sim-inst").add(new Option(name, name));
}
$("hm-go").onclick = drawHeatmap;
$("sv-go").onclick = solve;
$("sim-go").onclick = () => {
  $("sim-legend").textContent = "running…";
  setTimeout(runSim, 0);
};
drawHeatmap();
solve();
