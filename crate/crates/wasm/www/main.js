// Build the bindings first: wasm-pack build crates/wasm --target web --out-dir www/pkg
import init, { discrepancy_curves, pendulum_swing, first_order_response } from "./pkg/lftgen_wasm.js";

const SVG = "http://www.w3.org/2000/svg";
const COLORS = ["#1f77b4", "#ff7f0e"];

function plot(svg, xs, series, { logX = false, logY = false } = {}) {
  svg.replaceChildren();
  const w = svg.width.baseVal.value, h = svg.height.baseVal.value, pad = 40;
  const tx = logX ? (v) => Math.log10(Math.max(v, 1e-12)) : (v) => v;
  const ty = logY ? (v) => Math.log10(Math.max(v, 1e-12)) : (v) => v;
  const xv = xs.map(tx);
  const yv = series.flat().map(ty).filter(Number.isFinite);
  const [x0, x1] = [Math.min(...xv), Math.max(...xv)];
  let [y0, y1] = [Math.min(...yv), Math.max(...yv)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const px = (v) => pad + ((tx(v) - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (v) => h - pad - ((ty(v) - y0) / (y1 - y0)) * (h - 2 * pad);

  const axis = document.createElementNS(SVG, "path");
  axis.setAttribute("d", `M${pad},${pad} V${h - pad} H${w - pad}`);
  axis.setAttribute("stroke", "#888");
  axis.setAttribute("fill", "none");
  svg.append(axis);
  for (const [v, y] of [[y1, pad], [y0, h - pad]]) {
    const t = document.createElementNS(SVG, "text");
    t.setAttribute("x", 2);
    t.setAttribute("y", y + 4);
    t.setAttribute("font-size", 10);
    t.textContent = (logY ? 10 ** v : v).toPrecision(3);
    svg.append(t);
  }
  series.forEach((ys, k) => {
    const line = document.createElementNS(SVG, "polyline");
    line.setAttribute("points", ys.map((y, i) => `${px(xs[i]).toFixed(1)},${py(y).toFixed(1)}`).join(" "));
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", COLORS[k % COLORS.length]);
    line.setAttribute("stroke-width", 1.5);
    svg.append(line);
  });
}

const $ = (id) => document.getElementById(id);

function runDiscrepancy() {
  const dim = Number($("ml2-dim").value), count = Number($("ml2-count").value);
  const out = discrepancy_curves(dim, count, BigInt($("ml2-seed").value));
  const halton = Array.from(out.slice(0, count)), random = Array.from(out.slice(count));
  plot($("ml2-plot"), halton.map((_, i) => i + 1), [halton, random], { logX: true, logY: true });
  $("ml2-out").textContent =
    `N = ${count}: Halton ${halton[count - 1].toExponential(3)}, random ${random[count - 1].toExponential(3)}`;
}

function runPendulum() {
  const theta = Number($("pend-theta").value), steps = 500, tau = 0.01;
  $("pend-theta-val").textContent = theta.toFixed(2);
  const out = pendulum_swing(theta, 0, tau, steps);
  const nl = Array.from(out.slice(0, steps + 1)), lin = Array.from(out.slice(steps + 1));
  plot($("pend-plot"), nl.map((_, i) => i * tau), [nl, lin]);
  const gap = Math.max(...nl.map((v, i) => Math.abs(v - lin[i])));
  $("pend-out").textContent = `max |theta - theta_lin| over ${steps * tau} s: ${gap.toFixed(4)} rad`;
}

function runHinf() {
  const a = Number($("hinf-a").value), c = Number($("hinf-c").value), points = 256;
  $("hinf-a-val").textContent = a.toFixed(2);
  const out = first_order_response(a, c, 0.01, points);
  const n = (out.length - 2) / 2;
  const omega = Array.from(out.slice(1, n)), gain = Array.from(out.slice(n + 1, 2 * n));
  plot($("hinf-plot"), omega, [gain], { logX: true, logY: true });
  const [norm, peak] = [out[2 * n], out[2 * n + 1]];
  $("hinf-out").textContent = `||G||inf = ${norm.toPrecision(6)} at ${peak.toPrecision(4)} rad/s`;
}

await init();
$("ml2-run").addEventListener("click", runDiscrepancy);
$("pend-theta").addEventListener("input", runPendulum);
$("hinf-a").addEventListener("input", runHinf);
$("hinf-c").addEventListener("change", runHinf);
runDiscrepancy();
runPendulum();
runHinf();
