import init, { demo_double_well, demo_divergence, demo_margin } from "./pkg/tailfuse_demo.js";

const $ = (id) => document.getElementById(id);

// ---- tiny plotting helpers ------------------------------------------------

function frame(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return { ctx, w: canvas.width, h: canvas.height, pad: 46 };
}

function scales(f, xs, ys) {
  let xmin = Math.min(...xs), xmax = Math.max(...xs);
  let ymin = Math.min(...ys), ymax = Math.max(...ys);
  if (xmax === xmin) xmax = xmin + 1;
  if (ymax === ymin) ymax = ymin + 1;
  const mx = 0.06 * (ymax - ymin);
  ymin -= mx; ymax += mx;
  return {
    x: (v) => f.pad + ((v - xmin) / (xmax - xmin)) * (f.w - 2 * f.pad),
    y: (v) => f.h - f.pad - ((v - ymin) / (ymax - ymin)) * (f.h - 2 * f.pad),
    xmin, xmax, ymin, ymax,
  };
}

function axes(f, s, xlabel, ylabel) {
  const { ctx } = f;
  ctx.strokeStyle = "#bbb";
  ctx.lineWidth = 1;
  ctx.strokeRect(f.pad, f.pad / 2, f.w - 2 * f.pad, f.h - 1.5 * f.pad);
  ctx.fillStyle = "#777";
  ctx.font = "22px system-ui";
  ctx.fillText(xlabel, f.w / 2 - 30, f.h - 8);
  ctx.fillText(ylabel, 6, f.pad / 2 + 20);
  ctx.fillText(s.xmin.toPrecision(3), f.pad, f.h - 8);
  ctx.fillText(s.xmax.toPrecision(3), f.w - f.pad - 60, f.h - 8);
}

function polyline(f, s, xs, ys, color, width = 3) {
  const { ctx } = f;
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  for (let i = 0; i < xs.length; i++) {
    const px = s.x(xs[i]), py = s.y(ys[i]);
    if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
  }
  ctx.stroke();
}

function dots(f, s, xs, ys, color, r = 4) {
  const { ctx } = f;
  ctx.fillStyle = color;
  for (let i = 0; i < xs.length; i++) {
    ctx.beginPath();
    ctx.arc(s.x(xs[i]), s.y(ys[i]), r, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function bindSliders(ids, onChange) {
  for (const id of ids) {
    const input = $(id);
    const show = () => {
      const out = input.parentElement.querySelector("output");
      if (out) out.textContent = input.value;
    };
    input.addEventListener("input", () => { show(); onChange(); });
    show();
  }
}

// ---- section 1: double well -----------------------------------------------

function drawDoubleWell() {
  const out = JSON.parse(demo_double_well(
    +$("dw-ndepth").value, +$("dw-nwidth").value,
    +$("dw-wcenter").value, +$("dw-wdepth").value, +$("dw-wwidth").value,
    +$("dw-gamma").value, +$("dw-eta").value,
    0.05, +$("dw-steps").value, +$("dw-seed").value,
  ));
  if (out.error) { console.error(out.error); return; }

  const f = frame($("dw-landscape"));
  const s = scales(f, out.landscape_u, out.landscape_f);
  axes(f, s, "u", "loss");
  polyline(f, s, out.landscape_u, out.landscape_f, "#888", 2.5);
  const every = Math.max(1, Math.floor(out.fixed.u_trace.length / 250));
  const sample = (tr) => tr.filter((_, i) => i % every === 0);
  const fixedU = sample(out.fixed.u_trace);
  dots(f, s, fixedU, fixedU.map(landscapeAt(out)), "#cf222e", 4);
  const sgmU = sample(out.sgm.u_trace);
  dots(f, s, sgmU, sgmU.map(landscapeAt(out)), "#0969da", 4);

  const ft = frame($("dw-traces"));
  const steps = out.sgm.gamma_trace.map((_, i) => i);
  const st = scales(ft, steps, out.sgm.gamma_trace.concat(out.sgm.sharpness_trace));
  axes(ft, st, "step", "gamma / sharpness");
  polyline(ft, st, steps, out.sgm.sharpness_trace, "#9a6700", 2);
  polyline(ft, st, steps, out.sgm.gamma_trace, "#0969da", 3);
  const corr = out.pearson_sgm == null ? "n/a" : out.pearson_sgm.toFixed(3);
  $("dw-summary").textContent =
    `corr(sharpness, gamma) = ${corr}; final u: modulated ${out.sgm.final_u.toFixed(3)}, ` +
    `fixed ${out.fixed.final_u.toFixed(3)}`;
}

function landscapeAt(out) {
  // Nearest landscape sample; good enough for plotting iterates on the curve.
  const { landscape_u: us, landscape_f: fs } = out;
  const lo = us[0], hi = us[us.length - 1];
  return (u) => {
    const i = Math.round(((u - lo) / (hi - lo)) * (us.length - 1));
    return fs[Math.max(0, Math.min(us.length - 1, i))];
  };
}

// ---- section 2: divergence ------------------------------------------------

function drawDivergence() {
  const out = JSON.parse(demo_divergence(
    +$("dv-eta").value, +$("dv-gamma").value, +$("dv-l").value, 1.0, +$("dv-steps").value,
  ));
  if (out.error) { console.error(out.error); return; }
  const f = frame($("dv-canvas"));
  const steps = out.trajectory.map((_, i) => i);
  const s = scales(f, steps, out.trajectory);
  axes(f, s, "step", "u");
  const zero = s.y(0);
  f.ctx.strokeStyle = "#ddd";
  f.ctx.beginPath(); f.ctx.moveTo(f.pad, zero); f.ctx.lineTo(f.w - f.pad, zero); f.ctx.stroke();
  polyline(f, s, steps, out.trajectory, "#0969da", 3);
  dots(f, s, steps, out.trajectory, "#0969da", 3);
  const v = $("dv-verdict");
  v.textContent = out.verdict;
  v.className = `verdict ${out.verdict}`;
  $("dv-factor").textContent = out.factor.toFixed(3);
  $("dv-crit").textContent = out.gamma_critical.toFixed(2);
}

// ---- section 3: adaptive margin --------------------------------------------

function drawMargin() {
  const out = JSON.parse(demo_margin(
    +$("mg-m0").value, +$("mg-beta").value * 1e-4, +$("mg-tn").value,
    20000, +$("mg-exp").value, +$("mg-batch").value, +$("mg-seed").value,
  ));
  if (out.error) { console.error(out.error); return; }

  const f = frame($("mg-canvas"));
  const s = scales(f, out.margin_t, out.margin_m.concat(out.positive_fraction, [0]));
  axes(f, s, "iteration t", "margin / positive fraction");
  polyline(f, s, out.margin_t, out.margin_m, "#0969da", 3);
  polyline(f, s, out.margin_t, out.positive_fraction, "#1a7f37", 3);

  const fh = frame($("mg-hist"));
  const centers = [];
  for (let i = 0; i < out.histogram_counts.length; i++) {
    centers.push((out.histogram_edges[i] + out.histogram_edges[i + 1]) / 2);
  }
  const sh = scales(fh, out.histogram_edges, out.histogram_counts.concat([0]));
  axes(fh, sh, "target value", "count");
  const barw = (sh.x(out.histogram_edges[1]) - sh.x(out.histogram_edges[0])) * 0.9;
  fh.ctx.fillStyle = "#8250df88";
  for (let i = 0; i < centers.length; i++) {
    const x = sh.x(centers[i]) - barw / 2;
    const y = sh.y(out.histogram_counts[i]);
    fh.ctx.fillRect(x, y, barw, sh.y(0) - y);
  }
  fh.ctx.fillStyle = "#cf222e";
  for (const label of out.batch_labels) {
    fh.ctx.fillRect(sh.x(label) - 2, sh.y(0) - 14, 4, 14);
  }
}

// ---- wiring -----------------------------------------------------------------

async function main() {
  await init();
  bindSliders(
    ["dw-ndepth", "dw-nwidth", "dw-wcenter", "dw-wdepth", "dw-wwidth",
     "dw-gamma", "dw-eta", "dw-steps", "dw-seed"],
    drawDoubleWell,
  );
  bindSliders(["dv-eta", "dv-gamma", "dv-l", "dv-steps"], drawDivergence);
  bindSliders(["mg-m0", "mg-beta", "mg-tn", "mg-exp", "mg-batch", "mg-seed"], drawMargin);
  drawDoubleWell();
  drawDivergence();
  drawMargin();
}

main();
