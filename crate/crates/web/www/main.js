import init, { scheduleCurve, lrCurve, qeCurve, quantizerStaircase } from "./pkg/cyclebnn_web.js";

const $ = (id) => document.getElementById(id);

function bindOutputs() {
  for (const input of document.querySelectorAll("input[type=range]")) {
    const out = input.parentElement.querySelector("output");
    const show = () => { out.textContent = input.value; };
    input.addEventListener("input", show);
    show();
  }
}

// Draws one or more series on a canvas. Each series: { xs, ys, color, step }.
function plot(canvas, series, { yMin, yMax, xLabel, yLabel }) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = { l: 52, r: 12, t: 10, b: 30 };
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.xs);
  const xMin = Math.min(...xs), xMax = Math.max(...xs);
  const sx = (x) => pad.l + (x - xMin) / (xMax - xMin || 1) * (w - pad.l - pad.r);
  const sy = (y) => h - pad.b - (y - yMin) / (yMax - yMin || 1) * (h - pad.t - pad.b);

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.beginPath();
  ctx.moveTo(pad.l, pad.t);
  ctx.lineTo(pad.l, h - pad.b);
  ctx.lineTo(w - pad.r, h - pad.b);
  ctx.stroke();
  for (let i = 0; i <= 4; i++) {
    const y = yMin + (yMax - yMin) * i / 4;
    ctx.fillText(y.toPrecision(3), 4, sy(y) + 4);
  }
  ctx.fillText(String(xMin), pad.l, h - 10);
  ctx.fillText(String(xMax), w - pad.r - 30, h - 10);
  ctx.fillText(xLabel, w / 2 - 20, h - 10);
  ctx.fillText(yLabel, pad.l + 6, pad.t + 12);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.xs.forEach((x, i) => {
      const px = sx(x), py = sy(s.ys[i]);
      if (i === 0) ctx.moveTo(px, py);
      else if (s.step) { ctx.lineTo(px, sy(s.ys[i - 1])); ctx.lineTo(px, py); }
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  }
}

function guarded(errorId, draw) {
  return () => {
    try {
      draw();
      $(errorId).textContent = "";
    } catch (e) {
      $(errorId).textContent = e.message ?? String(e);
    }
  };
}

const drawSchedule = guarded("s-error", () => {
  const epochs = +$("s-epochs").value;
  const bits = Array.from(scheduleCurve(epochs, +$("s-cycles").value, +$("s-min").value, +$("s-max").value, $("s-mode").value));
  const lr = Array.from(lrCurve(epochs, 1e-3));
  const xs = bits.map((_, i) => i);
  const top = Math.max(...bits, 1);
  plot($("s-canvas"), [
    { xs, ys: bits, color: "#1f5fbf", step: true },
    { xs, ys: lr.map((v) => v / 1e-3 * top), color: "#d08a1a" },
  ], { yMin: 0, yMax: top + 1, xLabel: "epoch", yLabel: "bits (blue), lr scaled (orange)" });
});

const drawQe = guarded("q-error", () => {
  const qe = Array.from(qeCurve(+$("q-amp").value, +$("q-mean").value, +$("q-sigma").value, +$("q-bits").value, $("q-weight").checked));
  const xs = qe.map((_, i) => i + 1);
  plot($("q-canvas"), [{ xs, ys: qe, color: "#2b8a3e" }], {
    yMin: 0, yMax: Math.max(...qe) * 1.1 || 1, xLabel: "bits", yLabel: "quantization error",
  });
});

const drawStaircase = guarded("z-error", () => {
  const r = +$("z-range").value;
  const pts = quantizerStaircase(+$("z-bits").value, -r, r, 1201);
  const xs = [], ys = [];
  for (let i = 0; i < pts.length; i += 2) { xs.push(pts[i]); ys.push(pts[i + 1]); }
  plot($("z-canvas"), [
    { xs, ys: xs, color: "#bbb" },
    { xs, ys, color: "#8a2be2", step: true },
  ], { yMin: -r, yMax: r, xLabel: "x", yLabel: "Q(x)" });
});

await init();
bindOutputs();
for (const [ids, draw] of [
  [["s-epochs", "s-cycles", "s-min", "s-max", "s-mode"], drawSchedule],
  [["q-amp", "q-mean", "q-sigma", "q-bits", "q-weight"], drawQe],
  [["z-bits", "z-range"], drawStaircase],
]) {
  for (const id of ids) $(id).addEventListener("input", draw);
  draw();
}
