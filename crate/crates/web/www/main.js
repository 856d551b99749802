// Build with:
//   cargo build -p fatou-atlas-web --release --target wasm32-unknown-unknown
//   wasm-bindgen --target web --out-dir crates/web/www/pkg target/wasm32-unknown-unknown/release/fatou_atlas_web.wasm
import init, { family_coeffs, render_julia, render_bifurcation, trace_ray } from "./pkg/fatou_atlas_web.js";

const $ = (id) => document.getElementById(id);
const view = { cx: 0, cy: 0, w: 4 };
const pview = { cx: 0, cy: 0, w: 4 };
let coeffs = null;

function blit(canvas, r) {
  const img = new ImageData(new Uint8ClampedArray(r.rgba()), r.width, r.height);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function toPlane(canvas, v, ev) {
  const b = canvas.getBoundingClientRect();
  const x = (ev.clientX - b.left) / b.width - 0.5;
  const y = 0.5 - (ev.clientY - b.top) / b.height;
  return [v.cx + x * v.w, v.cy + y * v.w];
}

function show(text) {
  $("report").textContent = text;
}

function drawJulia() {
  try {
    coeffs = family_coeffs($("family").value, +$("re").value, +$("im").value);
    const c = $("dyn");
    const r = render_julia(coeffs, view.cx, view.cy, view.w, view.w, c.width, c.height, 500, "", +$("level").value);
    blit(c, r);
    const rep = JSON.parse(r.report());
    show(JSON.stringify({ tree: rep.tree && { k_of_f: rep.tree.k_of_f, maximality: rep.tree.maximality }, errors: rep.errors }, null, 1));
  } catch (e) {
    show(String(e));
  }
}

function drawParam() {
  const c = $("param");
  const r = render_bifurcation($("family").value, pview.cx, pview.cy, pview.w, pview.w, c.width, c.height, 300);
  blit(c, r);
  show(r.report());
}

function drawRay() {
  if (!coeffs) return;
  try {
    const path = JSON.parse(trace_ray(coeffs, $("angle").value));
    const c = $("dyn");
    const g = c.getContext("2d");
    const px = ([re, im]) => [((re - view.cx) / view.w + 0.5) * c.width, (0.5 - (im - view.cy) / view.w) * c.height];
    g.strokeStyle = "#111";
    g.beginPath();
    path.points.forEach((z, k) => (k ? g.lineTo(...px(z)) : g.moveTo(...px(z))));
    if (path.landing.status === "landed") g.lineTo(...px(path.landing.z));
    g.stroke();
    show(JSON.stringify(path.landing));
  } catch (e) {
    show(String(e));
  }
}

await init();
$("bif").onclick = drawParam;
$("julia").onclick = drawJulia;
$("ray").onclick = drawRay;
$("family").onchange = () => { drawParam(); drawJulia(); };
$("param").onclick = (ev) => {
  const [re, im] = toPlane($("param"), pview, ev);
  $("re").value = re.toFixed(5);
  $("im").value = im.toFixed(5);
  Object.assign(view, { cx: 0, cy: 0, w: 4 });
  drawJulia();
};
$("dyn").onclick = (ev) => {
  const [x, y] = toPlane($("dyn"), view, ev);
  Object.assign(view, { cx: x, cy: y, w: ev.shiftKey ? view.w * 2 : view.w / 2 });
  drawJulia();
};
drawParam();
drawJulia();
