import init, { anonymize_document, class_names, crop_batch, degree_sweep } from "./pkg/anonbench_web.js";

const $ = (id) => document.getElementById(id);
const SCALE = 2;

function seedOf(input) {
  return Math.max(0, Math.floor(Number(input.value) || 0)) >>> 0;
}

function report(el, err) {
  el.className = err ? "err" : "";
  el.textContent = err ? String(err.message || err) : "";
}

function paint(canvas, w, h, rgba, boxes) {
  canvas.width = w * SCALE;
  canvas.height = h * SCALE;
  const ctx = canvas.getContext("2d");
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, w * SCALE, h * SCALE);
  for (const b of boxes) {
    ctx.strokeStyle = b.selected ? "#d22" : "#29c";
    ctx.strokeRect(b.x * SCALE + 0.5, b.y * SCALE + 0.5, b.w * SCALE - 1, b.h * SCALE - 1);
  }
}

function anonymize() {
  const degree = Number($("a-degree").value) / 100;
  $("a-degree-out").textContent = `${$("a-degree").value}%`;
  try {
    const r = anonymize_document(Number($("a-class").value), seedOf($("a-seed")), $("a-method").value, degree);
    const boxes = $("a-boxes").checked ? JSON.parse(r.boxes_json()) : [];
    paint($("a-orig"), r.width, r.height, r.original_rgba(), boxes);
    paint($("a-anon"), r.width, r.height, r.anonymized_rgba(), boxes);
    const n = JSON.parse(r.boxes_json());
    $("a-msg").textContent = `${n.filter((b) => b.selected).length} of ${n.length} boxes anonymized (red)`;
    r.free();
  } catch (e) {
    report($("a-msg"), e);
  }
}

function crops() {
  const W = 512, H = 384;
  try {
    const batch = JSON.parse(crop_batch($("c-adaption").value, Number($("c-globals").value),
      Number($("c-locals").value), seedOf($("c-seed")), W, H));
    const canvas = $("c-canvas");
    const s = canvas.width / W;
    canvas.height = Math.round(H * s);
    const ctx = canvas.getContext("2d");
    ctx.fillStyle = "#f4f4f4";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const rows = ["<tr><th>kind</th><th>source</th><th>x</th><th>y</th><th>w</th><th>h</th><th>area</th></tr>"];
    for (const c of [...batch.globals, ...batch.locals]) {
      const r = c.region;
      ctx.strokeStyle = c.source === "anonymized" ? "#d22" : "#29c";
      ctx.lineWidth = c.kind === "global" ? 2 : 1;
      ctx.strokeRect(r.x * s, r.y * s, r.w * s, r.h * s);
      rows.push(`<tr><td>${c.kind}</td><td>${c.source}</td><td>${r.x}</td><td>${r.y}</td><td>${r.w}</td><td>${r.h}</td><td>${c.area_fraction.toFixed(3)}</td></tr>`);
    }
    $("c-table").innerHTML = rows.join("");
    report($("c-msg"), null);
  } catch (e) {
    report($("c-msg"), e);
  }
}

function sweep() {
  $("s-msg").textContent = "running...";
  // let the message paint before the blocking call
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const s = JSON.parse(degree_sweep(Number($("s-n").value), $("s-method").value, seedOf($("s-seed"))));
      const rows = ["<tr><th>degree</th><th>mAP (orig. queries)</th><th>mnDCG</th><th>mAP (anon. queries)</th><th>mnDCG</th></tr>"];
      for (const p of s.points) {
        rows.push(`<tr><td>${p.degree * 100}%</td><td>${p.map_original_queries.toFixed(1)}</td><td>${p.mndcg_original_queries.toFixed(1)}</td>`
          + `<td>${p.map_anonymized_queries.toFixed(1)}</td><td>${p.mndcg_anonymized_queries.toFixed(1)}</td></tr>`);
      }
      $("s-table").innerHTML = rows.join("");
      $("s-msg").className = "";
      $("s-msg").textContent = `${s.documents} documents, top ${s.cutoff_p} relevant per query, ${Math.round(performance.now() - t0)} ms`;
    } catch (e) {
      report($("s-msg"), e);
    }
  }, 10);
}

await init();
class_names().split(",").forEach((name, i) => $("a-class").add(new Option(name, i)));
for (const id of ["a-class", "a-method", "a-degree", "a-seed", "a-boxes"]) $(id).addEventListener("input", anonymize);
$("c-go").addEventListener("click", crops);
$("s-go").addEventListener("click", sweep);
anonymize();
crops();
