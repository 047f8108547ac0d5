import init, { mechanismPreview, epsilonCurve, toySimulation } from "./pkg/disclosure_sim_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = { non_sensitive: "#2a7", normal: "#27c", sensitive: "#c33", all: "#000" };

function plot(canvas, series) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const n = Math.max(...series.map((s) => s.values.length));
  let x = 30;
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.values.forEach((v, i) => {
      const px = (i / Math.max(n - 1, 1)) * (canvas.width - 10) + 5;
      const py = canvas.height - 5 - v * (canvas.height - 10);
      i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, x, 12);
    x += ctx.measureText(s.label).width + 16;
  }
}

function fail(el, e) {
  el.innerHTML = `<span class="err">${e.message ?? e}</span>`;
}

function showMechanism() {
  try {
    const r = JSON.parse(mechanismPreview($("m-strategy").value, $("m-p").value, num("m-n"), num("m-attr")));
    $("m-summary").textContent = `segment sizes [${r.segments.join(", ")}], ${r.size} choices`;
    $("m-out").textContent = r.vectors.join("\n") + (r.size > r.vectors.length ? "\n..." : "");
  } catch (e) {
    fail($("m-summary"), e);
    $("m-out").textContent = "";
  }
}

function showEpsilon() {
  const values = Array.from(epsilonCurve(num("e-size"), num("e-epochs")));
  plot($("e-plot"), [{ label: "epsilon", color: "#27c", values }]);
}

function runToy() {
  const params = {
    users: num("s-users"), items: num("s-items"), strategy: $("s-strategy").value, p: $("s-p").value,
    model: $("s-model").value, epochs: num("s-epochs"), seed: num("s-seed"),
  };
  try {
    const series = JSON.parse(toySimulation(JSON.stringify(params)));
    const labels = series[series.length - 1].groups.map((g) => g.group);
    plot($("s-plot"), labels.map((label) => ({
      label: `${label} dis.`,
      color: COLORS[label] ?? "#888",
      values: series.map((m) => m.groups.find((g) => g.group === label)?.mean_dis_frac ?? 0),
    })));
    const last = series[series.length - 1].groups;
    $("s-out").innerHTML = "<table><tr><th>group</th><th>users</th><th>NDCG</th><th>dis.%</th><th>disclosing%</th></tr>" +
      last.map((g) => `<tr><td>${g.group}</td><td>${g.users}</td><td>${g.mean_ndcg.toFixed(4)}</td>` +
        `<td>${(100 * g.mean_dis_frac).toFixed(1)}</td><td>${g.pct_users_disclosing.toFixed(1)}</td></tr>`).join("") +
      "</table>";
  } catch (e) {
    fail($("s-out"), e);
  }
}

await init();
$("m-go").onclick = showMechanism;
$("e-go").onclick = showEpsilon;
$("s-go").onclick = runToy;
showMechanism();
showEpsilon();
