import init, { normalize, aggregate, score } from "./pkg/kpagg_web.js";

const $ = (id) => document.getElementById(id);

const escape = (s) =>
  s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);

const phrase = (p) =>
  `<span class="${p.present ? "present" : "absent"}" title="${escape(p.normalized)}">${escape(p.surface)}</span>`;

const table = (head, rows) =>
  `<table><tr>${head.map((h) => `<th>${h}</th>`).join("")}</tr>` +
  rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("") +
  "</table>";

const pct = (v) => (v === null ? "n/a" : (100 * v).toFixed(1));

function runNormalize() {
  const rows = JSON.parse(normalize($("phrases").value, $("doc").value));
  $("out-normalize").innerHTML = table(
    ["phrase", "stemmed", "presence"],
    rows.map((p) => [escape(p.surface), escape(p.normalized), phrase({ ...p, surface: p.present ? "present" : "absent" })]),
  );
}

function runAggregate() {
  const view = JSON.parse(aggregate($("samples").value, $("doc").value));
  const note = `<p class="note">${view.samples.length} samples, ${view.fallbacks} parsed without list structure.</p>`;
  $("out-aggregate").innerHTML =
    note +
    table(
      ["strategy", "present", "absent", "M pre / abs"],
      view.strategies.map((s) => [
        s.strategy,
        s.present.map(phrase).join(", "),
        s.absent.map(phrase).join(", "),
        `${s.m_pre} / ${s.m_abs}`,
      ]),
    );
}

function runScore() {
  const s = JSON.parse(score($("pred").value, $("gold").value));
  $("out-score").innerHTML = table(
    ["F1@M", "F1@5", "R@10", "R@Inf", "matched"],
    [[pct(s.f1_at_m), pct(s.f1_at_5), pct(s.r_at_10), pct(s.r_at_inf), s.matched.map(escape).join(", ")]],
  );
}

await init();
$("run-normalize").onclick = runNormalize;
$("run-aggregate").onclick = runAggregate;
$("run-score").onclick = runScore;
runNormalize();
runAggregate();
runScore();
