import init, { samples, compare_rankings, build_haystack } from "./pkg/haykit_web.js";

const $ = (id) => document.getElementById(id);

function renderRanking(list, rows) {
  list.replaceChildren(...rows.map((r) => {
    const li = document.createElement("li");
    li.textContent = r.title;
    if (r.is_needle) li.className = "needle";
    const s = document.createElement("span");
    s.className = "score";
    s.textContent = r.score.toFixed(4);
    li.append(s);
    return li;
  }));
}

function updateRanking() {
  const seeds = Number($("seeds").value);
  const damping = Number($("damping").value);
  $("seeds-out").textContent = seeds;
  $("damping-out").textContent = damping.toFixed(2);
  const cmp = JSON.parse(compare_rankings(Number($("sample").value), seeds, damping, 10));
  renderRanking($("bm25"), cmp.bm25);
  renderRanking($("ppr"), cmp.reranked);
}

function updateHaystack() {
  const budget = Number($("budget").value);
  $("budget-out").textContent = budget === 0 ? "needles" : budget;
  const seed = $("order").value === "random" ? Number($("seed").value) : -1;
  $("seed").disabled = seed < 0;
  $("error").textContent = "";
  let view;
  try {
    view = JSON.parse(build_haystack(Number($("sample").value), $("use-ppr").checked, budget, seed));
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
    $("haystack").replaceChildren();
    $("summary").textContent = "";
    return;
  }
  const positions = view.members.flatMap((m, i) => (m.is_needle ? [i + 1] : []));
  $("summary").textContent =
    `${view.members.length} articles, ${view.total_tokens} tokens; needles at positions ${positions.join(", ")}`;
  const widest = Math.max(...view.members.map((m) => m.tokens), 1);
  $("haystack").replaceChildren(...view.members.map((m) => {
    const row = document.createElement("div");
    row.className = "bar" + (m.is_needle ? " needle" : "") + (m.truncated ? " cut" : "");
    row.title = m.preview;
    const label = document.createElement("span");
    label.className = "label";
    label.textContent = m.title + (m.truncated ? " (truncated)" : "");
    const fill = document.createElement("span");
    fill.className = "fill";
    fill.style.width = `${(m.tokens / widest) * 20}rem`;
    const n = document.createElement("span");
    n.className = "score";
    n.textContent = `${m.tokens} tok`;
    row.append(label, fill, n);
    return row;
  }));
}

function updateQuestion(list) {
  const s = list[Number($("sample").value)];
  $("question").textContent = `${s.question} (answer: ${s.answer}; needles: ${s.needles.join(", ")}, ${s.needle_tokens} tokens)`;
}

async function main() {
  await init();
  const list = JSON.parse(samples());
  $("sample").replaceChildren(...list.map((s, i) => new Option(s.id, i)));
  const all = () => { updateQuestion(list); updateRanking(); updateHaystack(); };
  $("sample").addEventListener("change", all);
  for (const id of ["seeds", "damping"]) $(id).addEventListener("input", updateRanking);
  for (const id of ["budget", "use-ppr", "order", "seed"]) $(id).addEventListener("input", updateHaystack);
  all();
}

main().catch((e) => { $("error").textContent = String(e); });
