import init, { score, run_episode, sweep } from "../pkg/goalsteer_wasm.js";

const $ = (id) => document.getElementById(id);

function show(outId, fn) {
  const out = $(outId);
  out.classList.remove("err");
  try {
    out.textContent = fn();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  }
}

await init();

$("score-btn").onclick = () =>
  show("score-out", () => JSON.stringify(JSON.parse(score($("goal").value, $("reward").value)), null, 2));

$("episode-btn").onclick = () =>
  show("episode-out", () =>
    run_episode($("episode-cfg").value, $("episode-prompt").value, BigInt($("episode-seed").value || 0)));

$("sweep-btn").onclick = () =>
  show("sweep-out", () => {
    const ks = new BigUint64Array($("sweep-k").value.split(",").map((s) => BigInt(s.trim())));
    return sweep($("sweep-cfg").value, ks, Number($("sweep-prompts").value));
  });
