/** Studio shell: wires the controls, gallery, and before/after panes. */

import { FlowGate, StudioClient, ApiError, Sample } from "./api";
import { diffCaptions } from "./diff";
import {
  Action, editWarning, initialState, lockedSeed, reduce, StudioState,
} from "./state";
import { VoxelViewer } from "./viewer";

const client = new StudioClient("");
const gate = new FlowGate();
let state: StudioState = initialState();

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const captionInput = el<HTMLInputElement>("caption");
const editedInput = el<HTMLInputElement>("edited");
const modeSelect = el<HTMLSelectElement>("mode");
const countInput = el<HTMLInputElement>("count");
const resolutionSelect = el<HTMLSelectElement>("resolution");
const seedInput = el<HTMLInputElement>("seed");
const goButton = el<HTMLButtonElement>("go");
const plyButton = el<HTMLButtonElement>("ply");
const galleryDiv = el<HTMLDivElement>("gallery");
const pairDiv = el<HTMLDivElement>("pair");
const diffDiv = el<HTMLDivElement>("diff");
const warningDiv = el<HTMLDivElement>("warning");
const errorDiv = el<HTMLDivElement>("error");

const beforeViewer = new VoxelViewer(el<HTMLDivElement>("before"));
const afterViewer = new VoxelViewer(el<HTMLDivElement>("after"));
const cardViewers = new Map<number, VoxelViewer>();

function dispatch(action: Action): void {
  state = reduce(state, action);
  render();
}

function renderDiff(): void {
  diffDiv.replaceChildren(
    ...diffCaptions(state.caption, state.editedCaption).map((tok) => {
      const span = document.createElement("span");
      span.className = tok.tag;
      span.textContent = tok.word;
      return span;
    }),
  );
}

function renderGallery(): void {
  galleryDiv.replaceChildren();
  cardViewers.clear();
  for (const card of state.gallery) {
    const div = document.createElement("div");
    div.className = "card" + (card.seed === state.selectedSeed ? " selected" : "");
    const label = document.createElement("div");
    label.className = "label";
    label.textContent = `seed ${card.seed}`;
    const view = document.createElement("div");
    view.className = "view";
    div.append(label, view);
    div.addEventListener("click", () => dispatch({ kind: "select-card", seed: card.seed }));
    galleryDiv.append(div);
    const viewer = new VoxelViewer(view);
    viewer.show(card.sample.model);
    cardViewers.set(card.seed, viewer);
  }
}

function render(): void {
  goButton.disabled = state.busy;
  warningDiv.classList.toggle("hidden", !state.warning);
  warningDiv.textContent = state.warning ?? "";
  errorDiv.classList.toggle("hidden", !state.error);
  errorDiv.textContent = state.error ?? "";
  pairDiv.classList.toggle("hidden", !(state.before && state.after));
  renderDiff();
}

async function runGenerate(): Promise<void> {
  const request = {
    caption: state.caption,
    count: Number(countInput.value) || 1,
    seed: Number(seedInput.value) || 0,
    resolution: state.resolution,
  };
  dispatch({ kind: "request-started" });
  try {
    const samples = await gate.run("generate", () =>
      client.generate(request.caption, request.count, request.seed, request.resolution));
    dispatch({ kind: "generate-succeeded", samples, request });
    renderGallery();
  } catch (err) {
    if (err instanceof ApiError && err.message === "superseded") return;
    dispatch({ kind: "request-failed", message: String((err as Error).message) });
  }
}

async function runManipulate(): Promise<void> {
  const warning = editWarning(state.caption, state.editedCaption);
  dispatch({ kind: "warn", message: warning });
  const mode = state.mode === "manipulate-color" ? "color-edit" : "shape-edit";
  const seed = lockedSeed(state) ?? (Number(seedInput.value) || 0);
  dispatch({ kind: "request-started" });
  try {
    const { before, after } = await gate.run("manipulate", () =>
      client.manipulate(state.caption, state.editedCaption, mode, seed, state.resolution));
    dispatch({ kind: "manipulate-succeeded", before, after });
    showPair(before, after);
  } catch (err) {
    if (err instanceof ApiError && err.message === "superseded") return;
    dispatch({ kind: "request-failed", message: String((err as Error).message) });
  }
}

function showPair(before: Sample, after: Sample): void {
  beforeViewer.show(before.model);
  afterViewer.show(after.model);
  beforeViewer.resize();
  afterViewer.resize();
}

async function downloadPly(): Promise<void> {
  try {
    const ply = await client.mesh(
      state.caption, Number(seedInput.value) || 0, state.resolution, state.iso);
    const blob = new Blob([ply], { type: "text/plain" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "shape.ply";
    a.click();
    URL.revokeObjectURL(a.href);
  } catch (err) {
    dispatch({ kind: "request-failed", message: String((err as Error).message) });
  }
}

captionInput.addEventListener("input", () =>
  dispatch({ kind: "set-caption", caption: captionInput.value }));
editedInput.addEventListener("input", () =>
  dispatch({ kind: "set-edited", caption: editedInput.value }));
modeSelect.addEventListener("change", () =>
  dispatch({ kind: "set-mode", mode: modeSelect.value as StudioState["mode"] }));
resolutionSelect.addEventListener("change", () =>
  dispatch({ kind: "set-resolution", resolution: Number(resolutionSelect.value) }));
goButton.addEventListener("click", () => {
  if (state.mode === "generate") void runGenerate();
  else void runManipulate();
});
plyButton.addEventListener("click", () => void downloadPly());

client.health().then(
  (h) => { el("health").textContent = `service ok, config ${h.configHash}`; },
  () => { el("health").textContent = "service unreachable"; },
);

render();
