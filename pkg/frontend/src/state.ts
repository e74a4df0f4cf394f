/** Studio state and its pure transitions.
 *
 * The gallery always mirrors the last successful response, one card per
 * returned shape; failures keep the previous gallery. Recorded requests
 * make a session replayable: issuing them again against the same model
 * reproduces the same cards.
 */

import { Sample } from "./api";
import { captionsEqual } from "./diff";

export type Mode = "generate" | "manipulate-shape" | "manipulate-color";

export interface GalleryCard {
  seed: number;
  sample: Sample;
}

export interface RecordedRequest {
  caption: string;
  count: number;
  seed: number;
  resolution: number;
}

export interface StudioState {
  caption: string;
  editedCaption: string;
  mode: Mode;
  selectedSeed: number | null;
  gallery: GalleryCard[];
  before: Sample | null;
  after: Sample | null;
  resolution: number;
  iso: number;
  busy: boolean;
  warning: string | null;
  error: string | null;
  lastRequest: RecordedRequest | null;
}

export function initialState(): StudioState {
  return {
    caption: "",
    editedCaption: "",
    mode: "generate",
    selectedSeed: null,
    gallery: [],
    before: null,
    after: null,
    resolution: 32,
    iso: 0.5,
    busy: false,
    warning: null,
    error: null,
    lastRequest: null,
  };
}

export type Action =
  | { kind: "set-caption"; caption: string }
  | { kind: "set-edited"; caption: string }
  | { kind: "set-mode"; mode: Mode }
  | { kind: "set-resolution"; resolution: number }
  | { kind: "set-iso"; iso: number }
  | { kind: "select-card"; seed: number }
  | { kind: "request-started" }
  | { kind: "generate-succeeded"; samples: Sample[]; request: RecordedRequest }
  | { kind: "manipulate-succeeded"; before: Sample; after: Sample }
  | { kind: "request-failed"; message: string }
  | { kind: "warn"; message: string | null };

export function reduce(state: StudioState, action: Action): StudioState {
  switch (action.kind) {
    case "set-caption":
      return { ...state, caption: action.caption, warning: null };
    case "set-edited":
      return { ...state, editedCaption: action.caption, warning: null };
    case "set-mode":
      return { ...state, mode: action.mode, warning: null };
    case "set-resolution":
      return { ...state, resolution: action.resolution };
    case "set-iso":
      return { ...state, iso: action.iso };
    case "select-card": {
      if (!state.gallery.some((c) => c.seed === action.seed)) return state;
      return { ...state, selectedSeed: action.seed };
    }
    case "request-started":
      return { ...state, busy: true, error: null };
    case "generate-succeeded": {
      const gallery = action.samples.map((s) => ({ seed: s.seed, sample: s }));
      const keep = gallery.some((c) => c.seed === state.selectedSeed);
      return {
        ...state,
        busy: false,
        error: null,
        gallery,
        selectedSeed: keep ? state.selectedSeed : null,
        lastRequest: action.request,
      };
    }
    case "manipulate-succeeded":
      return {
        ...state,
        busy: false,
        error: null,
        before: action.before,
        after: action.after,
      };
    case "request-failed":
      // the prior gallery stays; the failure is only surfaced
      return { ...state, busy: false, error: action.message };
    case "warn":
      return { ...state, warning: action.message };
  }
}

/** Pre-flight check for an edit round trip. */
export function editWarning(original: string, edited: string): string | null {
  if (captionsEqual(original, edited)) return "no edit detected";
  return null;
}

/** Seed the next manipulate call should lock, preferring the clicked card. */
export function lockedSeed(state: StudioState): number | null {
  if (state.selectedSeed !== null) return state.selectedSeed;
  const first = state.gallery[0];
  return first ? first.seed : null;
}
