/** Session state for one interactive proof-writing session.
 *
 * All transitions return a fresh state; the transcript is append-only and the
 * accepted-step list only grows.  Coverage is server-authoritative: accepting
 * a suggestion verbatim takes the `covered_titles` the service computed for
 * it (history plus that step).  Edited and hand-written steps get a
 * client-side mention scan with the same title rules, which the next
 * suggestion round's server response confirms.
 */

import type { Suggestion, TheoremDetail } from './api.js';
import { coveredConstraints, normalizeTitle } from './mentions.js';

export type StepOrigin = 'accepted' | 'edited' | 'hand-written';

export interface AcceptedStep {
  text: string;
  origin: StepOrigin;
}

export interface RoundEvent {
  type: 'round';
  at: string;
  suggestions: Suggestion[];
}

export interface StepEvent {
  type: 'step';
  at: string;
  text: string;
  origin: StepOrigin;
}

export type TranscriptEvent = RoundEvent | StepEvent;

export interface SessionState {
  theoremId: number;
  title: string;
  setting: string;
  constraintTitles: string[];
  covered: string[];
  steps: AcceptedStep[];
  suggestions: Suggestion[];
  transcript: TranscriptEvent[];
  startedAt: string;
}

const TRANSCRIPT_VERSION = 1;
const STORAGE_KEY = 'proofgen.workbench.v1';

function now(): string {
  return new Date().toISOString();
}

export function startSession(theorem: TheoremDetail, setting: string): SessionState {
  return {
    theoremId: theorem.id,
    title: theorem.title,
    setting,
    constraintTitles: setting === 'provided' ? theorem.gold_titles : [],
    covered: [],
    steps: [],
    suggestions: [],
    transcript: [],
    startedAt: now(),
  };
}

export function recordRound(state: SessionState, suggestions: Suggestion[]): SessionState {
  return {
    ...state,
    suggestions,
    transcript: [...state.transcript, { type: 'round', at: now(), suggestions }],
  };
}

function mergeCovered(state: SessionState, titles: string[]): string[] {
  const known = new Set([...state.covered, ...titles].map(normalizeTitle));
  return state.constraintTitles.filter((t) => known.has(normalizeTitle(t)));
}

function appendStep(state: SessionState, text: string, origin: StepOrigin, covered: string[]): SessionState {
  return {
    ...state,
    steps: [...state.steps, { text, origin }],
    covered,
    suggestions: [],
    transcript: [...state.transcript, { type: 'step', at: now(), text, origin }],
  };
}

export function acceptSuggestion(state: SessionState, index: number): SessionState {
  const chosen = state.suggestions[index];
  if (!chosen) throw new Error(`no suggestion at index ${index}`);
  return appendStep(state, chosen.text, 'accepted', mergeCovered(state, chosen.covered_titles));
}

export function acceptEdited(state: SessionState, index: number, text: string): SessionState {
  if (!state.suggestions[index]) throw new Error(`no suggestion at index ${index}`);
  const scanned = coveredConstraints(state.constraintTitles, [...state.steps.map((s) => s.text), text]);
  return appendStep(state, text, 'edited', mergeCovered(state, scanned));
}

export function writeStep(state: SessionState, text: string): SessionState {
  const scanned = coveredConstraints(state.constraintTitles, [...state.steps.map((s) => s.text), text]);
  return appendStep(state, text, 'hand-written', mergeCovered(state, scanned));
}

export function isComplete(state: SessionState): boolean {
  if (state.constraintTitles.length === 0) return false;
  const covered = new Set(state.covered.map(normalizeTitle));
  return state.constraintTitles.every((t) => covered.has(normalizeTitle(t)));
}

export function canExport(state: SessionState): boolean {
  return state.steps.length > 0;
}

export interface Transcript {
  schema_version: number;
  theorem_id: number;
  title: string;
  setting: string;
  constraint_titles: string[];
  started_at: string;
  exported_at: string;
  steps: AcceptedStep[];
  events: TranscriptEvent[];
}

export function exportTranscript(state: SessionState): string {
  if (!canExport(state)) throw new Error('nothing to export: no accepted steps');
  const transcript: Transcript = {
    schema_version: TRANSCRIPT_VERSION,
    theorem_id: state.theoremId,
    title: state.title,
    setting: state.setting,
    constraint_titles: state.constraintTitles,
    started_at: state.startedAt,
    exported_at: now(),
    steps: state.steps,
    events: state.transcript,
  };
  return JSON.stringify(transcript, null, 2);
}

export function importTranscript(json: string): SessionState {
  let parsed: Transcript;
  try {
    parsed = JSON.parse(json);
  } catch {
    throw new Error('transcript is not valid JSON');
  }
  if (parsed.schema_version !== TRANSCRIPT_VERSION) {
    throw new Error(`unsupported transcript version ${parsed.schema_version}`);
  }
  if (!Array.isArray(parsed.steps) || typeof parsed.theorem_id !== 'number') {
    throw new Error('transcript is missing steps or theorem id');
  }
  const constraintTitles = parsed.constraint_titles ?? [];
  return {
    theoremId: parsed.theorem_id,
    title: parsed.title ?? '',
    setting: parsed.setting ?? 'none',
    constraintTitles,
    covered: coveredConstraints(
      constraintTitles,
      parsed.steps.map((s) => s.text),
    ),
    steps: parsed.steps.map((s) => ({ text: s.text, origin: s.origin })),
    suggestions: [],
    transcript: parsed.events ?? [],
    startedAt: parsed.started_at ?? now(),
  };
}

export function saveSession(state: SessionState): void {
  localStorage.setItem(STORAGE_KEY, JSON.stringify(state));
}

export function loadSession(): SessionState | null {
  try {
    const raw = localStorage.getItem(STORAGE_KEY);
    if (!raw) return null;
    const state = JSON.parse(raw);
    if (typeof state.theoremId !== 'number' || !Array.isArray(state.steps)) return null;
    return state;
  } catch {
    return null;
  }
}

export function clearSession(): void {
  localStorage.removeItem(STORAGE_KEY);
}
