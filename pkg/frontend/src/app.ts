/** Workbench UI: theorem picker, suggestion rounds, coverage badges,
 * transcript export/import.  `init` builds the DOM under `root` and returns a
 * controller whose methods the event handlers (and the tests) drive. */

import { ApiClient, Suggestion, TheoremSummary } from './api.js';
import { renderProofText } from './mentions.js';
import {
  SessionState,
  acceptEdited,
  acceptSuggestion,
  canExport,
  exportTranscript,
  importTranscript,
  isComplete,
  loadSession,
  recordRound,
  saveSession,
  startSession,
  writeStep,
} from './session.js';

export interface Controller {
  readonly state: SessionState | null;
  refreshTheorems(query?: string): Promise<void>;
  selectTheorem(id: number, setting?: string): Promise<void>;
  requestSuggestions(): Promise<void>;
  accept(index: number): void;
  acceptWithEdit(index: number, text: string): void;
  write(text: string): void;
  exportNow(): string;
  importNow(json: string): void;
  dismissError(): void;
}

const SUGGEST_K = 3;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  id?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (id) node.id = id;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function init(root: HTMLElement, api: ApiClient): Controller {
  let state: SessionState | null = loadSession();
  let inFlight = false;

  root.textContent = '';
  root.appendChild(el('h1', undefined, 'Proof Workbench'));
  const errorBox = el('div', 'error');
  errorBox.hidden = true;
  const errorText = el('span', 'error-text');
  const errorDismiss = el('button', 'error-dismiss', 'dismiss');
  errorBox.append(errorText, ' ', errorDismiss);
  root.appendChild(errorBox);

  const theoremList = el('ul', 'theorem-list');
  root.appendChild(theoremList);

  const session = el('section', 'session');
  session.hidden = true;
  const theoremTitle = el('h2', 'theorem-title');
  const theoremContent = el('p', 'theorem-content');
  const constraints = el('div', 'constraints');
  const steps = el('ol', 'steps');
  const banner = el('div', 'banner');
  banner.hidden = true;
  const suggestBtn = el('button', 'suggest-btn', 'Suggest next steps');
  const cards = el('div', 'cards');
  const writeBox = el('textarea', 'write-box');
  const writeBtn = el('button', 'write-btn', 'Add hand-written step');
  const exportBtn = el('button', 'export-btn', 'Export transcript');
  const exportOut = el('textarea', 'export-out');
  exportOut.readOnly = true;
  const importIn = el('textarea', 'import-in');
  const importBtn = el('button', 'import-btn', 'Import transcript');
  session.append(
    theoremTitle, theoremContent, constraints, steps, banner, suggestBtn, cards,
    writeBox, writeBtn, exportBtn, exportOut, importIn, importBtn,
  );
  root.appendChild(session);

  function showError(message: string): void {
    errorText.textContent = message;
    errorBox.hidden = false;
  }

  function renderBadges(): void {
    constraints.textContent = '';
    if (!state) return;
    const covered = new Set(state.covered);
    for (const title of state.constraintTitles) {
      const badge = el('span', undefined, title);
      badge.className = covered.has(title) ? 'badge covered' : 'badge uncovered';
      badge.dataset.title = title;
      constraints.appendChild(badge);
    }
  }

  function renderSteps(): void {
    steps.textContent = '';
    if (!state) return;
    for (const step of state.steps) {
      const item = el('li');
      item.className = 'step';
      item.dataset.origin = step.origin;
      item.appendChild(renderProofText(step.text));
      item.appendChild(el('span', undefined, ` [${step.origin}]`));
      steps.appendChild(item);
    }
  }

  function renderCards(): void {
    cards.textContent = '';
    if (!state) return;
    state.suggestions.forEach((suggestion: Suggestion, index: number) => {
      const card = el('div');
      card.className = 'card';
      const body = el('p');
      body.appendChild(renderProofText(suggestion.text));
      card.appendChild(body);
      card.appendChild(el('span', undefined, `logprob ${suggestion.logprob.toFixed(3)}`));
      const badges = el('span');
      badges.className = 'card-coverage';
      for (const title of suggestion.covered_titles) {
        const badge = el('span', undefined, title);
        badge.className = 'badge covered';
        badges.appendChild(badge);
      }
      card.appendChild(badges);
      const acceptBtn = el('button', undefined, 'Accept');
      acceptBtn.className = 'accept-btn';
      acceptBtn.onclick = () => controller.accept(index);
      const editBox = el('textarea');
      editBox.className = 'edit-box';
      editBox.value = suggestion.text;
      const editBtn = el('button', undefined, 'Accept edited');
      editBtn.className = 'edit-btn';
      editBtn.onclick = () => controller.acceptWithEdit(index, editBox.value);
      card.append(acceptBtn, editBox, editBtn);
      cards.appendChild(card);
    });
  }

  function render(): void {
    if (!state) {
      session.hidden = true;
      return;
    }
    session.hidden = false;
    theoremTitle.textContent = state.title;
    renderBadges();
    renderSteps();
    renderCards();
    const complete = isComplete(state);
    banner.hidden = !complete;
    banner.textContent = complete ? 'All constraint titles covered — finalize proof' : '';
    exportBtn.disabled = !canExport(state);
    suggestBtn.disabled = inFlight;
  }

  function update(next: SessionState): void {
    state = next;
    saveSession(state);
    render();
  }

  const controller: Controller = {
    get state() {
      return state;
    },

    async refreshTheorems(query = '') {
      try {
        const page = await api.listTheorems(query);
        theoremList.textContent = '';
        for (const item of page.items as TheoremSummary[]) {
          const li = el('li');
          const btn = el('button', undefined, item.title);
          btn.className = 'theorem-pick';
          btn.dataset.id = String(item.id);
          btn.onclick = () => void controller.selectTheorem(item.id);
          li.appendChild(btn);
          theoremList.appendChild(li);
        }
      } catch (err) {
        showError(err instanceof Error ? err.message : String(err));
      }
    },

    async selectTheorem(id: number, setting = 'provided') {
      try {
        const detail = await api.getTheorem(id);
        theoremContent.textContent = detail.content;
        update(startSession(detail, setting));
      } catch (err) {
        showError(err instanceof Error ? err.message : String(err));
      }
    },

    async requestSuggestions() {
      if (!state || inFlight) return;
      inFlight = true;
      suggestBtn.disabled = true;
      try {
        const result = await api.suggest({
          theorem_id: state.theoremId,
          proof_so_far: state.steps.map((s) => s.text),
          setting: state.setting === 'none' ? undefined : state.setting,
          k: SUGGEST_K,
          seed: 0,
        });
        update(recordRound(state, result.suggestions));
      } catch (err) {
        showError(err instanceof Error ? err.message : String(err));
      } finally {
        inFlight = false;
        suggestBtn.disabled = false;
      }
    },

    accept(index: number) {
      if (!state) return;
      update(acceptSuggestion(state, index));
    },

    acceptWithEdit(index: number, text: string) {
      if (!state) return;
      update(acceptEdited(state, index, text));
    },

    write(text: string) {
      if (!state || !text.trim()) return;
      update(writeStep(state, text));
    },

    exportNow() {
      if (!state) throw new Error('no session');
      const json = exportTranscript(state);
      exportOut.value = json;
      return json;
    },

    importNow(json: string) {
      try {
        update(importTranscript(json));
      } catch (err) {
        showError(err instanceof Error ? err.message : String(err));
      }
    },

    dismissError() {
      errorBox.hidden = true;
      errorText.textContent = '';
    },
  };

  errorDismiss.onclick = () => controller.dismissError();
  suggestBtn.onclick = () => void controller.requestSuggestions();
  writeBtn.onclick = () => {
    controller.write(writeBox.value);
    writeBox.value = '';
  };
  exportBtn.onclick = () => {
    try {
      controller.exportNow();
    } catch (err) {
      showError(err instanceof Error ? err.message : String(err));
    }
  };
  importBtn.onclick = () => controller.importNow(importIn.value);

  render();
  return controller;
}
