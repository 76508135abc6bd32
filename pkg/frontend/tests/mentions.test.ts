import { describe, expect, it } from 'vitest';

import { coveredConstraints, normalizeTitle, renderProofText, scanMentionTitles } from '../src/mentions.js';

describe('normalizeTitle', () => {
  it('maps underscores to spaces and collapses whitespace', () => {
    expect(normalizeTitle('Definition:Even_Integer')).toBe('Definition:Even Integer');
    expect(normalizeTitle('  Definition:Even   Integer ')).toBe('Definition:Even Integer');
  });
});

describe('scanMentionTitles', () => {
  it('keeps Definition and Axiom prefixes and drops Theorem prefixes', () => {
    const text =
      'By [[Definition:Even_Integer|evenness]] and [[Axiom:Commutative Law of Addition]], ' +
      'apply [[Theorem:Sum of Two Even Integers is Even|the sum rule]].';
    expect(scanMentionTitles(text)).toEqual([
      'Definition:Even Integer',
      'Axiom:Commutative Law of Addition',
      'Sum of Two Even Integers is Even',
    ]);
  });

  it('reports each title once in first-mention order', () => {
    const text = '[[Definition:Integer|a]] then [[Definition:Even Integer|b]] then [[Definition:Integer|c]]';
    expect(scanMentionTitles(text)).toEqual(['Definition:Integer', 'Definition:Even Integer']);
  });

  it('ignores unclosed markers and plain text', () => {
    expect(scanMentionTitles('no mentions here, [[ broken')).toEqual([]);
  });
});

describe('coveredConstraints', () => {
  const constraints = ['Definition:Odd Integer', 'Axiom:Commutative Law of Addition', 'Definition:Even Integer'];

  it('returns covered titles in constraint order regardless of mention order', () => {
    const steps = [
      'First [[Definition:Even_Integer|even]].',
      'Then [[Definition:Odd Integer|odd]].',
    ];
    expect(coveredConstraints(constraints, steps)).toEqual(['Definition:Odd Integer', 'Definition:Even Integer']);
  });

  it('matches underscored mentions against spaced constraints', () => {
    expect(coveredConstraints(['Definition:Even Integer'], ['see [[Definition:Even_Integer]]'])).toEqual([
      'Definition:Even Integer',
    ]);
  });

  it('is empty with no mentions', () => {
    expect(coveredConstraints(constraints, ['nothing here'])).toEqual([]);
  });
});

describe('renderProofText', () => {
  it('highlights mentions with their page title and surface', () => {
    const fragment = renderProofText('Let $x$ be [[Definition:Even_Integer|even]].');
    const holder = document.createElement('div');
    holder.appendChild(fragment);
    const span = holder.querySelector('span.mention');
    expect(span).not.toBeNull();
    expect(span!.textContent).toBe('even');
    expect(span!.getAttribute('title')).toBe('Definition:Even Integer');
    expect(holder.textContent).toBe('Let $x$ be even.');
  });

  it('renders the pipe trick as the bare title', () => {
    const holder = document.createElement('div');
    holder.appendChild(renderProofText('[[Definition:Even Integer|]]'));
    expect(holder.textContent).toBe('Even Integer');
  });

  it('never interprets proof text as HTML', () => {
    const holder = document.createElement('div');
    holder.appendChild(renderProofText('<img src=x onerror=boom> and [[Definition:Integer|<b>bold</b>]]'));
    expect(holder.querySelector('img')).toBeNull();
    expect(holder.querySelector('b')).toBeNull();
    expect(holder.textContent).toContain('<img src=x onerror=boom>');
  });
});
