/**
 * Answer equivalence. Three escalating checks:
 *   1. exact   - normalized string match
 *   2. numeric - both sides parse as plain numbers, compared at 1e-6 relative
 *   3. symbolic - both sides parse as expressions; the difference is sampled
 *      on a deterministic grid of points and must vanish everywhere
 *
 * The grid depends only on the sorted union of variable names, so grading is
 * symmetric by construction. Anything unparseable is simply not equivalent
 * ("parse-failure"); this module never throws on user input.
 */

export type Method = 'exact' | 'numeric' | 'symbolic'

export interface GradeResult {
  equivalent: boolean
  method: Method | null
  detail: string
}

const NUMERIC_RTOL = 1e-6
const TRAILING_PUNCT = /[.,;:!?]+$/

export function normalizeAnswer(text: string): string {
  return text
    .trim()
    .replace(/\s+/g, ' ')
    .replace(TRAILING_PUNCT, '')
    .trim()
}

/** Rewrite common LaTeX into plain infix the tokenizer understands. */
export function latexCleanup(text: string): string {
  let s = text
  s = s.replace(/\$/g, '')
  s = s.replace(/\\left|\\right/g, '')
  s = s.replace(/\\(cdot|times)/g, '*')
  s = s.replace(/\\div/g, '/')
  s = s.replace(/\\pi\b/g, 'pi')
  s = s.replace(/\\,|\\;|\\ /g, ' ')
  // \frac{a}{b} -> ((a)/(b)), innermost first so nesting unwinds
  for (let i = 0; i < 10 && /\\[td]?frac/.test(s); i++) {
    s = s.replace(/\\[td]?frac\s*\{([^{}]*)\}\s*\{([^{}]*)\}/g, '(($1)/($2))')
  }
  // \sqrt{a} -> ((a)^(1/2))
  for (let i = 0; i < 10 && /\\sqrt/.test(s); i++) {
    s = s.replace(/\\sqrt\s*\{([^{}]*)\}/g, '(($1)^(1/2))')
  }
  s = s.replace(/\^\s*\{([^{}]*)\}/g, '^($1)')
  // remaining grouping braces act as parentheses
  s = s.replace(/\{/g, '(').replace(/\}/g, ')')
  return s
}

export function parseNumber(text: string): number | null {
  let s = normalizeAnswer(latexCleanup(text)).replace(/\s/g, '').replace(/,/g, '')
  if (!s) return null
  let percent = false
  if (s.endsWith('%')) {
    percent = true
    s = s.slice(0, -1)
  }
  const fraction = s.match(/^\(*(-?\d+(?:\.\d+)?)\)*\/\(*(-?\d+(?:\.\d+)?)\)*$/)
  let value: number
  if (fraction) {
    const den = Number(fraction[2])
    if (den === 0) return null
    value = Number(fraction[1]) / den
  } else {
    if (!/^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$/.test(s)) return null
    value = Number(s)
  }
  if (!Number.isFinite(value)) return null
  return percent ? value / 100 : value
}

// ---------------------------------------------------------------------------
// Expression parsing: tokenize -> shunting-yard -> RPN evaluation
// ---------------------------------------------------------------------------

type Token =
  | { kind: 'num'; value: number }
  | { kind: 'var'; name: string }
  | { kind: 'op'; op: '+' | '-' | '*' | '/' | '^' | 'neg' }
  | { kind: 'lparen' }
  | { kind: 'rparen' }

type RpnItem =
  | { kind: 'num'; value: number }
  | { kind: 'var'; name: string }
  | { kind: 'op'; op: '+' | '-' | '*' | '/' | '^' | 'neg' }

const CONSTANTS: Record<string, number> = { pi: Math.PI, e: Math.E }

export function tokenize(input: string): Token[] | null {
  const s = latexCleanup(input).replace(/\s+/g, '')
  if (!s) return null
  const out: Token[] = []
  let i = 0
  while (i < s.length) {
    const ch = s[i]
    if (ch === '(') {
      out.push({ kind: 'lparen' })
      i += 1
    } else if (ch === ')') {
      out.push({ kind: 'rparen' })
      i += 1
    } else if (ch === '+' || ch === '-' || ch === '*' || ch === '/' || ch === '^') {
      out.push({ kind: 'op', op: ch })
      i += 1
    } else if (/[0-9.]/.test(ch)) {
      let j = i
      while (j < s.length && /[0-9.]/.test(s[j])) j += 1
      const value = Number(s.slice(i, j))
      if (!Number.isFinite(value)) return null
      out.push({ kind: 'num', value })
      i = j
    } else if (/[a-zA-Z]/.test(ch)) {
      let j = i
      while (j < s.length && /[a-zA-Z]/.test(s[j])) j += 1
      out.push({ kind: 'var', name: s.slice(i, j) })
      i = j
    } else {
      return null
    }
  }
  return insertImplicitMultiplication(out)
}

function insertImplicitMultiplication(tokens: Token[]): Token[] {
  const out: Token[] = []
  for (const token of tokens) {
    const prev = out[out.length - 1]
    const prevIsValue = prev && (prev.kind === 'num' || prev.kind === 'var' || prev.kind === 'rparen')
    const startsValue = token.kind === 'num' || token.kind === 'var' || token.kind === 'lparen'
    if (prevIsValue && startsValue) {
      out.push({ kind: 'op', op: '*' })
    }
    out.push(token)
  }
  return out
}

const PRECEDENCE: Record<string, number> = { '+': 1, '-': 1, '*': 2, '/': 2, neg: 3, '^': 4 }
const RIGHT_ASSOC = new Set(['^', 'neg'])

export function toRpn(tokens: Token[]): RpnItem[] | null {
  const output: RpnItem[] = []
  const stack: Token[] = []
  let prev: Token | null = null
  for (const raw of tokens) {
    let token = raw
    // unary minus/plus at expression or group start
    if (token.kind === 'op' && (token.op === '-' || token.op === '+')) {
      const unary = !prev || prev.kind === 'lparen' || prev.kind === 'op'
      if (unary) {
        token = token.op === '-' ? { kind: 'op', op: 'neg' } : { kind: 'lparen' }
        if (token.kind === 'lparen') {
          // unary plus is a no-op
          prev = raw
          continue
        }
      }
    }
    if (token.kind === 'num' || token.kind === 'var') {
      output.push(token)
    } else if (token.kind === 'lparen') {
      stack.push(token)
    } else if (token.kind === 'rparen') {
      let matched = false
      while (stack.length) {
        const top = stack.pop()!
        if (top.kind === 'lparen') {
          matched = true
          break
        }
        output.push(top as RpnItem)
      }
      if (!matched) return null
    } else {
      const p = PRECEDENCE[token.op]
      while (stack.length) {
        const top = stack[stack.length - 1]
        if (top.kind !== 'op') break
        const tp = PRECEDENCE[top.op]
        if (tp > p || (tp === p && !RIGHT_ASSOC.has(token.op))) {
          output.push(stack.pop() as RpnItem)
        } else {
          break
        }
      }
      stack.push(token)
    }
    prev = raw
  }
  while (stack.length) {
    const top = stack.pop()!
    if (top.kind === 'lparen' || top.kind === 'rparen') return null
    output.push(top as RpnItem)
  }
  return output.length ? output : null
}

export function evaluateRpn(rpn: RpnItem[], bindings: Record<string, number>): number | null {
  const stack: number[] = []
  for (const item of rpn) {
    if (item.kind === 'num') {
      stack.push(item.value)
    } else if (item.kind === 'var') {
      const value = bindings[item.name] ?? CONSTANTS[item.name.toLowerCase()]
      if (value === undefined) return null
      stack.push(value)
    } else if (item.op === 'neg') {
      if (!stack.length) return null
      stack.push(-stack.pop()!)
    } else {
      if (stack.length < 2) return null
      const b = stack.pop()!
      const a = stack.pop()!
      let value: number
      switch (item.op) {
        case '+': value = a + b; break
        case '-': value = a - b; break
        case '*': value = a * b; break
        case '/': value = a / b; break
        case '^': value = Math.pow(a, b); break
      }
      stack.push(value!)
    }
  }
  return stack.length === 1 ? stack[0] : null
}

export function variablesOf(rpn: RpnItem[]): string[] {
  const names = new Set<string>()
  for (const item of rpn) {
    if (item.kind === 'var' && !(item.name.toLowerCase() in CONSTANTS)) {
      names.add(item.name)
    }
  }
  return [...names].sort()
}

function parseExpression(text: string): RpnItem[] | null {
  const tokens = tokenize(normalizeAnswer(text))
  if (!tokens) return null
  return toRpn(tokens)
}

function closeEnough(a: number, b: number): boolean {
  return Math.abs(a - b) <= NUMERIC_RTOL * Math.max(1, Math.abs(a), Math.abs(b))
}

// Sample offsets avoid integers to dodge obvious poles and symmetry accidents.
const GRID = [0.317, 1.613, -1.271, 2.237, -0.593, 3.449]

function sampleBindings(variables: string[], point: number): Record<string, number> {
  const bindings: Record<string, number> = {}
  variables.forEach((name, index) => {
    bindings[name] = GRID[point] + 0.0831 * (index + 1)
  })
  return bindings
}

export function mathEquivalent(gold: string, predicted: string): GradeResult {
  const a = normalizeAnswer(gold)
  const b = normalizeAnswer(predicted)
  if (!a || !b) return { equivalent: false, method: null, detail: 'empty-answer' }
  if (a.toLowerCase() === b.toLowerCase()) {
    return { equivalent: true, method: 'exact', detail: 'normalized strings match' }
  }

  const na = parseNumber(a)
  const nb = parseNumber(b)
  if (na !== null && nb !== null) {
    if (closeEnough(na, nb)) {
      return { equivalent: true, method: 'numeric', detail: `${na} ~ ${nb}` }
    }
    return { equivalent: false, method: null, detail: `numeric mismatch ${na} vs ${nb}` }
  }

  const ra = parseExpression(a)
  const rb = parseExpression(b)
  if (!ra || !rb) return { equivalent: false, method: null, detail: 'parse-failure' }

  const variables = [...new Set([...variablesOf(ra), ...variablesOf(rb)])].sort()
  if (variables.length === 0) {
    const va = evaluateRpn(ra, {})
    const vb = evaluateRpn(rb, {})
    if (va === null || vb === null || !Number.isFinite(va) || !Number.isFinite(vb)) {
      return { equivalent: false, method: null, detail: 'parse-failure' }
    }
    if (closeEnough(va, vb)) {
      return { equivalent: true, method: 'numeric', detail: `both evaluate to ${va}` }
    }
    return { equivalent: false, method: null, detail: `values differ: ${va} vs ${vb}` }
  }

  let usable = 0
  for (let point = 0; point < GRID.length; point++) {
    const bindings = sampleBindings(variables, point)
    const va = evaluateRpn(ra, bindings)
    const vb = evaluateRpn(rb, bindings)
    if (va === null || vb === null || !Number.isFinite(va) || !Number.isFinite(vb)) {
      continue
    }
    usable += 1
    if (!closeEnough(va, vb)) {
      return { equivalent: false, method: null, detail: `differs at sample point ${point}` }
    }
  }
  if (usable < 3) {
    return { equivalent: false, method: null, detail: 'insufficient-samples' }
  }
  return { equivalent: true, method: 'symbolic', detail: `difference vanished at ${usable} points` }
}

export function choiceEquivalent(gold: string, predicted: string): GradeResult {
  const ga = extractLetter(gold)
  const gb = extractLetter(predicted)
  if (!ga || !gb) return { equivalent: false, method: null, detail: 'parse-failure' }
  if (ga === gb) return { equivalent: true, method: 'exact', detail: `both choose ${ga}` }
  return { equivalent: false, method: null, detail: `${ga} vs ${gb}` }
}

function extractLetter(text: string): string | null {
  const stripped = text.replace(/[^0-9a-zA-Z]/g, '')
  if (stripped.length === 1 && /[a-dA-D]/.test(stripped)) return stripped.toUpperCase()
  return null
}

export function grade(gold: string, predicted: string, kind: string): GradeResult {
  try {
    if (kind === 'multiple_choice_letter') return choiceEquivalent(gold, predicted)
    return mathEquivalent(gold, predicted)
  } catch (err) {
    return { equivalent: false, method: null, detail: `parse-failure: ${String(err)}` }
  }
}
