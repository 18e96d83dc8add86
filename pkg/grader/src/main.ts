/**
 * Line-protocol worker: one JSON handshake line on startup, then one JSON
 * response line per JSON request line on stdin.
 *
 * Request:  {"gold": string, "predicted": string, "kind": string}
 * Response: {"equivalent": boolean, "method": "exact"|"numeric"|"symbolic"|null, "detail": string}
 *
 * A malformed request gets an equivalent=false response; the worker never
 * crashes on input.
 */

import * as readline from 'readline'

import { grade } from './equivalence'

const PROTOCOL = 'grade-v1'

function respond(payload: object): void {
  process.stdout.write(JSON.stringify(payload) + '\n')
}

function handleLine(line: string): void {
  if (!line.trim()) return
  let request: { gold?: unknown; predicted?: unknown; kind?: unknown }
  try {
    request = JSON.parse(line)
  } catch {
    respond({ equivalent: false, method: null, detail: 'bad-request: invalid JSON' })
    return
  }
  const { gold, predicted, kind } = request
  if (typeof gold !== 'string' || typeof predicted !== 'string' || !gold || !predicted) {
    respond({ equivalent: false, method: null, detail: 'bad-request: gold and predicted required' })
    return
  }
  respond(grade(gold, predicted, typeof kind === 'string' ? kind : 'math_boxed'))
}

function main(): void {
  respond({ protocol: PROTOCOL, name: 'grader', version: '0.1.0' })
  const rl = readline.createInterface({ input: process.stdin, terminal: false })
  rl.on('line', handleLine)
}

main()
