/**
 * CLI: `extract --corpus tweets.jsonl --out DIR [--images DIR] ...`
 * Exit codes: 0 success, 1 usage error, 2 data error.
 */

import { pathToFileURL } from 'node:url'

import { makeImageEncoder, makeTextEncoder } from './encoders.js'
import { extract } from './extract.js'
import { FormatError } from './format.js'

const USAGE = `usage: featx-adapter extract --corpus tweets.jsonl --out DIR
                             [--images DIR]
                             [--text-encoder hash-ngram-v1] [--image-encoder byte-moments-v1]
                             [--dim-text 700] [--dim-image 1000] [--seed 0]`

interface Args {
  corpus: string
  out: string
  images?: string
  textEncoder: string
  imageEncoder: string
  dimText: number
  dimImage: number
  seed: number
}

class UsageError extends Error {}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== 'extract') {
    throw new UsageError(`unknown command "${argv[0] ?? ''}"`)
  }
  const flags = new Map<string, string>()
  for (let k = 1; k < argv.length; k += 2) {
    const flag = argv[k]
    const value = argv[k + 1]
    if (!flag.startsWith('--') || value === undefined) {
      throw new UsageError(`bad argument "${flag}"`)
    }
    flags.set(flag.slice(2), value)
  }
  const known = new Set([
    'corpus', 'out', 'images', 'text-encoder', 'image-encoder',
    'dim-text', 'dim-image', 'seed',
  ])
  for (const key of flags.keys()) {
    if (!known.has(key)) throw new UsageError(`unknown flag --${key}`)
  }
  const corpus = flags.get('corpus')
  const out = flags.get('out')
  if (!corpus || !out) throw new UsageError('--corpus and --out are required')

  const intFlag = (name: string, fallback: number): number => {
    const raw = flags.get(name)
    if (raw === undefined) return fallback
    const value = Number(raw)
    if (!Number.isInteger(value) || value <= 0) {
      throw new UsageError(`--${name} must be a positive integer`)
    }
    return value
  }

  return {
    corpus,
    out,
    images: flags.get('images'),
    textEncoder: flags.get('text-encoder') ?? 'hash-ngram-v1',
    imageEncoder: flags.get('image-encoder') ?? 'byte-moments-v1',
    dimText: intFlag('dim-text', 700),
    dimImage: intFlag('dim-image', 1000),
    seed: intFlag('seed', 1) - 1,
  }
}

export function main(argv: string[]): number {
  let args: Args
  try {
    args = parseArgs(argv)
  } catch (err) {
    process.stderr.write(`usage error: ${(err as Error).message}\n${USAGE}\n`)
    return 1
  }
  try {
    const report = extract({
      corpus: args.corpus,
      imagesDir: args.images,
      outDir: args.out,
      textEncoder: makeTextEncoder(args.textEncoder, args.dimText, args.seed),
      imageEncoder: makeImageEncoder(args.imageEncoder, args.dimImage, args.seed),
      dimText: args.dimText,
      dimImage: args.dimImage,
    })
    process.stdout.write(
      `wrote ${report.textRecords} text and ${report.imageRecords} image records ` +
        `to ${args.out}` +
        (report.skipped.length ? ` (${report.skipped.length} skipped)` : '') +
        '\n',
    )
    return 0
  } catch (err) {
    if (err instanceof FormatError) {
      process.stderr.write(`data error: ${err.message}\n`)
      return 2
    }
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 2
  }
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? '').href) {
  process.exit(main(process.argv.slice(2)))
}
