import { execFileSync, spawnSync } from 'node:child_process'
import { mkdirSync, mkdtempSync, readFileSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { describe, expect, it } from 'vitest'

import { makeImageEncoder, makeTextEncoder } from '../src/encoders.js'
import { extract } from '../src/extract.js'
import { readCorpus, writeStore, FormatError } from '../src/format.js'

function tempDir(): string {
  return mkdtempSync(join(tmpdir(), 'featx-'))
}

function writeFixtureCorpus(dir: string): string {
  const lines = [
    JSON.stringify({ format: 'tweets', version: 1, count: 4 }),
    JSON.stringify({ id: 't1', author: 'a', text: 'quantum notes today', image: 'im1', retweet: false }),
    JSON.stringify({ id: 't2', author: 'b', text: 'lunar rover progress', image: 'im2', retweet: false }),
    JSON.stringify({ id: 't3', author: 'a', text: 'no image on this one', retweet: false }),
    JSON.stringify({ id: 't4', author: 'c', text: 'broken media here', image: 'im404', retweet: false }),
  ]
  const path = join(dir, 'tweets.jsonl')
  writeFileSync(path, lines.join('\n') + '\n')
  return path
}

function writeFixtureImages(dir: string): string {
  const imagesDir = join(dir, 'images')
  mkdirSync(imagesDir)
  writeFileSync(join(imagesDir, 'im1.ppm'), Buffer.from('P6\n2 2\n255\n' + 'x'.repeat(12)))
  writeFileSync(join(imagesDir, 'im2.bin'), Buffer.from([9, 8, 7, 6, 5]))
  return imagesDir
}

function options(dir: string, overrides: Partial<Parameters<typeof extract>[0]> = {}) {
  return {
    corpus: writeFixtureCorpus(dir),
    imagesDir: writeFixtureImages(dir),
    outDir: join(dir, 'store'),
    textEncoder: makeTextEncoder('hash-ngram-v1', 12, 0),
    imageEncoder: makeImageEncoder('byte-moments-v1', 10, 0),
    dimText: 12,
    dimImage: 10,
    log: () => {},
    ...overrides,
  }
}

describe('readCorpus', () => {
  it('parses the manifest-headed format', () => {
    const dir = tempDir()
    const tweets = readCorpus(writeFixtureCorpus(dir))
    expect(tweets).toHaveLength(4)
    expect(tweets[0]).toEqual(
      { id: 't1', author: 'a', text: 'quantum notes today', image: 'im1', retweet: false },
    )
    expect(tweets[2].image).toBeUndefined()
  })

  it('rejects duplicates and broken lines', () => {
    const dir = tempDir()
    const path = join(dir, 'bad.jsonl')
    writeFileSync(path, '{"id":"t1","author":"a","text":"x"}\n{"id":"t1","author":"a","text":"y"}\n')
    expect(() => readCorpus(path)).toThrow(/duplicate tweet id/)
    writeFileSync(path, '{nope\n')
    expect(() => readCorpus(path)).toThrow(/invalid JSON/)
  })
})

describe('extract', () => {
  it('covers every tweet id and every readable image_ref', () => {
    const dir = tempDir()
    const report = extract(options(dir))
    expect(report.textRecords).toBe(4)
    expect(report.imageRecords).toBe(2)
    expect(report.skipped).toEqual(['im404'])

    const records = readFileSync(join(dir, 'store', 'records.jsonl'), 'utf-8')
      .trim().split('\n').map((line) => JSON.parse(line))
    expect(records.map((r) => r.key)).toEqual(['t1', 't2', 't3', 't4'])
    for (const record of records) {
      expect(record.u).toHaveLength(12)
      expect(record.b).toHaveLength(12)
    }
    const images = readFileSync(join(dir, 'store', 'images.jsonl'), 'utf-8')
      .trim().split('\n').map((line) => JSON.parse(line))
    expect(images.map((r) => r.key)).toEqual(['im1', 'im2'])

    const manifest = JSON.parse(readFileSync(join(dir, 'store', 'manifest.json'), 'utf-8'))
    expect(manifest).toEqual({ count: 6, dim_b: 12, dim_i: 10, dim_u: 12 })
  })

  it('skipped media are logged, never zero-filled', () => {
    const dir = tempDir()
    const logged: string[] = []
    extract(options(dir, { log: (line) => logged.push(line) }))
    expect(logged.some((line) => line.includes('im404'))).toBe(true)
    const images = readFileSync(join(dir, 'store', 'images.jsonl'), 'utf-8')
    expect(images).not.toContain('im404')
  })

  it('records the encoders and dims in the adapter manifest', () => {
    const dir = tempDir()
    extract(options(dir))
    const adapter = JSON.parse(readFileSync(join(dir, 'store', 'adapter.json'), 'utf-8'))
    expect(adapter.text_encoder).toBe('hash-ngram-v1/d12/s0')
    expect(adapter.image_encoder).toBe('byte-moments-v1/d10/s0')
    expect(adapter.dim_text).toBe(12)
    expect(adapter.dim_image).toBe(10)
    expect(adapter.skipped).toEqual(['im404'])
  })

  it('re-extraction is byte-identical', () => {
    const dir = tempDir()
    const opts = options(dir)
    extract(opts)
    const first = readFileSync(join(dir, 'store', 'records.jsonl'))
    extract(opts)
    expect(readFileSync(join(dir, 'store', 'records.jsonl')).equals(first)).toBe(true)
  })

  it('dim mismatch is a hard error before writing', () => {
    const dir = tempDir()
    const opts = options(dir, { dimText: 99 })
    expect(() => extract(opts)).toThrow(FormatError)
    expect(() => readFileSync(join(dir, 'store', 'manifest.json'))).toThrow()
  })

  it('without an images dir, all image refs are skipped', () => {
    const dir = tempDir()
    const report = extract(options(dir, { imagesDir: undefined }))
    expect(report.imageRecords).toBe(0)
    expect(report.skipped.sort()).toEqual(['im1', 'im2', 'im404'])
  })
})

describe('writeStore validation', () => {
  it('rejects rows that disagree with the manifest dims', () => {
    const dir = tempDir()
    expect(() =>
      writeStore(
        {
          dimU: 4, dimB: 4, dimI: 4,
          text: new Map([['t1', { u: [1, 2, 3], b: [1, 2, 3, 4] }]]),
          images: new Map(),
        },
        join(dir, 'store'),
      ),
    ).toThrow(/dims/)
  })
})

describe('cli', () => {
  const cliPath = join(__dirname, '..', 'dist', 'cli.js')

  it('extracts end to end and validates against the engine when available', () => {
    const dir = tempDir()
    const corpus = writeFixtureCorpus(dir)
    const imagesDir = writeFixtureImages(dir)
    const storeDir = join(dir, 'store')
    const stdout = execFileSync('node', [
      cliPath, 'extract', '--corpus', corpus, '--images', imagesDir,
      '--out', storeDir, '--dim-text', '16', '--dim-image', '8',
    ]).toString()
    expect(stdout).toContain('4 text and 2 image records')

    const probe = spawnSync('python3', ['-c', 'import melkit'])
    if (probe.status === 0) {
      const check = spawnSync('python3', ['-m', 'melkit', 'features',
                                          '--validate', storeDir])
      expect(check.status).toBe(0)
    }
  })

  it('usage errors exit 1, data errors exit 2', () => {
    const missing = spawnSync('node', [cliPath, 'extract', '--corpus', '/nope.jsonl',
                                       '--out', tempDir()])
    expect(missing.status).toBe(2)
    const usage = spawnSync('node', [cliPath, 'extract', '--banana', 'x'])
    expect(usage.status).toBe(1)
    const noCmd = spawnSync('node', [cliPath, 'shrink'])
    expect(noCmd.status).toBe(1)
  })
})
