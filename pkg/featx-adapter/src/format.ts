/**
 * Corpus reading and feature-store writing.
 *
 * The store layout matches the linking engine exactly: manifest.json with
 * {dim_u, dim_b, dim_i, count}, records.jsonl keyed by tweet id with "u" and
 * "b" float arrays, images.jsonl keyed by image_ref with an "i" array.
 * Files are written atomically (temp file + rename) and keys are sorted so
 * re-extraction is byte-reproducible.
 */

import { mkdirSync, readFileSync, renameSync, writeFileSync } from 'node:fs'
import { join } from 'node:path'

export interface CorpusTweet {
  id: string
  author: string
  text: string
  image?: string
  retweet: boolean
}

export interface FeatureStore {
  dimU: number
  dimB: number
  dimI: number
  text: Map<string, { u: number[]; b: number[] }>
  images: Map<string, number[]>
}

export class FormatError extends Error {}

export function readCorpus(path: string): CorpusTweet[] {
  let raw: string
  try {
    raw = readFileSync(path, 'utf-8')
  } catch (err) {
    throw new FormatError(`${path}: ${(err as Error).message}`)
  }
  const tweets: CorpusTweet[] = []
  const seen = new Set<string>()
  const lines = raw.split('\n')
  for (let lineno = 1; lineno <= lines.length; lineno++) {
    const line = lines[lineno - 1].trim()
    if (!line) continue
    let obj: Record<string, unknown>
    try {
      obj = JSON.parse(line)
    } catch {
      throw new FormatError(`${path}:${lineno}: invalid JSON`)
    }
    if (lineno === 1 && typeof obj.format === 'string') {
      if (obj.format !== 'tweets') {
        throw new FormatError(`${path}:1: manifest format ${obj.format}, expected "tweets"`)
      }
      continue
    }
    for (const field of ['id', 'author', 'text']) {
      if (typeof obj[field] !== 'string') {
        throw new FormatError(`${path}:${lineno}: missing field "${field}"`)
      }
    }
    const tweet: CorpusTweet = {
      id: obj.id as string,
      author: obj.author as string,
      text: obj.text as string,
      retweet: Boolean(obj.retweet),
    }
    if (typeof obj.image === 'string') tweet.image = obj.image
    if (seen.has(tweet.id)) {
      throw new FormatError(`${path}:${lineno}: duplicate tweet id ${tweet.id}`)
    }
    seen.add(tweet.id)
    tweets.push(tweet)
  }
  return tweets
}

function writeAtomic(path: string, content: string): void {
  const tmp = `${path}.tmp`
  writeFileSync(tmp, content, 'utf-8')
  renameSync(tmp, path)
}

export function writeStore(store: FeatureStore, outDir: string): void {
  for (const [key, rec] of store.text) {
    if (rec.u.length !== store.dimU || rec.b.length !== store.dimB) {
      throw new FormatError(
        `text record ${key} has dims (${rec.u.length}, ${rec.b.length}), ` +
          `manifest says (${store.dimU}, ${store.dimB})`,
      )
    }
  }
  for (const [key, vec] of store.images) {
    if (vec.length !== store.dimI) {
      throw new FormatError(
        `image record ${key} has dim ${vec.length}, manifest says ${store.dimI}`,
      )
    }
  }
  mkdirSync(outDir, { recursive: true })
  const manifest = {
    count: store.text.size + store.images.size,
    dim_b: store.dimB,
    dim_i: store.dimI,
    dim_u: store.dimU,
  }
  writeAtomic(join(outDir, 'manifest.json'), JSON.stringify(manifest) + '\n')

  const textLines = [...store.text.keys()].sort().map((key) => {
    const rec = store.text.get(key)!
    return JSON.stringify({ key, u: rec.u, b: rec.b })
  })
  writeAtomic(join(outDir, 'records.jsonl'),
    textLines.length ? textLines.join('\n') + '\n' : '')

  const imageLines = [...store.images.keys()].sort().map((key) =>
    JSON.stringify({ key, i: store.images.get(key)! }),
  )
  writeAtomic(join(outDir, 'images.jsonl'),
    imageLines.length ? imageLines.join('\n') + '\n' : '')
}

/** Adapter metadata sidecar: encoders, versions, dims, and input paths. */
export interface AdapterManifest {
  textEncoder: string
  imageEncoder: string
  dimText: number
  dimImage: number
  corpus: string
  imagesDir?: string
  skipped: string[]
}

export function writeAdapterManifest(manifest: AdapterManifest, outDir: string): void {
  const obj = {
    corpus: manifest.corpus,
    dim_image: manifest.dimImage,
    dim_text: manifest.dimText,
    image_encoder: manifest.imageEncoder,
    images_dir: manifest.imagesDir ?? null,
    skipped: [...manifest.skipped].sort(),
    text_encoder: manifest.textEncoder,
  }
  writeAtomic(join(outDir, 'adapter.json'), JSON.stringify(obj, null, 2) + '\n')
}
