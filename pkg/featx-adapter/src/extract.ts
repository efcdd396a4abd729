/**
 * The batch extraction pipeline: corpus in, feature-store files out.
 *
 * Every tweet id gets a text record; every image_ref whose file is readable
 * gets an image record. Unreadable media are skipped and logged, never
 * zero-filled. Nothing is written until every record has been produced at
 * the configured dimensions.
 */

import { readFileSync, readdirSync } from 'node:fs'
import { join } from 'node:path'

import type { ImageEncoder, TextEncoder } from './encoders.js'
import {
  AdapterManifest, FeatureStore, FormatError, readCorpus, writeAdapterManifest,
  writeStore,
} from './format.js'

export interface ExtractOptions {
  corpus: string
  imagesDir?: string
  outDir: string
  textEncoder: TextEncoder
  imageEncoder: ImageEncoder
  dimText: number
  dimImage: number
  log?: (line: string) => void
}

export interface ExtractReport {
  textRecords: number
  imageRecords: number
  skipped: string[]
}

function resolveImageFile(imagesDir: string, imageRef: string): string | undefined {
  const direct = join(imagesDir, imageRef)
  try {
    readFileSync(direct)
    return direct
  } catch {
    // fall through to extension search
  }
  let entries: string[]
  try {
    entries = readdirSync(imagesDir)
  } catch {
    return undefined
  }
  const match = entries.filter((e) => e.startsWith(`${imageRef}.`)).sort()[0]
  return match ? join(imagesDir, match) : undefined
}

export function extract(options: ExtractOptions): ExtractReport {
  const log = options.log ?? ((line: string) => process.stderr.write(line + '\n'))
  const tweets = readCorpus(options.corpus)

  const store: FeatureStore = {
    dimU: options.dimText,
    dimB: options.dimText,
    dimI: options.dimImage,
    text: new Map(),
    images: new Map(),
  }
  const skipped: string[] = []

  for (const tweet of tweets) {
    const encoded = options.textEncoder.encode(tweet.text)
    if (encoded.u.length !== options.dimText || encoded.b.length !== options.dimText) {
      throw new FormatError(
        `text encoder ${options.textEncoder.name} produced dim ` +
          `${encoded.u.length}, configured ${options.dimText}`,
      )
    }
    store.text.set(tweet.id, encoded)
  }

  for (const tweet of tweets) {
    if (!tweet.image || store.images.has(tweet.image)) continue
    const file = options.imagesDir
      ? resolveImageFile(options.imagesDir, tweet.image)
      : undefined
    if (!file) {
      skipped.push(tweet.image)
      log(`skipped ${tweet.image}: no readable file`)
      continue
    }
    let vector: number[]
    try {
      vector = options.imageEncoder.encode(readFileSync(file))
    } catch (err) {
      skipped.push(tweet.image)
      log(`skipped ${tweet.image}: ${(err as Error).message}`)
      continue
    }
    if (vector.length !== options.dimImage) {
      throw new FormatError(
        `image encoder ${options.imageEncoder.name} produced dim ` +
          `${vector.length}, configured ${options.dimImage}`,
      )
    }
    store.images.set(tweet.image, vector)
  }

  writeStore(store, options.outDir)
  const manifest: AdapterManifest = {
    textEncoder: options.textEncoder.name,
    imageEncoder: options.imageEncoder.name,
    dimText: options.dimText,
    dimImage: options.dimImage,
    corpus: options.corpus,
    imagesDir: options.imagesDir,
    skipped,
  }
  writeAdapterManifest(manifest, options.outDir)
  return {
    textRecords: store.text.size,
    imageRecords: store.images.size,
    skipped,
  }
}
