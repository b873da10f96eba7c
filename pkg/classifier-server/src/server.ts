/**
 * Newline-delimited JSON request loop over stdin/stdout.
 *
 * On start the server emits {"hello":{"name":...,"classes":...}} and then
 * answers each {"id","width","height","images":[base64 RGB8,...]} request
 * with {"id","probs":[[...],...]}. Requests are strictly sequential. A
 * malformed request produces {"id":...,"error":...} and exit code 1; a clean
 * close of stdin ends the process with exit code 0. Stdout carries protocol
 * JSON only; diagnostics go to stderr.
 */

import { createInterface } from 'node:readline';
import type { ServerModel } from './model.js';

class RequestError extends Error {
  constructor(public requestId: number | null, message: string) {
    super(message);
  }
}

function asRecord(value: unknown): Record<string, unknown> {
  if (typeof value !== 'object' || value === null || Array.isArray(value)) {
    throw new RequestError(null, 'request is not a JSON object');
  }
  return value as Record<string, unknown>;
}

function requestId(req: Record<string, unknown>): number | null {
  return typeof req.id === 'number' && Number.isInteger(req.id) ? req.id : null;
}

function handleLine(model: ServerModel, line: string): string {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new RequestError(null, 'unparseable JSON request');
  }
  const req = asRecord(parsed);
  const id = requestId(req);
  if (id === null) {
    throw new RequestError(null, 'missing integer "id"');
  }
  const width = req.width;
  const height = req.height;
  if (typeof width !== 'number' || !Number.isInteger(width) || width < 1) {
    throw new RequestError(id, 'missing positive integer "width"');
  }
  if (typeof height !== 'number' || !Number.isInteger(height) || height < 1) {
    throw new RequestError(id, 'missing positive integer "height"');
  }
  const images = req.images;
  if (!Array.isArray(images) || images.length === 0) {
    throw new RequestError(id, '"images" must be a non-empty array');
  }
  const expected = width * height * 3;
  const probs: number[][] = [];
  for (const entry of images) {
    if (typeof entry !== 'string') {
      throw new RequestError(id, 'image entries must be base64 strings');
    }
    const raw = Buffer.from(entry, 'base64');
    if (raw.length !== expected) {
      throw new RequestError(id, `image has ${raw.length} bytes, expected ${expected}`);
    }
    probs.push(model.predict(raw, width, height));
  }
  return JSON.stringify({ id, probs });
}

export function serve(model: ServerModel): void {
  process.stdout.write(
    JSON.stringify({ hello: { name: model.name, classes: model.classCount } }) + '\n'
  );
  const lines = createInterface({ input: process.stdin, terminal: false });
  lines.on('line', (line) => {
    if (line.trim() === '') {
      return;
    }
    try {
      process.stdout.write(handleLine(model, line) + '\n');
    } catch (err) {
      const requestErr = err instanceof RequestError ? err : new RequestError(null, String(err));
      process.stdout.write(
        JSON.stringify({ id: requestErr.requestId, error: requestErr.message }) + '\n'
      );
      process.stderr.write(`classifier-server: ${requestErr.message}\n`);
      process.exit(1);
    }
  });
  // stdin closing ends the readline loop and the process exits 0 naturally
}
